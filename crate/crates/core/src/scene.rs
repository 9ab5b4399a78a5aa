//! Synthetic city scenes with analytically exact geocentric pose.
//!
//! An oblique orthographic camera displaces every above-ground point along a
//! single flow direction: a point at height `h` moves by `scale * h` pixels,
//! so the rendered roof of each building is its footprint translated by the
//! flow vector, and the swept region in between is the visible wall. The
//! angle convention is fixed here once: the flow direction is measured from
//! the image up-axis, rotating clockwise in image coordinates (y grows
//! downward), i.e. `dx = m sin(angle)`, `dy = -m cos(angle)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{City, DatasetRecord, ElevationMask, GeoPoseLabel, RgbImage};
use crate::error::{Error, Result};

/// Axis-aligned building footprint in ground pixels (half-open extents),
/// with its height and colors.
#[derive(Debug, Clone)]
pub struct Building {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub height_cm: f64,
    pub roof_color: [u8; 3],
    pub wall_color: [u8; 3],
}

/// Parametric scene: canvas, ground color, buildings.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub ground_color: [u8; 3],
    pub buildings: Vec<Building>,
    pub seed: u64,
}

/// Camera parameters: flow angle in `[0, 2pi)` and magnification scale in
/// pixels per centimeter of height.
#[derive(Debug, Clone, Copy)]
pub struct CameraPose {
    pub angle_rad: f64,
    pub scale_px_per_cm: f64,
}

/// Image-plane displacement of a point at the given height.
pub fn flow_vector(height_cm: f64, pose: &CameraPose) -> (f64, f64) {
    let m = pose.scale_px_per_cm * height_cm;
    (m * pose.angle_rad.sin(), -m * pose.angle_rad.cos())
}

/// t-range where `lo <= p - t*d <= hi`; `None` when empty for d == 0.
fn axis_interval(p: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if d == 0.0 {
        if lo <= p && p <= hi {
            Some((f64::NEG_INFINITY, f64::INFINITY))
        } else {
            None
        }
    } else {
        let a = (p - hi) / d;
        let b = (p - lo) / d;
        Some(if a <= b { (a, b) } else { (b, a) })
    }
}

fn shade(color: [u8; 3], t: f64) -> [u8; 3] {
    let f = 0.55 + 0.35 * t;
    [
        (f64::from(color[0]) * f).round() as u8,
        (f64::from(color[1]) * f).round() as u8,
        (f64::from(color[2]) * f).round() as u8,
    ]
}

/// Renders a scene under a camera pose.
///
/// Buildings are drawn in ascending height order (painter's algorithm,
/// taller-later). Roof pixels carry the building height; wall pixels carry
/// the height linearly interpolated along the flow from 0 at the base;
/// ground is 0. The returned label is the pose itself.
pub fn render_scene(
    spec: &SceneSpec,
    pose: &CameraPose,
) -> Result<(RgbImage, ElevationMask, GeoPoseLabel)> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::invalid("render_scene: empty canvas".to_string()));
    }
    if !(pose.scale_px_per_cm >= 0.0) || !pose.angle_rad.is_finite() {
        return Err(Error::invalid(format!(
            "render_scene: bad pose scale={} angle={}",
            pose.scale_px_per_cm, pose.angle_rad
        )));
    }
    for (i, b) in spec.buildings.iter().enumerate() {
        if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > w || b.y1 > h {
            return Err(Error::invalid(format!(
                "render_scene: building {} footprint [{},{})x[{},{}) outside {}x{} canvas",
                i, b.x0, b.x1, b.y0, b.y1, w, h
            )));
        }
        if !(b.height_cm > 0.0) {
            return Err(Error::invalid(format!(
                "render_scene: building {} height must be positive",
                i
            )));
        }
        let (dx, dy) = flow_vector(b.height_cm, pose);
        let roof_x0 = f64::from(b.x0) + dx;
        let roof_x1 = f64::from(b.x1) + dx;
        let roof_y0 = f64::from(b.y0) + dy;
        let roof_y1 = f64::from(b.y1) + dy;
        if roof_x0 < 0.0 || roof_y0 < 0.0 || roof_x1 > f64::from(w) || roof_y1 > f64::from(h) {
            return Err(Error::invalid(format!(
                "render_scene: building {} displaced roof ({:.1},{:.1})..({:.1},{:.1}) exceeds the canvas margin",
                i, roof_x0, roof_y0, roof_x1, roof_y1
            )));
        }
    }

    let mut rgb = RgbImage::new(w, h);
    for px in rgb.pixels.chunks_exact_mut(3) {
        px.copy_from_slice(&spec.ground_color);
    }
    let mut mask = ElevationMask::new(w, h);

    let mut order: Vec<usize> = (0..spec.buildings.len()).collect();
    order.sort_by(|&a, &b| {
        spec.buildings[a]
            .height_cm
            .partial_cmp(&spec.buildings[b].height_cm)
            .unwrap()
    });

    for &bi in &order {
        let b = &spec.buildings[bi];
        let (dx, dy) = flow_vector(b.height_cm, pose);
        let (fx0, fx1) = (f64::from(b.x0), f64::from(b.x1));
        let (fy0, fy1) = (f64::from(b.y0), f64::from(b.y1));
        // Pixels possibly touched: bbox of footprint union roof, inflated by 1.
        let x_lo = (fx0.min(fx0 + dx).floor() as i64 - 1).max(0) as u32;
        let x_hi = ((fx1.max(fx1 + dx).ceil() as i64) + 1).min(i64::from(w)) as u32;
        let y_lo = (fy0.min(fy0 + dy).floor() as i64 - 1).max(0) as u32;
        let y_hi = ((fy1.max(fy1 + dy).ceil() as i64) + 1).min(i64::from(h)) as u32;
        for iy in y_lo..y_hi {
            let py = f64::from(iy) + 0.5;
            for ix in x_lo..x_hi {
                let px = f64::from(ix) + 0.5;
                let idx = (iy * w + ix) as usize;
                // Roof test at t = 1, half-open like the footprint.
                let rx = px - dx;
                let ry = py - dy;
                if rx >= fx0 && rx < fx1 && ry >= fy0 && ry < fy1 {
                    rgb.pixels[3 * idx..3 * idx + 3].copy_from_slice(&b.roof_color);
                    mask.values[idx] = b.height_cm as f32;
                    continue;
                }
                // Wall: highest t in [0,1] whose cross-section covers the pixel.
                let Some((tx0, tx1)) = axis_interval(px, dx, fx0, fx1) else {
                    continue;
                };
                let Some((ty0, ty1)) = axis_interval(py, dy, fy0, fy1) else {
                    continue;
                };
                let t_lo = tx0.max(ty0).max(0.0);
                let t_hi = tx1.min(ty1).min(1.0);
                if t_lo <= t_hi {
                    let t = t_hi;
                    rgb.pixels[3 * idx..3 * idx + 3].copy_from_slice(&shade(b.wall_color, t));
                    mask.values[idx] = (b.height_cm * t) as f32;
                }
            }
        }
    }

    Ok((
        rgb,
        mask,
        GeoPoseLabel {
            scale_px_per_cm: pose.scale_px_per_cm,
            angle_rad: pose.angle_rad,
        },
    ))
}

/// Knobs for synthetic dataset generation. Scales are drawn log-uniform in
/// `scale_band`, angles uniform in `[0, 2pi)`.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub n: usize,
    pub size: u32,
    pub seed: u64,
    /// Fraction of records that get NaN blobs injected into the mask.
    pub nan_fraction: f64,
    /// Fraction of records that get implausible elevation spikes (Atlanta).
    pub outlier_fraction: f64,
    /// Pixels per centimeter, log-uniform band.
    pub scale_band: (f64, f64),
    /// Building heights in centimeters.
    pub height_band: (f64, f64),
    /// Buildings per scene (inclusive band).
    pub buildings: (usize, usize),
    /// Footprint edge lengths in pixels (inclusive band).
    pub footprint: (u32, u32),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 512,
            size: 64,
            seed: 7,
            nan_fraction: 0.1,
            outlier_fraction: 0.05,
            scale_band: (0.015, 0.04),
            height_band: (250.0, 550.0),
            buildings: (2, 5),
            footprint: (10, 20),
        }
    }
}

impl GeneratorConfig {
    /// Defaults with the displacement and footprint bands scaled to the
    /// canvas, so scenes at any size keep the 64-px benchmark's geometry.
    pub fn for_size(size: u32) -> GeneratorConfig {
        let f = f64::from(size) / 64.0;
        let base = GeneratorConfig::default();
        GeneratorConfig {
            size,
            scale_band: (base.scale_band.0 * f, base.scale_band.1 * f),
            footprint: (
                ((10.0 * f).round() as u32).max(3),
                ((20.0 * f).round() as u32).max(5),
            ),
            ..base
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Seed for record `i`, independent of generation order.
pub fn record_seed(master_seed: u64, i: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(i as u64 + 1))
}

const ROOF_PALETTE: [[u8; 3]; 8] = [
    [206, 74, 74],
    [222, 140, 58],
    [196, 186, 64],
    [96, 176, 88],
    [70, 160, 170],
    [86, 108, 190],
    [150, 86, 186],
    [198, 96, 150],
];

/// Generates one record deterministically from its derived seed.
pub fn make_record(cfg: &GeneratorConfig, index: usize) -> Result<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(cfg.seed, index));
    let size = cfg.size;

    let scale = {
        let (lo, hi) = cfg.scale_band;
        (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
    };
    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
    let pose = CameraPose {
        angle_rad: angle,
        scale_px_per_cm: scale,
    };
    let (dir_x, dir_y) = (angle.sin(), -angle.cos());

    let n_buildings = rng.gen_range(cfg.buildings.0..=cfg.buildings.1);
    let mut buildings = Vec::with_capacity(n_buildings);
    for b in 0..n_buildings {
        let height = rng.gen_range(cfg.height_band.0..cfg.height_band.1);
        let disp = scale * height;
        // Directional margins keep the displaced roof on canvas.
        let margin_neg_x = (-disp * dir_x).max(0.0).ceil() as u32 + 1;
        let margin_pos_x = (disp * dir_x).max(0.0).ceil() as u32 + 1;
        let margin_neg_y = (-disp * dir_y).max(0.0).ceil() as u32 + 1;
        let margin_pos_y = (disp * dir_y).max(0.0).ceil() as u32 + 1;
        let max_w = size.saturating_sub(margin_neg_x + margin_pos_x);
        let max_h = size.saturating_sub(margin_neg_y + margin_pos_y);
        if max_w < cfg.footprint.0 || max_h < cfg.footprint.0 {
            return Err(Error::invalid(format!(
                "make_record: canvas {} too small for displacement {:.1}px plus footprint {}",
                size, disp, cfg.footprint.0
            )));
        }
        let fw = rng.gen_range(cfg.footprint.0..=cfg.footprint.1.min(max_w));
        let fh = rng.gen_range(cfg.footprint.0..=cfg.footprint.1.min(max_h));
        let x0 = rng.gen_range(margin_neg_x..=size - margin_pos_x - fw);
        let y0 = rng.gen_range(margin_neg_y..=size - margin_pos_y - fh);
        let roof_color = ROOF_PALETTE[(index * 3 + b) % ROOF_PALETTE.len()];
        let wall_color = [
            (f64::from(roof_color[0]) * 0.8) as u8,
            (f64::from(roof_color[1]) * 0.8) as u8,
            (f64::from(roof_color[2]) * 0.8) as u8,
        ];
        buildings.push(Building {
            x0,
            y0,
            x1: x0 + fw,
            y1: y0 + fh,
            height_cm: height,
            roof_color,
            wall_color,
        });
    }
    let ground = 38 + (rng.gen::<u8>() % 24);
    let spec = SceneSpec {
        width: size,
        height: size,
        ground_color: [ground, ground + 8, ground],
        buildings,
        seed: record_seed(cfg.seed, index),
    };
    let (rgb, mut mask, label) = render_scene(&spec, &pose)?;

    let inject_outliers = rng.gen::<f64>() < cfg.outlier_fraction;
    let inject_nan = rng.gen::<f64>() < cfg.nan_fraction;
    let city = if inject_outliers {
        City::Atlanta
    } else {
        City::ALL[rng.gen_range(0..City::ALL.len())]
    };
    if inject_outliers {
        // Implausible spikes, few enough that the Atlanta rule repairs them.
        let count = rng.gen_range(3..=40);
        for _ in 0..count {
            let p = rng.gen_range(0..mask.values.len());
            mask.values[p] = rng.gen_range(4500.0..9000.0);
        }
    }
    if inject_nan {
        let blobs = rng.gen_range(1..=3);
        for _ in 0..blobs {
            let cx = rng.gen_range(0..size) as i64;
            let cy = rng.gen_range(0..size) as i64;
            let r = rng.gen_range(2..=5) as i64;
            for y in (cy - r).max(0)..(cy + r + 1).min(i64::from(size)) {
                for x in (cx - r).max(0)..(cx + r + 1).min(i64::from(size)) {
                    if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                        mask.values[(y * i64::from(size) + x) as usize] = f32::NAN;
                    }
                }
            }
        }
    }

    let has_nan = mask.has_nan();
    Ok(DatasetRecord {
        id: format!("img{:04}", index),
        city,
        rgb,
        elevation: mask,
        label,
        has_nan,
    })
}

/// Generates `cfg.n` records. Deterministic for a fixed seed; records are
/// independent, so callers may fan the work out and reassemble by index.
pub fn make_dataset(cfg: &GeneratorConfig) -> Result<Vec<DatasetRecord>> {
    if cfg.n == 0 {
        return Err(Error::invalid("make_dataset: n must be at least 1".to_string()));
    }
    (0..cfg.n).map(|i| make_record(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::save_dataset;
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    fn single_building_spec(size: u32, fp: (u32, u32, u32, u32), height: f64) -> SceneSpec {
        SceneSpec {
            width: size,
            height: size,
            ground_color: [40, 48, 40],
            buildings: vec![Building {
                x0: fp.0,
                y0: fp.1,
                x1: fp.2,
                y1: fp.3,
                height_cm: height,
                roof_color: [200, 60, 60],
                wall_color: [120, 40, 40],
            }],
            seed: 0,
        }
    }

    /// Centroid of pixels matching a color exactly.
    fn color_centroid(img: &RgbImage, color: [u8; 3]) -> Option<(f64, f64)> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for y in 0..img.height {
            for x in 0..img.width {
                let i = ((y * img.width + x) * 3) as usize;
                if img.pixels[i..i + 3] == color {
                    sx += f64::from(x) + 0.5;
                    sy += f64::from(y) + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    #[test]
    fn flow_vector_zero_height_and_axis_case() {
        let pose = CameraPose {
            angle_rad: 1.234,
            scale_px_per_cm: 0.5,
        };
        assert_eq!(flow_vector(0.0, &pose), (0.0, 0.0));

        let up = CameraPose {
            angle_rad: 0.0,
            scale_px_per_cm: 0.5,
        };
        let (dx, dy) = flow_vector(100.0, &up);
        assert_eq!((dx, dy), (0.0, -50.0));
    }

    #[test]
    fn flow_vector_magnitude_inverts_to_scale_exactly() {
        let pose = CameraPose {
            angle_rad: 2.1,
            scale_px_per_cm: 0.037,
        };
        let h = 412.5;
        let (dx, dy) = flow_vector(h, &pose);
        let recovered = (dx * dx + dy * dy).sqrt() / h;
        assert!((recovered - pose.scale_px_per_cm).abs() <= 1e-15);
    }

    #[test]
    fn empty_scene_is_flat_ground() {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            ground_color: [10, 20, 30],
            buildings: vec![],
            seed: 0,
        };
        let pose = CameraPose {
            angle_rad: 1.0,
            scale_px_per_cm: 0.02,
        };
        let (rgb, mask, label) = render_scene(&spec, &pose).unwrap();
        assert!(rgb.pixels.chunks_exact(3).all(|p| p == [10, 20, 30]));
        assert!(mask.values.iter().all(|&v| v == 0.0));
        assert_eq!(label.angle_rad, 1.0);
    }

    #[test]
    fn opposite_angles_render_vertical_mirror_images() {
        // Footprint vertically centered (y0 + y1 == size); displacement
        // avoids half-integer boundaries so the mirrored rasterization is
        // identical pixel for pixel.
        let size = 64u32;
        let spec = single_building_spec(size, (26, 24, 38, 40), 405.0);
        let scale = 20.25 / 405.0;
        let up = CameraPose { angle_rad: 0.0, scale_px_per_cm: scale };
        let down = CameraPose { angle_rad: PI, scale_px_per_cm: scale };
        let (rgb_a, mask_a, _) = render_scene(&spec, &up).unwrap();
        let (rgb_b, mask_b, _) = render_scene(&spec, &down).unwrap();
        for y in 0..size {
            let ym = size - 1 - y;
            for x in 0..size {
                let a = ((y * size + x) * 3) as usize;
                let b = ((ym * size + x) * 3) as usize;
                assert_eq!(rgb_a.pixels[a..a + 3], rgb_b.pixels[b..b + 3], "at ({x},{y})");
                assert_eq!(
                    mask_a.values[(y * size + x) as usize],
                    mask_b.values[(ym * size + x) as usize]
                );
            }
        }
    }

    #[test]
    fn nadir_limit_roof_sits_exactly_on_footprint() {
        let spec = single_building_spec(32, (8, 10, 20, 25), 300.0);
        let pose = CameraPose { angle_rad: 5.1, scale_px_per_cm: 0.0 };
        let (rgb, mask, _) = render_scene(&spec, &pose).unwrap();
        for y in 0..32u32 {
            for x in 0..32u32 {
                let inside = (8..20).contains(&x) && (10..25).contains(&y);
                let i = ((y * 32 + x) * 3) as usize;
                if inside {
                    assert_eq!(&rgb.pixels[i..i + 3], &[200, 60, 60]);
                    assert_eq!(mask.values[(y * 32 + x) as usize], 300.0);
                } else {
                    assert_eq!(&rgb.pixels[i..i + 3], &[40, 48, 40]);
                    assert_eq!(mask.values[(y * 32 + x) as usize], 0.0);
                }
            }
        }
    }

    #[test]
    fn mask_maximum_is_the_tallest_visible_height_exactly() {
        let mut spec = single_building_spec(64, (10, 10, 22, 22), 333.25);
        spec.buildings.push(Building {
            x0: 30,
            y0: 30,
            x1: 44,
            y1: 44,
            height_cm: 512.5,
            roof_color: [60, 60, 200],
            wall_color: [40, 40, 120],
        });
        let pose = CameraPose { angle_rad: 0.8, scale_px_per_cm: 0.02 };
        let (_, mask, _) = render_scene(&spec, &pose).unwrap();
        let max = mask.values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(max, 512.5f64 as f32);
    }

    #[test]
    fn displacement_off_canvas_is_rejected() {
        let spec = single_building_spec(32, (20, 20, 30, 30), 400.0);
        let pose = CameraPose {
            angle_rad: PI / 2.0, // flow along +x
            scale_px_per_cm: 0.05, // 20 px, pushes roof past x=32
        };
        let err = render_scene(&spec, &pose).unwrap_err().to_string();
        assert!(err.contains("margin"), "{err}");
    }

    #[test]
    fn measured_roof_offset_recovers_scale_and_angle() {
        // Geometric oracle: roof centroid displacement against a nadir
        // reference render, divided by height, must reproduce the scale.
        let mut worst_scale = 0.0f64;
        let mut worst_angle = 0.0f64;
        for seed in 0..20u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let size = 512u32;
            let fw = r.gen_range(40..90);
            let fh = r.gen_range(40..90);
            let x0 = r.gen_range(220..(512 - 220 - fw).max(221));
            let y0 = r.gen_range(220..(512 - 220 - fh).max(221));
            let height = r.gen_range(300.0..600.0);
            let spec = single_building_spec(size, (x0, y0, x0 + fw, y0 + fh), height);
            let disp = r.gen_range(200.0..215.0);
            let pose = CameraPose {
                angle_rad: r.gen::<f64>() * TAU,
                scale_px_per_cm: disp / height,
            };
            let (rgb, _, label) = render_scene(&spec, &pose).unwrap();
            let nadir = CameraPose { angle_rad: 0.0, scale_px_per_cm: 0.0 };
            let (rgb0, _, _) = render_scene(&spec, &nadir).unwrap();
            let (cx, cy) = color_centroid(&rgb, [200, 60, 60]).unwrap();
            let (cx0, cy0) = color_centroid(&rgb0, [200, 60, 60]).unwrap();
            let (dx, dy) = (cx - cx0, cy - cy0);
            let measured_scale = (dx * dx + dy * dy).sqrt() / height;
            let measured_angle = dy.atan2(dx); // angle of vector; convert below
            let expected_angle = label.angle_rad;
            // Convention: dx = m sin a, dy = -m cos a, so a = atan2(dx, -dy).
            let recovered = dx.atan2(-dy).rem_euclid(TAU);
            let mut angle_err = (recovered - expected_angle).abs();
            if angle_err > PI {
                angle_err = TAU - angle_err;
            }
            let scale_err = (measured_scale - label.scale_px_per_cm).abs() / label.scale_px_per_cm;
            worst_scale = worst_scale.max(scale_err);
            worst_angle = worst_angle.max(angle_err);
            let _ = measured_angle;
        }
        assert!(worst_scale <= 0.02, "scale err {worst_scale}");
        assert!(worst_angle <= 0.05, "angle err {worst_angle}");
    }

    #[test]
    fn dataset_is_deterministic_and_respects_fractions() {
        let cfg = GeneratorConfig {
            n: 24,
            size: 48,
            seed: 99,
            ..GeneratorConfig::default()
        };
        let a = make_dataset(&cfg).unwrap();
        let b = make_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 24);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.id, rb.id);
            assert_eq!(ra.rgb.pixels, rb.rgb.pixels);
            assert_eq!(
                ra.elevation.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                rb.elevation.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(ra.label.scale_px_per_cm, rb.label.scale_px_per_cm);
        }

        let clean_cfg = GeneratorConfig {
            n: 16,
            size: 48,
            seed: 5,
            nan_fraction: 0.0,
            outlier_fraction: 0.0,
            ..GeneratorConfig::default()
        };
        let recs = make_dataset(&clean_cfg).unwrap();
        assert!(recs.iter().all(|r| !r.has_nan));
        assert!(recs
            .iter()
            .all(|r| r.elevation.values.iter().all(|&v| v <= 600.0)));
    }

    #[test]
    fn dataset_files_round_trip_byte_identically() {
        let cfg = GeneratorConfig {
            n: 6,
            seed: 3,
            ..GeneratorConfig::for_size(32)
        };
        let recs = make_dataset(&cfg).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(d1.path(), &recs).unwrap();
        save_dataset(d2.path(), &make_dataset(&cfg).unwrap()).unwrap();
        for entry in std::fs::read_dir(d1.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let b1 = std::fs::read(d1.path().join(&name)).unwrap();
            let b2 = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(b1, b2, "file {:?} differs", name);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Any single-building scene keeps its pose recoverable from the
        /// rendered geometry (within rasterization quantization).
        #[test]
        fn pose_recoverable_for_random_single_buildings(seed in 0u64..500) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let size = 384u32;
            let fw = r.gen_range(30..70);
            let fh = r.gen_range(30..70);
            let x0 = r.gen_range(150..(384 - 150 - fw).max(151));
            let y0 = r.gen_range(150..(384 - 150 - fh).max(151));
            let height = r.gen_range(250.0..600.0);
            let spec = single_building_spec(size, (x0, y0, x0 + fw, y0 + fh), height);
            let disp = r.gen_range(120.0..148.0);
            let pose = CameraPose {
                angle_rad: r.gen::<f64>() * TAU,
                scale_px_per_cm: disp / height,
            };
            let (rgb, _, label) = render_scene(&spec, &pose).unwrap();
            let (rgb0, _, _) = render_scene(&spec, &CameraPose { angle_rad: 0.0, scale_px_per_cm: 0.0 }).unwrap();
            let (cx, cy) = color_centroid(&rgb, [200, 60, 60]).unwrap();
            let (cx0, cy0) = color_centroid(&rgb0, [200, 60, 60]).unwrap();
            let (dx, dy) = (cx - cx0, cy - cy0);
            let measured_scale = (dx * dx + dy * dy).sqrt() / height;
            prop_assert!((measured_scale - label.scale_px_per_cm).abs() / label.scale_px_per_cm <= 0.02);
            let recovered = dx.atan2(-dy).rem_euclid(TAU);
            let mut angle_err = (recovered - label.angle_rad).abs();
            if angle_err > PI { angle_err = TAU - angle_err; }
            prop_assert!(angle_err <= 0.05);
        }
    }
}

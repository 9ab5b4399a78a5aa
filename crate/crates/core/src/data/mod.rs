//! Dataset types and the cleaning/resampling/fusion pipeline.
//!
//! Elevation masks store binary32 centimeters (NaN marks invalid pixels);
//! all arithmetic on them runs in binary64. Scale labels are pixels per
//! centimeter on disk and converted to pixels per decameter for reporting.

pub mod io;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalization constant for the elevation model-input channel: typical
/// building heights map into roughly [0, 1] after dividing by 5000 cm.
pub const ELEVATION_NORM_CM: f64 = 5000.0;

/// Geographic source of a record. The cleaning rules are keyed on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum City {
    SanFernando,
    Atlanta,
    Jacksonville,
    Omaha,
}

impl City {
    pub const ALL: [City; 4] = [City::SanFernando, City::Atlanta, City::Jacksonville, City::Omaha];

    pub fn name(&self) -> &'static str {
        match self {
            City::SanFernando => "SanFernando",
            City::Atlanta => "Atlanta",
            City::Jacksonville => "Jacksonville",
            City::Omaha => "Omaha",
        }
    }
}

impl std::fmt::Display for City {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for City {
    type Err = Error;

    fn from_str(s: &str) -> Result<City> {
        City::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown city `{s}` (expected one of SanFernando, Atlanta, Jacksonville, Omaha)")))
    }
}

/// 8-bit RGB raster, row-major triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> RgbImage {
        RgbImage {
            width,
            height,
            pixels: vec![0; (width * height * 3) as usize],
        }
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }
}

/// Per-pixel above-ground elevation in centimeters; NaN marks invalid pixels.
#[derive(Debug, Clone)]
pub struct ElevationMask {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl ElevationMask {
    pub fn new(width: u32, height: u32) -> ElevationMask {
        ElevationMask {
            width,
            height,
            values: vec![0.0; (width * height) as usize],
        }
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    pub fn nan_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }
}

/// Scale (pixels per centimeter) and orientation angle (radians) of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoseLabel {
    pub scale_px_per_cm: f64,
    pub angle_rad: f64,
}

/// One dataset entry: image, elevation mask, pose label, provenance.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: String,
    pub city: City,
    pub rgb: RgbImage,
    pub elevation: ElevationMask,
    pub label: GeoPoseLabel,
    pub has_nan: bool,
}

/// Median of the non-NaN values; `None` when no such value exists.
fn median_f64(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Location-based outlier thresholding.
///
/// Jacksonville and Omaha masks pass through untouched. For Atlanta the
/// number N of pixels above 4000 cm is counted (NaN excluded): N > 100 means
/// the image really contains a tall building and nothing changes; 0 < N <= 100
/// replaces those pixels with the median of the remaining non-NaN pixels.
/// San Fernando replaces every pixel above its 3000 cm cap with that same
/// style of median. NaN pixels are never touched.
pub fn clean_outliers(mask: &ElevationMask, city: City) -> Result<(ElevationMask, usize)> {
    if mask.values.is_empty() {
        return Err(Error::invalid("clean_outliers: empty mask".to_string()));
    }
    if mask.values.iter().all(|v| v.is_nan()) {
        return Err(Error::invalid(
            "clean_outliers: all-NaN mask has no defined median".to_string(),
        ));
    }
    let threshold = match city {
        City::Jacksonville | City::Omaha => return Ok((mask.clone(), 0)),
        City::Atlanta => 4000.0f64,
        City::SanFernando => 3000.0f64,
    };
    let outliers: Vec<usize> = mask
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan() && f64::from(**v) > threshold)
        .map(|(i, _)| i)
        .collect();
    if outliers.is_empty() {
        return Ok((mask.clone(), 0));
    }
    if city == City::Atlanta && outliers.len() > 100 {
        // Enough pixels to be a real building taller than the threshold.
        return Ok((mask.clone(), 0));
    }
    // Median over non-NaN pixels, excluding the values being replaced.
    let mut keep: Vec<f64> = mask
        .values
        .iter()
        .filter(|v| !v.is_nan() && f64::from(**v) <= threshold)
        .map(|&v| f64::from(v))
        .collect();
    let median = median_f64(&mut keep).ok_or_else(|| {
        Error::invalid("clean_outliers: every valid pixel exceeds the threshold; median undefined".to_string())
    })?;
    let mut out = mask.clone();
    for &i in &outliers {
        out.values[i] = median as f32;
    }
    Ok((out, outliers.len()))
}

/// Area-weighted downsampling of a C-channel raster (binary64 in and out).
///
/// Each output pixel is the mean of the input area it covers, with exact
/// rational weights; for an integer factor f this is exactly the mean of
/// each f x f block. Any NaN contribution poisons its output pixel.
pub fn area_resample(
    input: &[f64],
    in_w: usize,
    in_h: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Result<Vec<f64>> {
    if input.len() != in_w * in_h * channels {
        return Err(Error::shape(
            "area_resample",
            format!("{}x{}x{} raster needs {} values, got {}", in_w, in_h, channels, in_w * in_h * channels, input.len()),
        ));
    }
    if out_w > in_w || out_h > in_h || out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "area_resample: {}x{} -> {}x{} is not a downsampling",
            in_w, in_h, out_w, out_h
        )));
    }
    // Overlap of input cell r with output cell o along one axis, in units of
    // 1/out: max(0, min((r+1)*out, (o+1)*in) - max(r*out, o*in)).
    let axis_weights = |in_n: usize, out_n: usize| -> Vec<(usize, Vec<(usize, u64)>)> {
        (0..out_n)
            .map(|o| {
                let lo = o * in_n / out_n;
                let hi = ((o + 1) * in_n).div_ceil(out_n);
                let weights = (lo..hi)
                    .map(|r| {
                        let a = (r * out_n).max(o * in_n) as u64;
                        let b = ((r + 1) * out_n).min((o + 1) * in_n) as u64;
                        (r, b.saturating_sub(a))
                    })
                    .filter(|(_, w)| *w > 0)
                    .collect();
                (o, weights)
            })
            .collect()
    };
    let rows = axis_weights(in_h, out_h);
    let cols = axis_weights(in_w, out_w);
    // Weights along an axis sum to `in` for every output cell, so the total
    // 2-D weight per output pixel is exactly in_w * in_h.
    let inv_total_weight = 1.0 / (in_w as f64 * in_h as f64);

    let mut out = vec![0.0; out_w * out_h * channels];
    let mut acc = vec![0.0f64; channels];
    for (oy, row_w) in &rows {
        for (ox, col_w) in &cols {
            acc.fill(0.0);
            let mut poisoned = false;
            for &(iy, wy) in row_w {
                for &(ix, wx) in col_w {
                    let weight = (wy * wx) as f64;
                    let base = (iy * in_w + ix) * channels;
                    for c in 0..channels {
                        let v = input[base + c];
                        if v.is_nan() {
                            poisoned = true;
                        }
                        acc[c] += weight * v;
                    }
                }
            }
            let dst = (oy * out_w + ox) * channels;
            for c in 0..channels {
                out[dst + c] = if poisoned { f64::NAN } else { acc[c] * inv_total_weight };
            }
        }
    }
    Ok(out)
}

/// [`area_resample`] over an elevation mask, preserving NaN bookkeeping.
pub fn resample_mask(mask: &ElevationMask, out_w: u32, out_h: u32) -> Result<ElevationMask> {
    let input: Vec<f64> = mask.values.iter().map(|&v| f64::from(v)).collect();
    let out = area_resample(
        &input,
        mask.width as usize,
        mask.height as usize,
        1,
        out_w as usize,
        out_h as usize,
    )?;
    Ok(ElevationMask {
        width: out_w,
        height: out_h,
        values: out.into_iter().map(|v| v as f32).collect(),
    })
}

/// [`area_resample`] over an RGB image, rounding back to 8-bit.
pub fn resample_rgb(img: &RgbImage, out_w: u32, out_h: u32) -> Result<RgbImage> {
    let input: Vec<f64> = img.pixels.iter().map(|&v| f64::from(v)).collect();
    let out = area_resample(
        &input,
        img.width as usize,
        img.height as usize,
        3,
        out_w as usize,
        out_h as usize,
    )?;
    Ok(RgbImage {
        width: out_w,
        height: out_h,
        pixels: out.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
    })
}

/// Converts scale from pixels per centimeter to pixels per decameter.
pub fn scale_to_px_per_dam(scale_px_per_cm: f64) -> Result<f64> {
    if !(scale_px_per_cm > 0.0) {
        return Err(Error::invalid(format!(
            "scale must be positive, got {scale_px_per_cm}"
        )));
    }
    Ok(scale_px_per_cm * 1000.0)
}

/// Fuses an RGB image and its (NaN-free) elevation mask into a four-channel
/// model input: R, G, B scaled to [0,1], then elevation scaled by
/// [`ELEVATION_NORM_CM`].
pub fn make_model_input(rgb: &RgbImage, elev: &ElevationMask) -> Result<Tensor> {
    if rgb.width != elev.width || rgb.height != elev.height {
        return Err(Error::shape(
            "make_model_input",
            format!(
                "rgb {}x{} vs elevation {}x{}",
                rgb.width, rgb.height, elev.width, elev.height
            ),
        ));
    }
    if elev.has_nan() {
        return Err(Error::invalid(
            "make_model_input: elevation mask contains NaN; interpolate first".to_string(),
        ));
    }
    let n = rgb.pixel_count();
    let mut data = Vec::with_capacity(n * 4);
    for i in 0..n {
        data.push(f64::from(rgb.pixels[3 * i]) / 255.0);
        data.push(f64::from(rgb.pixels[3 * i + 1]) / 255.0);
        data.push(f64::from(rgb.pixels[3 * i + 2]) / 255.0);
        data.push(f64::from(elev.values[i]) / ELEVATION_NORM_CM);
    }
    Tensor::from_vec(data, &[1, rgb.height as usize, rgb.width as usize, 4])
}

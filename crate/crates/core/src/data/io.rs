//! On-disk formats: binary PPM (`P6`) for RGB, `ELE1` for elevation masks,
//! and the labels CSV. Both rasters round-trip byte-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{City, DatasetRecord, ElevationMask, GeoPoseLabel, RgbImage};
use crate::error::{Error, Result};

const ELE_MAGIC: &[u8; 4] = b"ELE1";

pub fn save_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(&pstr, e))?;
    w.write_all(&img.pixels).map_err(|e| Error::io(&pstr, e))?;
    w.flush().map_err(|e| Error::io(&pstr, e))
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&pstr, e))?;

    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format(&pstr, "bad magic, expected P6"));
    }
    // Header: three whitespace-separated integers after P6; # starts a comment.
    let mut pos = 2usize;
    let mut next_token = |bytes: &[u8]| -> Result<usize> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(&pstr, "truncated or malformed header"));
        }
        std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(&pstr, "malformed header integer"))
    };
    let width = next_token(&bytes)?;
    let height = next_token(&bytes)?;
    let maxval = next_token(&bytes)?;
    if maxval != 255 {
        return Err(Error::format(&pstr, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(&pstr, "zero image dimension"));
    }
    // Exactly one whitespace byte separates header and payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(&pstr, "missing header/payload separator"));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos < need {
        return Err(Error::format(
            &pstr,
            format!("truncated payload: need {} bytes, have {}", need, bytes.len() - pos),
        ));
    }
    Ok(RgbImage {
        width: width as u32,
        height: height as u32,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub fn save_ele(path: &Path, mask: &ElevationMask) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(ELE_MAGIC).map_err(|e| Error::io(&pstr, e))?;
    w.write_all(&mask.width.to_le_bytes()).map_err(|e| Error::io(&pstr, e))?;
    w.write_all(&mask.height.to_le_bytes()).map_err(|e| Error::io(&pstr, e))?;
    for &v in &mask.values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&pstr, e))?;
    }
    w.flush().map_err(|e| Error::io(&pstr, e))
}

pub fn load_ele(path: &Path) -> Result<ElevationMask> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(&pstr, "truncated header"))?;
    if &head[..4] != ELE_MAGIC {
        return Err(Error::format(&pstr, format!("bad magic {:?}, expected ELE1", &head[..4])));
    }
    let width = u32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(head[8..12].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(Error::format(&pstr, "zero mask dimension"));
    }
    let numel = (width as usize) * (height as usize);
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(&pstr, format!("truncated payload: expected {} values", numel)))?;
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(ElevationMask { width, height, values })
}

/// Labels file schema: `id,city,scale_px_per_cm,angle_rad`.
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug)]
pub struct LabelRow {
    pub id: String,
    pub city: City,
    pub label: GeoPoseLabel,
}

pub fn save_labels_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let pstr = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv { path: pstr.clone(), source: e })?;
    w.write_record(["id", "city", "scale_px_per_cm", "angle_rad"])
        .map_err(|e| Error::Csv { path: pstr.clone(), source: e })?;
    for row in rows {
        w.write_record([
            row.id.as_str(),
            row.city.name(),
            &row.label.scale_px_per_cm.to_string(),
            &row.label.angle_rad.to_string(),
        ])
        .map_err(|e| Error::Csv { path: pstr.clone(), source: e })?;
    }
    w.flush().map_err(|e| Error::io(&pstr, e))
}

pub fn load_labels_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let pstr = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: pstr.clone(), source: e })?;
    {
        let headers = r.headers().map_err(|e| Error::Csv { path: pstr.clone(), source: e })?;
        let expected = ["id", "city", "scale_px_per_cm", "angle_rad"];
        if headers.iter().ne(expected) {
            return Err(Error::format(&pstr, format!("unexpected header {:?}", headers)));
        }
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv { path: pstr.clone(), source: e })?;
        if rec.len() != 4 {
            return Err(Error::format(&pstr, format!("row {}: expected 4 fields", line + 2)));
        }
        let city: City = rec[1].parse()?;
        let scale: f64 = rec[2]
            .parse()
            .map_err(|_| Error::format(&pstr, format!("row {}: bad scale `{}`", line + 2, &rec[2])))?;
        let angle: f64 = rec[3]
            .parse()
            .map_err(|_| Error::format(&pstr, format!("row {}: bad angle `{}`", line + 2, &rec[3])))?;
        if !(scale > 0.0) {
            return Err(Error::format(&pstr, format!("row {}: scale must be positive", line + 2)));
        }
        if !angle.is_finite() {
            return Err(Error::format(&pstr, format!("row {}: angle must be finite", line + 2)));
        }
        rows.push(LabelRow {
            id: rec[0].to_string(),
            city,
            label: GeoPoseLabel {
                scale_px_per_cm: scale,
                angle_rad: angle,
            },
        });
    }
    Ok(rows)
}

/// Writes a dataset as `<id>.ppm` + `<id>.ele` files plus `labels.csv`.
pub fn save_dataset(dir: &Path, records: &[DatasetRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for rec in records {
        save_ppm(&dir.join(format!("{}.ppm", rec.id)), &rec.rgb)?;
        save_ele(&dir.join(format!("{}.ele", rec.id)), &rec.elevation)?;
    }
    let rows: Vec<LabelRow> = records
        .iter()
        .map(|r| LabelRow {
            id: r.id.clone(),
            city: r.city,
            label: r.label,
        })
        .collect();
    save_labels_csv(&dir.join(LABELS_FILE), &rows)
}

/// Loads a dataset directory written by [`save_dataset`]. `has_nan` is set
/// from a direct scan of each mask.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let rows = load_labels_csv(&dir.join(LABELS_FILE))?;
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let rgb = load_ppm(&dir.join(format!("{}.ppm", row.id)))?;
        let elevation = load_ele(&dir.join(format!("{}.ele", row.id)))?;
        if rgb.width != elevation.width || rgb.height != elevation.height {
            return Err(Error::format(
                dir.display().to_string(),
                format!(
                    "record {}: rgb {}x{} does not match mask {}x{}",
                    row.id, rgb.width, rgb.height, elevation.width, elevation.height
                ),
            ));
        }
        let has_nan = elevation.has_nan();
        records.push(DatasetRecord {
            id: row.id,
            city: row.city,
            rgb,
            elevation,
            label: row.label,
            has_nan,
        });
    }
    Ok(records)
}

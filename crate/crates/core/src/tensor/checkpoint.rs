//! "GPW1" checkpoint format.
//!
//! Layout: magic bytes `GPW1`, u32-LE tensor count, then per tensor:
//! u16-LE name length, UTF-8 name, u8 rank, u32-LE dims, binary32-LE
//! row-major data. Round-trips byte-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GPW1";

/// One named tensor as stored on disk.
#[derive(Debug)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Writes named tensors in the given order. Values are narrowed to binary32.
pub fn save_checkpoint(path: &Path, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&pstr, e));
    write(MAGIC)?;
    write(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("checkpoint name too long: {}", name)));
        }
        if shape.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("checkpoint rank too large for {}", name)));
        }
        write(&(name_bytes.len() as u16).to_le_bytes())?;
        write(name_bytes)?;
        write(&[shape.len() as u8])?;
        for &d in shape {
            write(&(d as u32).to_le_bytes())?;
        }
        for &v in data {
            write(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(&pstr, e))
}

/// Reads all tensors from a GPW1 file.
pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointTensor>> {
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);

    fn take<const N: usize>(r: &mut impl Read, path: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(path, "truncated payload"))?;
        Ok(buf)
    }

    let magic: [u8; 4] = take(&mut r, &pstr)?;
    if &magic != MAGIC {
        return Err(Error::format(&pstr, format!("bad magic {:?}, expected GPW1", magic)));
    }
    let count = u32::from_le_bytes(take(&mut r, &pstr)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut r, &pstr)?) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::format(&pstr, "truncated tensor name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::format(&pstr, "tensor name is not UTF-8"))?;
        let rank = take::<1>(&mut r, &pstr)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut r, &pstr)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f32::from_le_bytes(take(&mut r, &pstr)?));
        }
        tensors.push(CheckpointTensor { name, shape, data });
    }
    Ok(tensors)
}

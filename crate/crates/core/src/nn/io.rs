//! Binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MATL"            4 bytes magic
//! version           u32
//! segment count     u32
//! per segment:      name length u32, name bytes (UTF-8),
//!                   rank u32, rank x u64 dimensions
//! payload           every value as f64, in layout order
//! ```

use std::io::{Read, Write};

use super::{ParamVector, Segment};
use crate::error::{Error, Result};

pub const PARAM_FILE_MAGIC: &[u8; 4] = b"MATL";
pub const PARAM_FILE_VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &ParamVector) -> Result<()> {
    w.write_all(PARAM_FILE_MAGIC)?;
    w.write_all(&PARAM_FILE_VERSION.to_le_bytes())?;
    w.write_all(&(params.layout().len() as u32).to_le_bytes())?;
    for seg in params.layout() {
        let name = seg.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(seg.shape.len() as u32).to_le_bytes())?;
        for &d in &seg.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamVector> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PARAM_FILE_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != PARAM_FILE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layout = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(Error::Format(format!("segment name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("segment name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("segment `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        layout.push(Segment { name, shape });
    }
    let total: usize = layout.iter().map(Segment::size).sum();
    let mut values = Vec::with_capacity(total);
    let mut b = [0u8; 8];
    for _ in 0..total {
        r.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    ParamVector::from_parts(layout, values)
}

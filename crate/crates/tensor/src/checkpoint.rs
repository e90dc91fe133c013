//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "QRTS" | version: u32 | count: u64 |
//!   count × ( name_len: u32 | name: UTF-8 | dtype: u8 | rank: u32 |
//!             rank × dim: u64 | values )
//! ```
//!
//! dtype `1` is f64, `0` is f32. Writers always emit f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"QRTS";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

pub fn write_params<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic, not a QRTS checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        match dtype[0] {
            DTYPE_F64 => {
                for _ in 0..numel {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
            }
            DTYPE_F32 => {
                for _ in 0..numel {
                    let mut b = [0u8; 4];
                    r.read_exact(&mut b)?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
            }
            other => {
                return Err(TensorError::Checkpoint(format!("unknown dtype tag {other} for {name}")))
            }
        }
        if store.id(&name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    read_params(BufReader::new(File::open(path)?))
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

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("clf.w", Tensor::from_rows(&[&[1.5, -2.0], &[0.1, 1e-300]]));
        s.add("ved.b", Tensor::row(&[f64::MIN_POSITIVE, -0.0, 3.0]));
        s
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = sample();
        let mut a = Vec::new();
        write_params(&s, &mut a).unwrap();
        let back = read_params(a.as_slice()).unwrap();
        assert!(back.bitwise_eq(&s));
        let mut b = Vec::new();
        write_params(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = Vec::new();
        write_params(&sample(), &mut bytes).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = read_params(bytes.as_slice()).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_params(&b"NOPE\x01\0\0\0"[..]).is_err());
    }

    #[test]
    fn reads_f32_payloads() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(b"x");
        bytes.push(0);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2f32).to_le_bytes());
        let s = read_params(bytes.as_slice()).unwrap();
        assert_eq!(s.get(s.id("x").unwrap()).data(), &[0.5, -2.0]);
    }
}

//! The `ITSW` weight container. Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "ITSW"
//! version u32      currently 1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8), rank u8, dims rank x u32,
//!   dtype u8 (0 = f32), data row-major little-endian
//! ```
//!
//! Convolution weights are stored `(out_ch, in_ch, kh, kw)`; linear weights
//! `(out, in)` with a separate rank-1 bias tensor. Data is always f32 on
//! disk; it widens to the working scalar on load.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ItsError, Result};
use crate::scalar::Real;

pub const WEIGHT_FILE_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
const MAGIC: &[u8; 4] = b"ITSW";
/// Guard against reading absurd dims from a corrupt file.
const MAX_ELEMENTS: usize = 1 << 24;

#[derive(Clone, Debug)]
pub struct Tensor<T: Real> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<T>) -> Self {
        let t = Tensor {
            name: name.into(),
            dims,
            data,
        };
        debug_assert_eq!(t.len(), t.data.len());
        t
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Error for callers that found the tensor shaped wrong for its slot.
    pub fn shape_error(&self, expected: impl Into<String>) -> ItsError {
        ItsError::ShapeMismatch {
            name: self.name.clone(),
            found: self.dims.clone(),
            expected: expected.into(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct WeightFile<T: Real> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> WeightFile<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ItsError::MissingTensor {
                name: name.to_string(),
            })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| ItsError::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(ItsError::BadMagic);
        }
        let version = read_u32(&mut r, "version")?;
        if version != WEIGHT_FILE_VERSION {
            return Err(ItsError::UnsupportedVersion {
                found: version,
                expected: WEIGHT_FILE_VERSION,
            });
        }
        let count = read_u32(&mut r, "tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let ctx = format!("tensor {i} header");
            let name_len = read_u16(&mut r, &ctx)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(&mut r, &mut name_bytes, &ctx)?;
            let name = String::from_utf8(name_bytes).map_err(|_| ItsError::Truncated {
                what: format!("tensor {i} name (invalid UTF-8)"),
            })?;
            let rank = read_u8(&mut r, &ctx)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut r, &ctx)? as usize);
            }
            let dtype = read_u8(&mut r, &ctx)?;
            if dtype != DTYPE_F32 {
                return Err(ItsError::BadDtype { name, code: dtype });
            }
            let len: usize = dims.iter().product();
            if len > MAX_ELEMENTS {
                return Err(ItsError::ShapeMismatch {
                    name,
                    found: dims,
                    expected: format!("at most {MAX_ELEMENTS} elements"),
                });
            }
            let mut raw = vec![0u8; len * 4];
            read_exact(&mut r, &mut raw, &format!("tensor {name:?} data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        Ok(WeightFile { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| ItsError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| ItsError::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&WEIGHT_FILE_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u16).to_le_bytes()).map_err(io_err)?;
            w.write_all(t.name.as_bytes()).map_err(io_err)?;
            w.write_all(&[t.dims.len() as u8]).map_err(io_err)?;
            for &d in &t.dims {
                w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
            }
            w.write_all(&[DTYPE_F32]).map_err(io_err)?;
            for &v in &t.data {
                w.write_all(&(v.widen() as f32).to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| ItsError::Truncated {
        what: what.to_string(),
    })
}

fn read_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("its_weights_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_preserves_tensors() {
        let wf = WeightFile {
            tensors: vec![
                Tensor::new("fc.weight", vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]),
                Tensor::new("fc.bias", vec![2], vec![0.5, -0.5]),
            ],
        };
        let path = tmp("rt.itsw");
        wf.write(&path).unwrap();
        let back = WeightFile::<f64>::read(&path).unwrap();
        assert_eq!(back.tensors.len(), 2);
        assert_eq!(back.get("fc.weight").unwrap().dims, vec![2, 3]);
        assert_eq!(back.get("fc.bias").unwrap().data, vec![0.5, -0.5]);
    }

    #[test]
    fn bad_magic_is_its_own_error() {
        let path = tmp("bad_magic.itsw");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            WeightFile::<f64>::read(&path),
            Err(ItsError::BadMagic)
        ));
    }

    #[test]
    fn unsupported_version_is_reported() {
        let path = tmp("bad_version.itsw");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"ITSW");
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            WeightFile::<f64>::read(&path),
            Err(ItsError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_data_is_reported() {
        let path = tmp("truncated.itsw");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"ITSW");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(b"fc");
        bytes.push(1); // rank
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.push(DTYPE_F32);
        bytes.extend_from_slice(&[0u8; 7]); // 16 bytes owed, 7 given
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            WeightFile::<f64>::read(&path),
            Err(ItsError::Truncated { .. })
        ));
    }

    #[test]
    fn missing_tensor_is_reported() {
        let wf = WeightFile::<f64> { tensors: vec![] };
        assert!(matches!(
            wf.get("conv1.weight"),
            Err(ItsError::MissingTensor { .. })
        ));
    }
}

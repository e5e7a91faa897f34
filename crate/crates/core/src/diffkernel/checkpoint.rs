//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "R2ECKPT1"
//! u32 entry count
//! per entry: u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//!            u32 rank, u64 per dimension
//! payloads, in manifest order, as raw little-endian floats
//! ```

use std::io::{Read, Write};

use super::{KernelError, ParameterSet, Tensor};
use crate::io_util::{read_bytes, read_u32, read_u64, read_u8};
use crate::scalar::{DType, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"R2ECKPT1";

pub fn write_checkpoint<T: Scalar, W: Write>(
    out: &mut W,
    params: &ParameterSet<T>,
    dtype: DType,
) -> Result<(), KernelError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dtype.code());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
        for &v in t.data() {
            match dtype {
                DType::F32 => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(input: &mut R) -> Result<ParameterSet<T>, KernelError> {
    let bad = |m: &str| KernelError::Checkpoint(m.to_string());
    let magic = read_bytes(input, 8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let count = read_u32(input)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(input)? as usize;
        let name = String::from_utf8(read_bytes(input, len)?).map_err(|_| bad("name is not utf-8"))?;
        let dtype = DType::from_code(read_u8(input)?).ok_or_else(|| bad("unknown dtype"))?;
        let rank = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(input)? as usize);
        }
        manifest.push((name, dtype, shape));
    }
    let mut params = ParameterSet::new();
    for (name, dtype, shape) in manifest {
        let n: usize = shape.iter().product();
        let raw = read_bytes(input, n * dtype.width())?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| {
                    let mut b = [0u8; 8];
                    b.copy_from_slice(c);
                    T::of(f64::from_le_bytes(b))
                })
                .collect(),
        };
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

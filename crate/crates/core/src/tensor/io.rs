//! Binary tensor records.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   [u8; 4] = "ACTT"
//! version u32     = 1
//! rank    u32
//! extents u64 × rank
//! dtype   u8      (0 = real32, 1 = int8)
//! payload         product(extents) × size_of(dtype) bytes
//! ```
//!
//! Records may be concatenated; [`decode_tensors`] reads such a stream.

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACTT";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real32 = 0,
    Int8 = 1,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::Real32 => 4,
            DType::Int8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    Real32(Tensor),
    Int8 { shape: Vec<usize>, data: Vec<i8> },
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::Real32(t) => t.shape(),
            StoredTensor::Int8 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::Real32(_) => DType::Real32,
            StoredTensor::Int8 { .. } => DType::Int8,
        }
    }

    pub fn into_real(self) -> Result<Tensor> {
        match self {
            StoredTensor::Real32(t) => Ok(t),
            StoredTensor::Int8 { .. } => Err(Error::Decode("expected real32 tensor, found int8".into())),
        }
    }

    pub fn into_int8(self) -> Result<(Vec<usize>, Vec<i8>)> {
        match self {
            StoredTensor::Int8 { shape, data } => Ok((shape, data)),
            StoredTensor::Real32(_) => Err(Error::Decode("expected int8 tensor, found real32".into())),
        }
    }

    pub fn encoded_len(&self) -> usize {
        let shape = self.shape();
        4 + 4 + 4 + 8 * shape.len() + 1 + shape.iter().product::<usize>() * self.dtype().size()
    }
}

/// Append one encoded record to `out`.
pub fn encode_tensor(t: &StoredTensor, out: &mut Vec<u8>) {
    let shape = t.shape();
    out.reserve(t.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.push(t.dtype() as u8);
    match t {
        StoredTensor::Real32(t) => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        StoredTensor::Int8 { data, .. } => out.extend(data.iter().map(|&v| v as u8)),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decode one record from the front of `buf`, returning it and the bytes consumed.
pub fn decode_tensor(buf: &[u8]) -> Result<(StoredTensor, usize)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Decode("bad magic, expected \"ACTT\"".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let rank = r.u32("rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Decode(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for d in 0..rank {
        let e = r.u64("extent")?;
        if e == 0 {
            return Err(Error::Decode(format!("extent {d} is zero")));
        }
        let e = usize::try_from(e).map_err(|_| Error::Decode(format!("extent {d} too large")))?;
        count = count
            .checked_mul(e)
            .ok_or_else(|| Error::Decode("element count overflows".into()))?;
        shape.push(e);
    }
    let dtype = match r.take(1, "dtype")?[0] {
        0 => DType::Real32,
        1 => DType::Int8,
        other => return Err(Error::Decode(format!("unknown dtype tag {other}"))),
    };
    let nbytes = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Decode("payload size overflows".into()))?;
    let payload = r.take(nbytes, "payload")?;
    let t = match dtype {
        DType::Real32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            StoredTensor::Real32(
                Tensor::new(shape, data).map_err(|e| Error::Decode(format!("invalid payload: {e}")))?,
            )
        }
        DType::Int8 => StoredTensor::Int8 {
            shape,
            data: payload.iter().map(|&b| b as i8).collect(),
        },
    };
    Ok((t, r.pos))
}

/// Decode a concatenation of records.
pub fn decode_tensors(mut buf: &[u8]) -> Result<Vec<StoredTensor>> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (t, n) = decode_tensor(buf)?;
        out.push(t);
        buf = &buf[n..];
    }
    Ok(out)
}

impl Tensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encode_tensor(&StoredTensor::Real32(self.clone()), &mut out);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Tensor> {
        let (t, n) = decode_tensor(buf)?;
        if n != buf.len() {
            return Err(Error::Decode(format!("{} trailing bytes", buf.len() - n)));
        }
        t.into_real()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Tensor> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_bytes(&buf)
    }
}

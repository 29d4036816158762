//! Binary tensor files: `"FTNS"`, version `u32 = 1`, dtype `u8` (0 = f32,
//! 1 = f64), rank `u32`, dims `u32 × rank`, then the row-major payload, all
//! little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"FTNS";
pub const VERSION: u32 = 1;

pub fn header_len(rank: usize) -> usize {
    4 + 4 + 1 + 4 + 4 * rank
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let width = match t.dtype() {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(header_len(t.rank()) + width * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match t.dtype() {
        DType::F32 => 0,
        DType::F64 => 1,
    });
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let corrupt = |m: String| Error::Corrupt(m);
    let take = |off: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(off..off + n)
            .ok_or_else(|| corrupt(format!("truncated header at byte {off}")))
    };
    if take(0, 4)? != MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let u32_at = |off: usize| -> Result<u32> { Ok(u32::from_le_bytes(take(off, 4)?.try_into().expect("4 bytes"))) };
    let version = u32_at(4)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let dtype = match take(8, 1)?[0] {
        0 => DType::F32,
        1 => DType::F64,
        d => return Err(corrupt(format!("unknown dtype tag {d}"))),
    };
    let rank = u32_at(9)? as usize;
    if rank > 16 {
        return Err(corrupt(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut n: usize = 1;
    for i in 0..rank {
        let d = u32_at(13 + 4 * i)? as usize;
        n = n
            .checked_mul(d)
            .ok_or_else(|| corrupt(format!("dimensions {shape:?}×{d} overflow")))?;
        shape.push(d);
    }
    let width = if dtype == DType::F32 { 4 } else { 8 };
    let start = header_len(rank);
    let need = n
        .checked_mul(width)
        .ok_or_else(|| corrupt("payload size overflows".into()))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != need {
        return Err(corrupt(format!("payload holds {} bytes, header declares {need}", payload.len())));
    }
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Tensor::from_vec_dtype(&shape, data, dtype).map_err(|e| corrupt(e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    super::write_atomic(path, &encode(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| match e {
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_of_small_f32() {
        let t = Tensor::from_vec_dtype(&[2, 3], vec![1.0; 6], DType::F32).unwrap();
        let b = encode(&t);
        assert_eq!(header_len(2), 21);
        assert_eq!(b.len(), 21 + 24);
        assert_eq!(&b[..4], b"FTNS");
    }

    #[test]
    fn round_trip_and_truncation() {
        for dtype in [DType::F32, DType::F64] {
            let t = Tensor::from_vec_dtype(&[3, 2], vec![0.1, -2.5, 3.0, 1e-9, 7.0, 0.0], dtype).unwrap();
            let b = encode(&t);
            assert!(decode(&b).unwrap().bitwise_eq(&t));
            assert!(matches!(decode(&b[..b.len() - 1]), Err(Error::Corrupt(_))));
        }
        assert!(matches!(decode(b"NOPE\x01\x00\x00\x00"), Err(Error::Corrupt(_))));
    }
}

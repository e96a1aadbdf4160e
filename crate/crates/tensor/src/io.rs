//! VFST binary tensor format.
//!
//! Layout (little endian): magic `VFST`, `u8` version, `u8` dtype code,
//! `u8` rank, `rank` x `u64` extents, then the row-major payload.

use std::io::{Read, Write};

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"VFST";
pub const VERSION: u8 = 1;

/// Integer tensor, used for label maps and pixel correspondences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::shape(
                "int tensor",
                format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            ));
        }
        Ok(IntTensor { shape, data })
    }
}

/// Any tensor the format can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    I32(IntTensor),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::I32(_) => DType::I32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::I32(t) => &t.shape,
        }
    }
}

fn header(out: &mut Vec<u8>, dtype: DType, shape: &[usize]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(TensorError::Contract(format!("rank {} too large", shape.len())));
    }
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + t.numel() * T::DTYPE.size());
    header(&mut out, T::DTYPE, t.shape())?;
    for &v in t.data() {
        v.put_le(&mut out);
    }
    Ok(out)
}

pub fn encode_any(t: &AnyTensor) -> Result<Vec<u8>> {
    match t {
        AnyTensor::F32(t) => encode(t),
        AnyTensor::F64(t) => encode(t),
        AnyTensor::I32(t) => {
            let mut out = Vec::with_capacity(8 + 8 * t.shape.len() + 4 * t.data.len());
            header(&mut out, DType::I32, &t.shape)?;
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            Ok(out)
        }
    }
}

/// Bounds-checked cursor that reports absolute offsets in errors.
pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], base: u64) -> Self {
        Cursor { bytes, pos: 0, base }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(TensorError::format(
                self.offset(),
                format!("truncated {}: need {} bytes, {} left", what, n, self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Decodes one tensor starting at the cursor.
pub fn decode_from(cur: &mut Cursor<'_>) -> Result<AnyTensor> {
    let start = cur.offset();
    if cur.take(4, "magic")? != MAGIC {
        return Err(TensorError::format(start, "bad magic, expected VFST"));
    }
    let at = cur.offset();
    let version = cur.u8("version")?;
    if version != VERSION {
        return Err(TensorError::format(at, format!("unsupported version {}", version)));
    }
    let at = cur.offset();
    let code = cur.u8("dtype")?;
    let dtype = DType::from_code(code)
        .ok_or_else(|| TensorError::format(at, format!("unknown dtype code {}", code)))?;
    let rank = cur.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = cur.offset();
        let d = cur.u64("extent")?;
        let d = usize::try_from(d).map_err(|_| TensorError::format(at, "extent overflows usize"))?;
        shape.push(d);
    }
    let at = cur.offset();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)))
        .ok_or_else(|| TensorError::format(at, "payload size overflows"))?;
    let payload = cur.take(count.1, "payload")?;
    let size = dtype.size();
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(
            shape,
            payload.chunks_exact(size).map(f32::get_le).collect(),
        )?),
        DType::F64 => AnyTensor::F64(Tensor::new(
            shape,
            payload.chunks_exact(size).map(f64::get_le).collect(),
        )?),
        DType::I32 => AnyTensor::I32(IntTensor::new(
            shape,
            payload
                .chunks_exact(size)
                .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        )?),
    })
}

pub fn decode_any(bytes: &[u8]) -> Result<AnyTensor> {
    let mut cur = Cursor::new(bytes, 0);
    let t = decode_from(&mut cur)?;
    if cur.remaining() != 0 {
        return Err(TensorError::format(cur.offset(), "trailing bytes after payload"));
    }
    Ok(t)
}

/// Decodes a tensor of a known float dtype.
pub fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let any = decode_any(bytes)?;
    let found = any.dtype();
    let t = match any {
        AnyTensor::F32(t) if T::DTYPE == DType::F32 => Some(t.cast::<T>()),
        AnyTensor::F64(t) if T::DTYPE == DType::F64 => Some(t.cast::<T>()),
        _ => None,
    };
    t.ok_or_else(|| {
        TensorError::format(5, format!("dtype {:?} where {:?} was expected", found, T::DTYPE))
    })
}

pub fn write_tensor<T: Element, W: Write>(t: &Tensor<T>, mut w: W) -> Result<()> {
    w.write_all(&encode(t)?)?;
    Ok(())
}

pub fn read_tensor<T: Element, R: Read>(mut r: R) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save_any(t: &AnyTensor, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, encode_any(t)?)?;
    Ok(())
}

pub fn load_any(path: impl AsRef<std::path::Path>) -> Result<AnyTensor> {
    decode_any(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode(&t).unwrap();
        let mut expect = b"VFST".to_vec();
        expect.extend_from_slice(&[1, 1, 2]);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let mut bytes = encode(&Tensor::vector(vec![1.0f64])).unwrap();
        bytes[0] = b'X';
        match decode::<f64>(&bytes) {
            Err(TensorError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = encode(&Tensor::vector(vec![1.0f64, 2.0, 3.0])).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match decode::<f64>(cut) {
            Err(TensorError::Format { offset, .. }) => assert_eq!(offset, 4 + 3 + 8),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let bytes = encode(&Tensor::vector(vec![1.0f32])).unwrap();
        assert!(decode::<f64>(&bytes).is_err());
    }

    #[test]
    fn int_tensor_round_trip() {
        let t = AnyTensor::I32(IntTensor::new(vec![2, 2], vec![-1, 0, 7, 3]).unwrap());
        assert_eq!(decode_any(&encode_any(&t).unwrap()).unwrap(), t);
    }
}

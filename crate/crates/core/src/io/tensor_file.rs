//! `BMT1` tensor files.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "BMT1"
//! 4       1          dtype (1 = f32 little-endian, 2 = u8)
//! 5       1          ndim
//! 6       4 * ndim   dims, u32 little-endian
//! ..      payload    row-major, last dimension fastest
//! ```
//!
//! Several tensors may be concatenated in one file (weights files do this).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BMT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    U8 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// An n-dimensional tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    /// Panics if `data.len()` disagrees with `dims`.
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor dims/data mismatch"
        );
        Self {
            dims,
            data: TensorData::F32(data),
        }
    }

    /// Panics if `data.len()` disagrees with `dims`.
    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor dims/data mismatch"
        );
        Self {
            dims,
            data: TensorData::U8(data),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decoded header of one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Header size in bytes.
    pub header_len: usize,
}

impl TensorHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    if t.dims.len() > u8::MAX as usize {
        return Err(Error::invalid_arg("tensor rank exceeds 255"));
    }
    out.extend_from_slice(MAGIC);
    out.push(t.dtype() as u8);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid_arg("tensor dim exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "refusing to write non-finite value at index {i}"
                )));
            }
            out.reserve(v.len() * 4);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    Ok(())
}

/// Parses a header at `base` within `bytes`. Offsets in errors are absolute.
pub fn decode_header(bytes: &[u8], base: usize) -> Result<TensorHeader> {
    let at = |off: usize| (base + off) as u64;
    let buf = &bytes[base..];
    if buf.len() < 6 {
        return Err(Error::format(at(buf.len()), "truncated header"));
    }
    if &buf[..4] != MAGIC {
        return Err(Error::format(at(0), format!("bad magic {:?}", &buf[..4])));
    }
    let dtype = DType::from_code(buf[4])
        .ok_or_else(|| Error::format(at(4), format!("unknown dtype code {}", buf[4])))?;
    let ndim = buf[5] as usize;
    let header_len = 6 + 4 * ndim;
    if buf.len() < header_len {
        return Err(Error::format(at(buf.len()), "truncated dims"));
    }
    let dims = buf[6..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Ok(TensorHeader {
        dtype,
        dims,
        header_len,
    })
}

/// Decodes one tensor at `base`; returns it and the offset just past it.
pub fn decode_tensor(bytes: &[u8], base: usize) -> Result<(Tensor, usize)> {
    let header = decode_header(bytes, base)?;
    let start = base + header.header_len;
    let count: usize = header.dims.iter().product();
    let end = start + count * header.dtype.size();
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "payload truncated: need {} bytes, have {}",
                end - start,
                bytes.len() - start
            ),
        ));
    }
    let payload = &bytes[start..end];
    let data = match header.dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
    };
    Ok((
        Tensor {
            dims: header.dims,
            data,
        },
        end,
    ))
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode_single(bytes: &[u8]) -> Result<Tensor> {
    let (t, end) = decode_tensor(bytes, 0)?;
    if end != bytes.len() {
        return Err(Error::format(end as u64, "trailing bytes after payload"));
    }
    Ok(t)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf)?;
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_single(&bytes)
}

/// Reads only the header; used by bundle validation.
pub fn read_tensor_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::with_capacity(6 + 4 * 8);
    f.by_ref()
        .take(6 + 4 * 255)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    decode_header(&head, 0)
}

pub fn write_tensor_sequence(ts: &[Tensor], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for t in ts {
        encode_tensor(t, &mut buf)?;
    }
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_tensor_sequence(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut out = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        let (t, next) = decode_tensor(&bytes, off)?;
        out.push(t);
        off = next;
    }
    Ok(out)
}

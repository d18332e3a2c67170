//! `TCT1` binary tensor records.
//!
//! Layout: magic `TCT1`, `u8` rank, `rank` little-endian `u32` extents,
//! `u8` dtype tag (0 = f32, 1 = f64), then the row-major scalars in
//! little-endian order.

use std::fs;
use std::path::Path;

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TCT1";

/// Appends the encoded record of `t` to `out`.
pub fn encode_into<S: Scalar>(t: &Tensor<S>, out: &mut Vec<u8>) -> Result<()> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::shape(format!("rank {} exceeds 255", t.rank())))?;
    out.extend_from_slice(MAGIC);
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(S::DTYPE.tag());
    out.reserve(t.len() * S::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

pub fn encode<S: Scalar>(t: &Tensor<S>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_into(t, &mut out)?;
    Ok(out)
}

/// Decoded record before conversion to a concrete element type.
#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl Record {
    pub fn shape(&self) -> &[usize] {
        match self {
            Record::F32 { shape, .. } | Record::F64 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Record::F32 { .. } => DType::F32,
            Record::F64 { .. } => DType::F64,
        }
    }

    /// Builds a constant tensor, converting precision if needed.
    pub fn into_tensor<S: Scalar>(self) -> Result<Tensor<S>> {
        match self {
            Record::F32 { shape, data } => {
                Ok(Tensor::<f32>::new(&shape, data)?.cast())
            }
            Record::F64 { shape, data } => Ok(Tensor::<f64>::new(&shape, data)?.cast()),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!(
                "truncated record: need {n} bytes for {what}, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn error(&self, message: String) -> Error {
        Error::Parse {
            offset: self.base + self.pos as u64,
            message,
        }
    }
}

/// Decodes one record starting at `bytes[0]`; returns it with the number of
/// bytes consumed. `base_offset` is added to reported error offsets.
pub fn decode(bytes: &[u8], base_offset: u64) -> Result<(Record, usize)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        base: base_offset,
    };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        c.pos = 0;
        return Err(c.error(format!("bad magic {magic:?}, expected \"TCT1\"")));
    }
    let rank = c.take(1, "rank")?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u32::from_le_bytes(c.take(4, "extent")?.try_into().expect("4 bytes"));
        if d == 0 {
            c.pos -= 4;
            return Err(c.error("zero extent in shape table".into()));
        }
        shape.push(d as usize);
    }
    let tag = c.take(1, "dtype")?[0];
    let dtype = DType::from_tag(tag).ok_or_else(|| {
        c.pos -= 1;
        c.error(format!("unknown dtype tag {tag}"))
    })?;
    let n: usize = shape.iter().product();
    let raw = c.take(n * dtype.size(), "payload")?;
    let record = match dtype {
        DType::F32 => Record::F32 {
            data: raw.chunks_exact(4).map(f32::read_le).collect(),
            shape,
        },
        DType::F64 => Record::F64 {
            data: raw.chunks_exact(8).map(f64::read_le).collect(),
            shape,
        },
    };
    Ok((record, c.pos))
}

pub fn save<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_record(path: impl AsRef<Path>) -> Result<Record> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let (record, used) = decode(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Parse {
            offset: used as u64,
            message: format!("{} trailing bytes after record", bytes.len() - used),
        });
    }
    Ok(record)
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    load_record(path)?.into_tensor()
}

//! The `GTCK` container: a magic tag, a `u32` version, then records of
//! `u16` name length, name bytes, `u8` rank, `u32` dims and an `f32`
//! payload, all little-endian, until end of file. Used for checkpoints and
//! for dataset sequences.

use std::path::Path;

use rsp_core::layers::ParameterStore;
use rsp_core::model::Model;
use rsp_core::Tensor;

use crate::error::{format_err, io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"GTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("record name is not UTF-8")]
    Name,
    #[error("dimension overflow")]
    Overflow,
}

pub fn encode(records: &[Record]) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| format!("record name `{}` too long", r.name))?;
        let rank = u8::try_from(r.shape.len()).map_err(|_| format!("record `{}` has too many dims", r.name))?;
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(format!("record `{}`: shape does not match payload", r.name));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &r.shape {
            let d = u32::try_from(d).map_err(|_| format!("record `{}`: dimension too large", r.name))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Overflow)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode(buf: &[u8]) -> std::result::Result<Vec<Record>, DecodeError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4).map_err(|_| DecodeError::Magic)? != MAGIC {
        return Err(DecodeError::Magic);
    }
    let version = u32::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(DecodeError::Version(version));
    }
    let mut records = Vec::new();
    while c.pos < buf.len() {
        let len = u16::from_le_bytes(c.array()?) as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| DecodeError::Name)?.to_string();
        let rank = c.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(c.array()?) as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(DecodeError::Overflow)?;
        let bytes = c.take(n.checked_mul(4).ok_or(DecodeError::Overflow)?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn write_file(path: &Path, records: &[Record]) -> Result<()> {
    let bytes = encode(records).map_err(|m| format_err(path, m))?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|e| format_err(path, e.to_string()))
}

pub fn save_params(path: &Path, params: &ParameterStore<f32>) -> Result<()> {
    let records: Vec<Record> = params
        .iter()
        .map(|(k, t)| Record::new(k.clone(), t.shape(), t.data().to_vec()))
        .collect();
    write_file(path, &records)
}

/// Loads a checkpoint and checks it holds exactly the parameters of `model`
/// with matching shapes.
pub fn load_params(path: &Path, model: &Model) -> Result<ParameterStore<f32>> {
    let layout = model.init_params::<f32>(0)?;
    let mut store = ParameterStore::new();
    for r in read_file(path)? {
        let want = layout
            .get(&r.name)
            .ok_or_else(|| format_err(path, format!("unexpected parameter `{}`", r.name)))?;
        if want.shape() != r.shape.as_slice() {
            return Err(format_err(
                path,
                format!("parameter `{}` has shape {:?}, model expects {:?}", r.name, r.shape, want.shape()),
            ));
        }
        store.insert(&r.name, Tensor::new(&r.shape, r.data)?)?;
    }
    if let Some(missing) = layout.names().find(|n| store.get(n).is_none()) {
        return Err(Error::Core(rsp_core::Error::MissingParameter(missing.to_string())));
    }
    Ok(store)
}

//! Binary checkpoints.
//!
//! Layout: a 16-byte header (`PHDFACK`, version byte, kind `u32`, precision
//! `u32`), a dimension header (`u32` count then `u64` extents), the payload
//! as little-endian floats, and a UTF-8 JSON trailer running to end of file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opu::{OpuSession, SessionMetadata, TransmissionMatrix};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"PHDFACK";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Session,
    Mlp,
    Transformer,
}

impl CheckpointKind {
    fn code(self) -> u32 {
        match self {
            CheckpointKind::Session => 1,
            CheckpointKind::Mlp => 2,
            CheckpointKind::Transformer => 3,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(CheckpointKind::Session),
            2 => Ok(CheckpointKind::Mlp),
            3 => Ok(CheckpointKind::Transformer),
            other => Err(Error::Format(format!("unknown checkpoint kind {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Storage-only; values are widened back to `f64` on load.
    F32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
    pub trailer: serde_json::Value,
}

/// Where one named tensor lives inside a flat payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>> {
        let expected: u64 = self.dims.iter().product();
        if expected != self.data.len() as u64 {
            return Err(Error::Format(format!(
                "dims {:?} describe {expected} values, payload has {}",
                self.dims,
                self.data.len()
            )));
        }
        let mut out = Vec::with_capacity(16 + 4 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        let p: u32 = match precision {
            Precision::F64 => 0,
            Precision::F32 => 1,
        };
        out.extend_from_slice(&p.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match precision {
            Precision::F64 => self.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Precision::F32 => self.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        }
        out.extend_from_slice(serde_json::to_string(&self.trailer)?.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(7)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = cur.take(1)?[0];
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = CheckpointKind::from_code(cur.u32()?)?;
        let precision = match cur.u32()? {
            0 => Precision::F64,
            1 => Precision::F32,
            other => return Err(Error::Format(format!("unknown precision code {other}"))),
        };
        let ndims = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims.min(16));
        for _ in 0..ndims {
            dims.push(cur.u64()?);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dimension product overflows".into()))? as usize;
        let width = if precision == Precision::F64 { 8 } else { 4 };
        let raw = cur.take(count.checked_mul(width).ok_or_else(|| Error::Format("payload too large".into()))?)?;
        let data = match precision {
            Precision::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Precision::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
        };
        let trailer = serde_json::from_slice(&bytes[cur.pos..])?;
        Ok(Self {
            kind,
            dims,
            data,
            trailer,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        std::fs::write(path, self.to_bytes(precision)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Concatenates named tensors into one payload plus its manifest.
pub fn pack_tensors<'a>(tensors: impl IntoIterator<Item = (String, &'a Tensor)>) -> (Vec<f64>, Vec<TensorEntry>) {
    let mut data = Vec::new();
    let mut manifest = Vec::new();
    for (name, t) in tensors {
        manifest.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: data.len(),
        });
        data.extend_from_slice(t.data());
    }
    (data, manifest)
}

/// Inverse of [`pack_tensors`], in manifest order.
pub fn unpack_tensors(data: &[f64], manifest: &[TensorEntry]) -> Result<Vec<Tensor>> {
    manifest
        .iter()
        .map(|entry| {
            let len: usize = entry.shape.iter().product();
            let slice = data
                .get(entry.offset..entry.offset + len)
                .ok_or_else(|| Error::Format(format!("tensor {} runs past the payload", entry.name)))?;
            Tensor::new(entry.shape.clone(), slice.to_vec())
        })
        .collect()
}

/// Stores the current matrix (real part, then imaginary) and session metadata.
pub fn session_checkpoint(session: &OpuSession) -> Checkpoint {
    let tm = session.transmission_matrix();
    let mut data = Vec::with_capacity(2 * tm.rows * tm.cols);
    data.extend_from_slice(tm.real.data());
    data.extend_from_slice(tm.imag.data());
    Checkpoint {
        kind: CheckpointKind::Session,
        dims: vec![2, tm.rows as u64, tm.cols as u64],
        data,
        trailer: serde_json::to_value(session.metadata()).expect("metadata serializes"),
    }
}

pub fn restore_session(ck: &Checkpoint) -> Result<OpuSession> {
    if ck.kind != CheckpointKind::Session || ck.dims.len() != 3 || ck.dims[0] != 2 {
        return Err(Error::Format(format!("expected a session checkpoint, got {:?} {:?}", ck.kind, ck.dims)));
    }
    let (rows, cols) = (ck.dims[1] as usize, ck.dims[2] as usize);
    let meta: SessionMetadata = serde_json::from_value(ck.trailer.clone())?;
    let n = rows * cols;
    let real = Tensor::matrix(rows, cols, ck.data[..n].to_vec())?;
    let imag = Tensor::matrix(rows, cols, ck.data[n..].to_vec())?;
    OpuSession::restore(TransmissionMatrix::from_parts(real, imag, meta.tm_seed)?, meta)
}

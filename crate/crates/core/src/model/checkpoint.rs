//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RSTRCKPT"
//! version      u32
//! fingerprint  u32 length + UTF-8
//! config       u32 length + UTF-8 (`key=value` lines)
//! metadata     u32 length + UTF-8 (`key=value` lines)
//! params       u32 count, then tensors
//! state        u32 count, then tensors
//! crc32        u32 over every preceding byte
//!
//! tensor: u32 name length, name, u32 rank, rank × u64 dims, f64 values
//! ```
//!
//! Plain tensor files use magic `"RSTRTENS"`, the version, a `u32` count,
//! the tensors and the trailing CRC32.

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Restorer};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RSTRCKPT";
const TENSOR_MAGIC: &[u8; 8] = b"RSTRTENS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything stored in a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Optimizer or other auxiliary tensors.
    pub state: IndexMap<String, Tensor>,
    pub meta: IndexMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &Restorer) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params().clone(),
            state: IndexMap::new(),
            meta: IndexMap::new(),
        }
    }

    pub fn into_model(self) -> Result<Restorer> {
        Restorer::from_params(self.config, self.params)
    }

    /// Errors unless the stored config has the same fingerprint as `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        let (a, b) = (self.config.fingerprint(), expected.fingerprint());
        if a != b {
            return Err(Error::Incompatible(format!("checkpoint config {a} does not match expected config {b}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config.fingerprint());
        put_str(&mut out, &self.config.to_kv());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_str(&mut out, &meta);
        put_u32(&mut out, self.params.len());
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, name, t);
        }
        put_u32(&mut out, self.state.len());
        for (name, t) in &self.state {
            put_tensor(&mut out, name, t);
        }
        seal(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = verify_crc(bytes)?;
        let mut r = Reader::open(body, MAGIC)?;
        let fingerprint = r.string()?;
        let config = ModelConfig::from_kv(&r.string()?)?;
        if config.fingerprint() != fingerprint {
            return Err(Error::Incompatible("stored fingerprint does not match stored config".into()));
        }
        let mut meta = IndexMap::new();
        for line in r.string()?.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| r.err("bad metadata line"))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let (name, t) = r.tensor()?;
            params.insert(name, t.with_requires_grad())?;
        }
        let mut state = IndexMap::new();
        for _ in 0..r.u32()? {
            let (name, t) = r.tensor()?;
            state.insert(name, t);
        }
        if r.pos != body.len() {
            return Err(r.err("trailing bytes after tensors"));
        }
        Ok(Checkpoint {
            config,
            params,
            state,
            meta,
        })
    }
}

/// Body of `bytes` without the trailing CRC32, which must match.
fn verify_crc(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::Checksum {
            stored: 0,
            computed: crc32fast::hash(bytes),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body)
}

fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Bytes of a plain named-tensor file.
pub fn encode_tensor_file(tensors: &IndexMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_tensor(&mut out, name, t);
    }
    seal(out)
}

pub fn decode_tensor_file(bytes: &[u8]) -> Result<IndexMap<String, Tensor>> {
    let body = verify_crc(bytes)?;
    let mut r = Reader::open(body, TENSOR_MAGIC)?;
    let mut out = IndexMap::new();
    for _ in 0..r.u32()? {
        let (name, t) = r.tensor()?;
        if out.insert(name.clone(), t).is_some() {
            return Err(r.err(&format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(r.err("trailing bytes after tensors"));
    }
    Ok(out)
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensors: &IndexMap<String, Tensor>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor_file(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<IndexMap<String, Tensor>> {
    let path = path.as_ref();
    decode_tensor_file(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    put_u32(out, t.ndim());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version.
    fn open(buf: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != magic {
            return Err(r.err("bad magic bytes"));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "file format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        Ok(r)
    }

    fn err(&self, detail: &str) -> Error {
        Error::Parse {
            location: format!("checkpoint byte {}", self.pos),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.err("dimension too large"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("invalid UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| self.u64()).collect::<Result<_>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.err("tensor too large"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Saves a model's config and parameters.
pub fn save_checkpoint(model: &Restorer, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(path, &Checkpoint::from_model(model))
}

/// Loads a model, optionally insisting on a specific config.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Restorer> {
    let ckpt = read_checkpoint(path)?;
    if let Some(cfg) = expected {
        ckpt.expect_config(cfg)?;
    }
    ckpt.into_model()
}

//! Versioned checkpoint format.
//!
//! ```text
//! RCFT-CHECKPOINT 1\n
//! dtype <f32|f64>\n
//! fingerprint <32 hex chars>\n
//! normalizer <fitted|unfitted>\n
//! config <byte length>\n
//! <model config as TOML, exactly that many bytes>
//! records <count>\n
//! then per record, little-endian:
//!   u32 name length, name bytes (UTF-8), u8 role (0 trainable, 1 frozen,
//!   2 buffer), u32 rank, rank × u64 extents, numel × element
//! ```
//!
//! The fingerprint is recomputed from the embedded config on load and must
//! match the header, and the caller's expected config when one is given.

use std::path::Path;

use rcft_tensor::{DType, Scalar, Tensor};

use super::fusion::MultiStreamModel;
use super::params::{ParamStore, Role};
use crate::config::ModelConfig;
use crate::error::{Error, Result};

const MAGIC: &str = "RCFT-CHECKPOINT";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(model: &MultiStreamModel<T>) -> Vec<u8> {
    let cfg = model.config();
    let toml_text = toml::to_string(cfg).expect("model config serializes");
    let fitted = model.arch.normalizer.is_fitted(&model.store);
    let mut out = format!(
        "{MAGIC} {VERSION}\ndtype {}\nfingerprint {}\nnormalizer {}\nconfig {}\n",
        T::DTYPE,
        cfg.fingerprint(T::DTYPE),
        if fitted { "fitted" } else { "unfitted" },
        toml_text.len()
    )
    .into_bytes();
    out.extend_from_slice(toml_text.as_bytes());
    out.extend_from_slice(format!("records {}\n", model.store.len()).as_bytes());
    for e in model.store.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.role.code());
        out.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("unterminated header line".into()))?;
        let s = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        self.pos += nl + 1;
        Ok(s)
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.line()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` header, found {l:?}")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_count(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad {what} {s:?}")))
}

/// Loads a checkpoint. With `expected` set, the stored fingerprint must
/// equal that config's fingerprint.
pub fn load_checkpoint<T: Scalar>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<MultiStreamModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.field(MAGIC).map_err(|_| Error::Checkpoint("not a checkpoint file".into()))?;
    if parse_count(version, "version")? != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = DType::parse(r.field("dtype")?).ok_or_else(|| Error::Checkpoint("unknown dtype".into()))?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint holds {dtype}, caller wants {}", T::DTYPE)));
    }
    let fingerprint = r.field("fingerprint")?.to_string();
    let _normalizer = r.field("normalizer")?;
    let cfg_len = parse_count(r.field("config")?, "config length")?;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config: ModelConfig =
        toml::from_str(cfg_text).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    if config.fingerprint(dtype) != fingerprint {
        return Err(Error::Checkpoint("fingerprint does not match embedded config".into()));
    }
    if let Some(want) = expected {
        if want.fingerprint(dtype) != fingerprint {
            return Err(Error::Checkpoint(format!(
                "config fingerprint mismatch: checkpoint {fingerprint}, expected {}",
                want.fingerprint(dtype)
            )));
        }
    }
    let count = parse_count(r.field("records")?, "record count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let role = Role::from_code(r.take(1)?[0]).ok_or_else(|| Error::Checkpoint(format!("{name}: bad role")))?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: bad rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
        let raw = r.take(numel.checked_mul(dtype.size_of()).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data: Vec<T> = raw.chunks(dtype.size_of()).map(T::read_le).collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        store.add(name, role, tensor);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    MultiStreamModel::from_store(&config, store)
}

pub fn write_checkpoint<T: Scalar>(model: &MultiStreamModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, save_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<MultiStreamModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes, expected)
}

/// Element type recorded in a checkpoint header, without loading it.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.field(MAGIC).map_err(|_| Error::Checkpoint("not a checkpoint file".into()))?;
    DType::parse(r.field("dtype")?).ok_or_else(|| Error::Checkpoint("unknown dtype".into()))
}

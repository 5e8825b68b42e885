//! Flat binary container for named `f32` tensors.
//!
//! ```text
//! magic        8 bytes   "SCTNCKPT"
//! version      u32 LE    FORMAT_VERSION
//! header_len   u32 LE
//! header       UTF-8     "key = value\n" lines, sorted by key
//! count        u32 LE
//! count × record, sorted by name:
//!   name_len   u32 LE
//!   name       UTF-8
//!   rank       u32 LE
//!   dims       rank × u32 LE
//!   payload    Π dims × f32 LE
//! ```
//!
//! The writer is canonical, so `write(read(bytes)) == bytes`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SCTNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: BTreeMap<String, String>,
    pub records: BTreeMap<String, Tensor<f32>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Domain(format!("value {v} does not fit the container's u32 fields")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what} at byte {}", self.at),
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let b = self.take(n, what)?;
        std::str::from_utf8(b).map_err(|_| Error::format(self.path, format!("{what} is not UTF-8")))
    }
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') || k.trim() != k || v.trim() != v {
                return Err(Error::Domain(format!("header entry `{k}` cannot be stored")));
            }
            header.push_str(&format!("{k} = {v}\n"));
        }
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.records.len())?;
        for (name, t) in &self.records {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::format(path, "bad magic, not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::format(
                path,
                format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
            ));
        }
        let hlen = r.u32("header length")?;
        let htext = r.utf8(hlen, "header")?;
        let mut header = BTreeMap::new();
        for line in htext.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::format(path, format!("malformed header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("record count")?;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32("name length")?;
            let name = r.utf8(nlen, "record name")?.to_string();
            let rank = r.u32("rank")?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(path, format!("record `{name}` is too large")))?;
            let payload = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::format(path, "payload size overflow"))?,
                "payload",
            )?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::format(path, format!("record `{name}`: {e}")))?;
            if records.insert(name.clone(), t).is_some() {
                return Err(Error::format(path, format!("duplicate record `{name}`")));
            }
        }
        if r.at != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last record"));
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// A model checkpoint: config in the header, weights as records.
pub fn model_container(
    cfg: &ModelConfig,
    weights: &ModelWeights<f32>,
    extra: &BTreeMap<String, String>,
) -> Container {
    let mut header: BTreeMap<String, String> = extra.clone();
    header.insert("kind".into(), "model".into());
    for (k, v) in cfg.to_pairs() {
        header.insert(k.into(), v);
    }
    Container {
        header,
        records: weights.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
    }
}

pub fn save_model(
    path: &Path,
    cfg: &ModelConfig,
    weights: &ModelWeights<f32>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    model_container(cfg, weights, extra).write(path)
}

/// Reads a model checkpoint and checks its weights against the stored
/// config; the error names the first mismatched parameter.
pub fn load_model(path: &Path) -> Result<(ModelConfig, ModelWeights<f32>, BTreeMap<String, String>)> {
    let c = Container::read(path)?;
    if c.header.get("kind").map(String::as_str) != Some("model") {
        return Err(Error::format(path, "not a model checkpoint"));
    }
    let cfg_map: BTreeMap<String, String> = c
        .header
        .iter()
        .filter(|(k, _)| ModelConfig::KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let cfg = ModelConfig::from_map(&cfg_map)?;
    let weights = ModelWeights::from_map(c.records);
    weights.validate(&cfg)?;
    Ok((cfg, weights, c.header))
}

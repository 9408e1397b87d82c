//! Single-file checkpoints.
//!
//! Layout: `u64 LE header length`, the header as JSON, then for every
//! parameter tensor in store order: `u64 name length`, name bytes,
//! `u64 rank`, `rank × u64 dims`, row-major `f64` values. All integers and
//! floats little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{RngState, Tensor};
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "ctxgen-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub lr: f64,
    pub valid_history: Vec<f64>,
    pub rng: Vec<(String, RngState)>,
    pub vocab_fingerprint: String,
    pub tensor_count: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        train: TrainConfig,
        epoch: usize,
        lr: f64,
        valid_history: Vec<f64>,
        rng: Vec<(String, RngState)>,
        vocab_fingerprint: String,
    ) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format: FORMAT_NAME.to_string(),
                version: FORMAT_VERSION,
                model: model.config().clone(),
                train,
                epoch,
                lr,
                valid_history,
                rng,
                vocab_fingerprint,
                tensor_count: model.params().len(),
            },
            model: model.clone(),
        }
    }

    pub fn verify_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.fingerprint();
        if found != self.header.vocab_fingerprint {
            return Err(Error::Fingerprint {
                expected: self.header.vocab_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| Error::invalid(format!("cannot encode checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(&header);
        let params = self.model.params();
        for (name, t) in params.names().iter().zip(params.values()) {
            out.extend((name.len() as u64).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend(x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header_len = r.u64()? as usize;
        let header_bytes = r.take(header_len)?;
        let value: serde_json::Value = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Corrupt(format!("header is not valid JSON: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
            return Err(Error::Corrupt("not a ctxgen checkpoint".into()));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header: CheckpointHeader = serde_json::from_value(value)
            .map_err(|e| Error::Corrupt(format!("bad header: {e}")))?;

        let mut model = Model::new(header.model.clone())
            .map_err(|e| Error::Corrupt(format!("bad model config: {e}")))?;
        if header.tensor_count != model.params().len() {
            return Err(Error::Corrupt(format!(
                "header lists {} tensors, model has {}",
                header.tensor_count,
                model.params().len()
            )));
        }
        for _ in 0..header.tensor_count {
            let name_len = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u64()? as usize;
            if rank > 8 {
                return Err(Error::Corrupt(format!("tensor {name} has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let slot = model
                .params_mut()
                .by_name_mut(&name)
                .map_err(|_| Error::Corrupt(format!("unexpected tensor {name}")))?;
            if slot.shape() != shape.as_slice() {
                return Err(Error::Corrupt(format!(
                    "tensor {name} has shape {shape:?}, expected {:?}",
                    slot.shape()
                )));
            }
            *slot = Tensor::new(shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { header, model })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; with `vocab`, also checks the vocabulary fingerprint.
pub fn load_checkpoint(path: &Path, vocab: Option<&Vocabulary>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if let Some(v) = vocab {
        ckpt.verify_vocab(v)?;
    }
    Ok(ckpt)
}

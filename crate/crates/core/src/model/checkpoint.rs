//! On-disk checkpoint: a `trelab-ckpt v1 <header bytes>` line, a JSON header
//! with the model config, vocabulary fingerprint and tensor manifest, then
//! raw little-endian f64 data in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::bpe::Vocab;
use crate::data::{Format, MaskingStrategy};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &str = "trelab-ckpt v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: usize,
    pub length: usize,
}

/// Optimizer progress needed to resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Updates completed so far.
    pub step: usize,
    pub total_steps: usize,
    pub seed: u64,
    /// Word position of the dropout random stream, in decimal.
    pub rng_word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab_fingerprint: String,
    /// Serialized vocabulary, embedded by fine-tuning so the checkpoint is
    /// self-contained.
    #[serde(default)]
    pub vocab: Option<String>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub masking: MaskingStrategy,
    #[serde(default)]
    pub train_state: Option<TrainState>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Named tensors in manifest order: model parameters first, then any
    /// optimizer state.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// A checkpoint holding the model's parameters and no optimizer state.
    pub fn from_model(model: &Model, vocab: &Vocab) -> Checkpoint {
        let tensors = model.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        let header = CheckpointHeader {
            config: model.config.clone(),
            vocab_fingerprint: vocab.fingerprint(),
            vocab: None,
            labels: Vec::new(),
            format: None,
            masking: MaskingStrategy::None,
            train_state: None,
            metadata: BTreeMap::new(),
            manifest: Vec::new(),
        };
        Checkpoint { header, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model from the parameter tensors; optimizer tensors are
    /// skipped.
    pub fn to_model(&self) -> Result<Model> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            if !name.starts_with("adam.") {
                store.add(name.clone(), t.clone());
            }
        }
        Model::from_params(self.header.config.clone(), store)
    }

    /// The embedded vocabulary, verified against the recorded fingerprint.
    pub fn embedded_vocab(&self) -> Result<Option<Vocab>> {
        let Some(text) = &self.header.vocab else {
            return Ok(None);
        };
        let vocab = Vocab::parse(text, "<checkpoint vocabulary>")?;
        self.check_vocab(&vocab)?;
        Ok(Some(vocab))
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let fp = vocab.fingerprint();
        if fp != self.header.vocab_fingerprint {
            return Err(Error::Config(format!(
                "vocabulary fingerprint {fp} does not match checkpoint fingerprint {}",
                self.header.vocab_fingerprint
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.manifest.clear();
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let length = t.len() * 8;
            header.manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                length,
            });
            offset += length;
        }
        let json = serde_json::to_string(&header).map_err(|e| Error::Input(format!("checkpoint header: {e}")))?;
        let mut out = format!("{CHECKPOINT_MAGIC} {}\n", json.len()).into_bytes();
        out.extend_from_slice(json.as_bytes());
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
        let bad = |msg: String| Error::Checkpoint {
            path: origin.to_path_buf(),
            msg,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let first = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header line is not UTF-8".into()))?;
        let len_text = first
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(format!("expected `{CHECKPOINT_MAGIC} <length>`, found `{first}`")))?;
        let header_len: usize = len_text
            .parse()
            .map_err(|_| bad(format!("invalid header length `{len_text}`")))?;
        let header_end = nl + 1 + header_len;
        if header_end > bytes.len() {
            return Err(bad("file ends inside the header".into()));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[nl + 1..header_end]).map_err(|e| bad(format!("header: {e}")))?;

        let data = &bytes[header_end..];
        let mut expected_offset = 0;
        let mut tensors = Vec::with_capacity(header.manifest.len());
        for entry in &header.manifest {
            let count: usize = entry.shape.iter().product();
            if entry.offset != expected_offset || entry.length != count * 8 {
                return Err(bad(format!(
                    "manifest entry `{}` has offset {} and length {}, expected {} and {}",
                    entry.name,
                    entry.offset,
                    entry.length,
                    expected_offset,
                    count * 8
                )));
            }
            let end = entry.offset + entry.length;
            if end > data.len() {
                return Err(bad(format!("tensor `{}` extends past the end of the file", entry.name)));
            }
            let values = data[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t =
                Tensor::new(entry.shape.clone(), values).map_err(|e| bad(format!("tensor `{}`: {e}", entry.name)))?;
            tensors.push((entry.name.clone(), t));
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(bad(format!(
                "data section holds {} bytes but the manifest accounts for {expected_offset}",
                data.len()
            )));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes through a temporary sibling file so a crash never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

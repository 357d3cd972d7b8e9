//! Checkpoint directory layout:
//!
//! ```text
//! manifest.json      format version, config, dims, tensor index, fingerprints, metrics
//! tensors/<name>.bin one little-endian f32 array per parameter
//! vocab.txt          the vocabulary the model was trained with
//! templates.txt      the action catalog
//! lexicon.txt        entity lexicon for filling placeholders
//! embeddings.vec     the frozen embedding table
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{HcnModel, ModelDims};
use super::{DmError, ModelConfig};
use crate::data::{fingerprint, ActionSet, Delexicalizer, PreparedCorpus, Vocabulary};
use crate::embeddings::EmbeddingTable;
use crate::grad::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub best_dev_turn_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_trained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    file: String,
    offset: u64,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Fingerprints {
    vocab: String,
    actions: String,
    embeddings: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    dims: ModelDims,
    tensors: Vec<TensorEntry>,
    fingerprints: Fingerprints,
    metrics: CheckpointMetrics,
}

/// A trained model bundled with everything needed to run it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: HcnModel,
    pub vocab: Vocabulary,
    pub actions: ActionSet,
    pub delex: Delexicalizer,
    pub embeddings: EmbeddingTable,
    pub metrics: CheckpointMetrics,
}

fn encode_f32(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
}

fn tensor_file(name: &str) -> String {
    format!("tensors/{name}.bin")
}

impl Checkpoint {
    pub fn new(model: HcnModel, corpus: &PreparedCorpus, embeddings: EmbeddingTable, metrics: CheckpointMetrics) -> Self {
        Checkpoint {
            model,
            vocab: corpus.vocab.clone(),
            actions: corpus.actions.clone(),
            delex: corpus.delex.clone(),
            embeddings,
            metrics,
        }
    }

    fn manifest(&self) -> Manifest {
        let tensors = self
            .model
            .params()
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: DTYPE.into(),
                file: tensor_file(name),
                offset: 0,
                sha256: hex::encode(Sha256::digest(encode_f32(t))),
            })
            .collect();
        Manifest {
            format_version: FORMAT_VERSION,
            config: self.model.config().clone(),
            dims: self.model.dims(),
            tensors,
            fingerprints: Fingerprints {
                vocab: self.vocab.fingerprint(),
                actions: self.actions.fingerprint(),
                embeddings: self.embeddings.fingerprint(),
            },
            metrics: self.metrics.clone(),
        }
    }

    fn manifest_text(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes") + "\n"
    }

    /// Content hash of the manifest, which covers every tensor and corpus
    /// artifact through their own hashes.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.manifest_text())
    }

    pub fn save(&self, dir: &Path) -> Result<(), DmError> {
        std::fs::create_dir_all(dir.join("tensors")).map_err(|e| DmError::io(dir, e))?;
        let put = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| DmError::io(&p, e))
        };
        for (_, name, t) in self.model.params().iter() {
            put(&tensor_file(name), &encode_f32(t))?;
        }
        put("vocab.txt", self.vocab.to_text().as_bytes())?;
        put("templates.txt", self.actions.to_text().as_bytes())?;
        put("lexicon.txt", self.delex.lexicon_to_string().as_bytes())?;
        self.embeddings.save(&dir.join("embeddings.vec"))?;
        put("manifest.json", self.manifest_text().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, DmError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| DmError::io(&p, e))
        };
        let text = |name: &str| {
            String::from_utf8(read(name)?).map_err(|_| DmError::Format(format!("{name} is not UTF-8")))
        };
        let manifest: Manifest = serde_json::from_str(&text("manifest.json")?)
            .map_err(|e| DmError::Format(format!("manifest.json: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(DmError::Compatibility(format!(
                "format version {} (this build reads {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let vocab = Vocabulary::from_text(&text("vocab.txt")?)?;
        let actions = ActionSet::from_text(&text("templates.txt")?)?;
        let delex = Delexicalizer::lexicon_from_str(&text("lexicon.txt")?)?;
        let embeddings = EmbeddingTable::load(&dir.join("embeddings.vec"))?;
        let fp = &manifest.fingerprints;
        for (what, expected, actual) in [
            ("vocabulary", &fp.vocab, vocab.fingerprint()),
            ("action set", &fp.actions, actions.fingerprint()),
            ("embeddings", &fp.embeddings, embeddings.fingerprint()),
        ] {
            if *expected != actual {
                return Err(DmError::Compatibility(format!("{what} fingerprint does not match the manifest")));
            }
        }
        let dims = manifest.dims;
        if dims.vocab_size != vocab.len() || dims.num_actions != actions.len() || dims.embedding_dim != embeddings.dim() {
            return Err(DmError::Compatibility("manifest dimensions disagree with bundled artifacts".into()));
        }

        let mut model = HcnModel::new(&manifest.config, dims)?;
        if manifest.tensors.len() != model.params().len() {
            return Err(DmError::Format(format!(
                "manifest lists {} tensors, the model has {}",
                manifest.tensors.len(),
                model.params().len()
            )));
        }
        for entry in &manifest.tensors {
            let id = model
                .params()
                .id(&entry.name)
                .ok_or_else(|| DmError::Format(format!("unexpected tensor {}", entry.name)))?;
            if entry.dtype != DTYPE || entry.shape != model.params().get(id).shape() {
                return Err(DmError::Format(format!("tensor {} has shape {:?}/{}", entry.name, entry.shape, entry.dtype)));
            }
            let bytes = read(&entry.file)?;
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let raw = bytes
                .get(start..start + 4 * n)
                .ok_or_else(|| DmError::Format(format!("tensor {} is truncated", entry.name)))?;
            if hex::encode(Sha256::digest(raw)) != entry.sha256 {
                return Err(DmError::Format(format!("checksum mismatch for tensor {}", entry.name)));
            }
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            *model.params_mut().get_mut(id) = Tensor::new(entry.shape.clone(), values)?;
        }
        Ok(Checkpoint { model, vocab, actions, delex, embeddings, metrics: manifest.metrics })
    }

    /// Rejects a prepared corpus whose vocabulary or action set differs from
    /// the one the checkpoint was trained on.
    pub fn check_compatible(&self, corpus: &PreparedCorpus) -> Result<(), DmError> {
        if corpus.vocab.fingerprint() != self.vocab.fingerprint() {
            return Err(DmError::Compatibility("vocabulary fingerprint differs from the prepared corpus".into()));
        }
        if corpus.actions.fingerprint() != self.actions.fingerprint() {
            return Err(DmError::Compatibility("action-set fingerprint differs from the prepared corpus".into()));
        }
        Ok(())
    }
}

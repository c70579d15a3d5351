//! A trained model (preprocessing, vocabulary, encoder, scoring layer) and
//! its JSON checkpoint container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::write_atomic;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{ParamStore, TensorRecord};
use crate::plda::{PldaRecord, TwoCovarianceModel};
use crate::preprocess::{PreparedDocument, PreprocessConfig, VocabFile, Vocabulary, prepare_text};

pub const FORMAT: &str = "bayes-av-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Model {
    pub preprocess: PreprocessConfig,
    pub vocab: Vocabulary,
    pub encoder: Encoder,
    pub plda: TwoCovarianceModel,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_index: usize,
    pub seed: u64,
    pub epoch: usize,
    pub dev_overall: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    meta: CheckpointMeta,
    preprocess: PreprocessConfig,
    vocab: VocabFile,
    encoder: EncoderConfig,
    tensors: Vec<TensorRecord>,
    plda: PldaRecord,
}

impl Model {
    pub fn new(preprocess: PreprocessConfig, vocab: Vocabulary, encoder: Encoder, plda: TwoCovarianceModel) -> Result<Self> {
        let m = Self {
            preprocess,
            vocab,
            encoder,
            plda,
            meta: CheckpointMeta::default(),
        };
        m.check_consistency()?;
        Ok(m)
    }

    fn check_consistency(&self) -> Result<()> {
        if self.encoder.token_rows() != self.vocab.embedding_rows() || self.encoder.char_rows() != self.vocab.num_chars() {
            return Err(Error::Checkpoint(format!(
                "encoder tables ({} tokens, {} chars) do not match the vocabulary ({} tokens, {} chars)",
                self.encoder.token_rows(),
                self.encoder.char_rows(),
                self.vocab.embedding_rows(),
                self.vocab.num_chars()
            )));
        }
        if self.plda.dim() != self.encoder.config.lev_dim {
            return Err(Error::Checkpoint(format!(
                "scoring layer dimension {} differs from embedding dimension {}",
                self.plda.dim(),
                self.encoder.config.lev_dim
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, text: &str, fandom: &str) -> PreparedDocument {
        prepare_text(text, fandom, &self.vocab, &self.preprocess)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: FORMAT.to_owned(),
            version: VERSION,
            meta: self.meta.clone(),
            preprocess: self.preprocess.clone(),
            vocab: self.vocab.to_file(),
            encoder: self.encoder.config.clone(),
            tensors: self.encoder.params.to_records(),
            plda: self.plda.to_record(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let mut params = ParamStore::new();
        for t in &file.tensors {
            if params.find(&t.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", t.name)));
            }
            params.add(t.name.clone(), t.to_mat()?);
        }
        let encoder = Encoder::from_params(file.encoder, params)?;
        let vocab = Vocabulary::from_file(file.vocab)?;
        let plda = TwoCovarianceModel::from_record(&file.plda)?;
        let mut problems = Vec::new();
        file.preprocess.validate(&mut problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut m = Self::new(file.preprocess, vocab, encoder, plda)?;
        m.meta = file.meta;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// `model-{index}.json` inside `dir`.
pub fn checkpoint_path(dir: &Path, index: usize) -> std::path::PathBuf {
    dir.join(format!("model-{index}.json"))
}

/// Every `model-*.json` in `dir`, in index order.
pub fn load_dir(dir: &Path) -> Result<Vec<Model>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(idx) = name.strip_prefix("model-").and_then(|n| n.strip_suffix(".json")) {
            if let Ok(i) = idx.parse() {
                paths.push((i, p));
            }
        }
    }
    paths.sort();
    paths.iter().map(|(_, p)| Model::load(p)).collect()
}

//! A small word-level masked language model trained from scratch.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod train;
pub mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use model::Forward;
pub use params::{MlmParams, ModelConfig};
pub use train::{LossPoint, TrainConfig, TrainReport};
pub use vocab::Vocabulary;

use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::text::tokenize;

/// Vocabulary plus weights: the unit that is trained, saved and scored.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLm {
    pub vocab: Vocabulary,
    pub params: MlmParams,
}

/// Default standard deviation of freshly initialized embeddings.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

impl MaskedLm {
    /// Randomly initialized model. `config.vocab_size` is overwritten with
    /// the vocabulary's size.
    pub fn new(vocab: Vocabulary, mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        let params = MlmParams::init(config, seed, EMBEDDING_INIT_STD)?;
        Ok(Self { vocab, params })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.vocab.encode_words(&tokenize(text))
    }

    pub fn encode_all<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<u32>> {
        texts.iter().map(|t| self.encode(t.as_ref())).collect()
    }

    /// Masked-LM training from the current weights on raw sentences.
    pub fn pretrain<S: AsRef<str>>(&mut self, texts: &[S], cfg: &TrainConfig) -> Result<TrainReport> {
        if texts.is_empty() {
            return Err(Error::Argument("training corpus is empty".into()));
        }
        let data = self.encode_all(texts);
        train::train(&mut self.params, &data, cfg)
    }

    /// Continued masked-LM training of an already trained model.
    pub fn finetune<S: AsRef<str>>(&mut self, texts: &[S], cfg: &TrainConfig) -> Result<TrainReport> {
        self.pretrain(texts, cfg)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Probability distribution over the vocabulary at word position
    /// `word_pos` of `words` (0-based, excluding `[BOS]`). Words equal to
    /// `[MASK]` are fed as the mask token.
    pub fn word_log_probs<S: AsRef<str>>(&self, words: &[S], word_pos: usize) -> Result<Vec<f64>> {
        let ids = self.vocab.encode_words(words);
        let fwd = self.params.forward(&ids)?;
        Ok(fwd.log_probs(&self.params, word_pos + 1))
    }
}

/// Identity of a fine-tuned model: base checkpoint, rate of bias, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIdentity {
    pub base_hash: String,
    pub r: f64,
    pub seed: u64,
}

impl ModelIdentity {
    pub fn id(&self) -> String {
        format!("{}-r{:.2}-s{}", &self.base_hash[..12.min(self.base_hash.len())], self.r, self.seed)
    }
}

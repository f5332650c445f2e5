//! Sequence-to-sequence recommender: vocabulary over atomic ids and content
//! words, input builders for the recommendation/indexing tasks, the
//! encoder-decoder model, the four-term joint objective, and the trainer.

pub mod inputs;
pub mod loss;
pub mod model;
pub mod train;
pub mod vocab;

use thiserror::Error;

use crate::numerics::checkpoint::CheckpointError;
use crate::numerics::NumericsError;

pub use model::{ModelConfig, Seq2SeqModel};
pub use train::{train, EpochStats, TrainOutcome};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum Seq2SeqError {
    #[error("encoder input is empty")]
    EmptyInput,
    #[error("encoder input length {len} exceeds maximum {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("decoder prefix length {len} exceeds maximum {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("token {token} outside vocabulary of size {size}")]
    TokenOutOfRange { token: usize, size: usize },
    #[error("identifier token {token} outside codebook of size {k}")]
    GidTokenOutOfRange { token: usize, k: usize },
    #[error("model checkpoint is not self-describing: {0}")]
    BadMeta(String),
    #[error("identifier table covers {gids} items but the dataset has {items}")]
    GidMismatch { gids: usize, items: usize },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no training interactions to learn from")]
    NoTrainingData,
    #[error("validation ranking failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Gid(#[from] crate::gid::GidError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Everything the trainer and the input builders need to know. Loss-term
/// toggles exist for ablations; all default to on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// identifier length l
    pub l: usize,
    /// identifier vocabulary size K per position
    pub k: usize,
    /// model width
    pub m: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// contrastive loss weight α
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// early-stop patience in epochs without validation improvement
    pub patience: usize,
    pub max_len: usize,
    /// max sampled interacted items per user input
    pub items_per_user: usize,
    pub seed: u64,
    /// beam width used for validation recall during training
    pub eval_beam: usize,
    pub use_index: bool,
    pub use_bpr: bool,
    pub use_contrastive: bool,
    pub use_content: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l: 3,
            k: 32,
            m: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            alpha: 0.05,
            lr: 5e-4,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 200,
            patience: 15,
            max_len: 256,
            items_per_user: 20,
            seed: 0,
            eval_beam: 30,
            use_index: true,
            use_bpr: true,
            use_contrastive: true,
            use_content: true,
        }
    }
}

impl TrainConfig {
    /// Architecture view of this config for a given vocabulary size.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            l: self.l,
            k: self.k,
            m: self.m,
            n_heads: self.n_heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            ffn_dim: 4 * self.m,
            max_len: self.max_len,
        }
    }
}

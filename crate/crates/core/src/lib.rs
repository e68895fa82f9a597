//! Meta-evaluation of intrinsic gender-bias measures for masked language
//! models.
//!
//! Gendered sentences are mined from raw text with two word lists,
//! bias-controlled training sets are sampled at known male/female ratios,
//! a small masked LM is fine-tuned on each, every model is scored with five
//! intrinsic bias measures, and the scores are correlated with the known
//! ratios.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod hash;
pub mod lexicon;
pub mod measures;
pub mod metaeval;
pub mod mlm;
pub mod probes;
pub mod sampler;
pub mod scoring;
pub mod synth;
pub mod text;

pub use corpus::{classify_sentence, mine_corpus, Classification, GenderedCorpus, Sentence};
pub use error::{Error, Result};
pub use lexicon::{Gender, GenderLexicon};
pub use measures::{EvalPair, MeasureKind, MeasureScore, MeasureValue, Template};
pub use metaeval::{pearson, run_meta_eval, spearman, CorrelationReport, SweepResult};
pub use mlm::{MaskedLm, ModelConfig, TrainConfig};
pub use probes::{occupation_probe, topk_probe, ProbeResult};
pub use sampler::{sample_dataset, sample_sweep, BiasDataset};
pub use scoring::{DumpScorer, Protocol, ScoreRequest, ScoreResponse, Scorer, StubScorer, TinyMlmScorer};

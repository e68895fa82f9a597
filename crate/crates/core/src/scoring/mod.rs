//! The interface between bias measures and the models they score.

pub mod protocol;
pub mod scorer;

pub use protocol::{Protocol, ScoreRequest, ScoreResponse};
pub use scorer::{score_all, AttentionLayers, DumpScorer, Scorer, StubScorer, TinyMlmScorer};

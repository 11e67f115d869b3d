//! Retrospect-then-compare decoding for multimodal language models.
//!
//! The crate is model-agnostic: embeddings and logits are ingested as data
//! through the [`scorer::Scorer`] trait. At each decoding step the scorer is
//! queried with the test visual, a diffused copy of it and `k` retrieved
//! references under an identical textual prefix; the resulting logits are
//! contrasted with adaptive coefficients before token selection.
//!
//! Modules:
//! - [`logits`]: softmax, head vocabulary, adaptive coefficients, contrast, JSD.
//! - [`index`]: reference records, exact cosine retrieval, BLEU@1 rerank.
//! - [`diffusion`]: forward noising with a linear beta schedule.
//! - [`scorer`]: the scorer contract, an affine toy scorer and recorded traces.
//! - [`decoder`]: per-step orchestration, token selection, breakdown analysis.
//! - [`eval`]: yes/no parsing and POPE / MME style metrics.

pub mod decoder;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod index;
pub mod logits;
pub mod rng;
pub mod scorer;

pub use decoder::{
    analyze, decode_sequence, decode_step, select_token, BreakdownRow, CandidateScores,
    DecodeConfig, DecodeOutput, Report, StepBreakdown, Strategy, Visuals,
};
pub use diffusion::{diffuse, DiffusionSchedule, Tensor};
pub use error::{Error, Result};
pub use eval::{
    mme_score, parse_yes_no, pope_metrics, Answer, PopeMetrics, SubtaskScore, VqaSample,
};
pub use index::{Index, Query, ReferenceRecord, RetrievalResult, Split};
pub use logits::{AdaptiveCoeffs, HeadVocab, LogitsVector};
pub use scorer::{LogitTrace, Scorer, ToyScorer, Visual, Vocabulary};

/// Index of a candidate in the scorer vocabulary.
pub type TokenId = u32;

//! Corpus analytics and toy-scale headline generation.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`corpus`] — ingest, filter, split, and index post collections (JSONL).
//! 2. [`similarity`] — tokenization and the four text-similarity metrics.
//! 3. [`observation`] — trend and personal-style studies over a corpus.
//! 4. [`buzzword`] — vocabulary, per-month token frequencies, buzzword lists.
//! 5. [`model`] — a small encoder-decoder transformer with two preference
//!    extractors (style and trend) fused into the encoder states.
//! 6. [`training`] — corruption, losses with analytic gradients, Adam, and
//!    the pretraining/training loops.
//! 7. [`generate`] — beam search and end-to-end headline generation.
//! 8. [`rouge`] — ROUGE-1/2/L evaluation.
//! 9. [`synth`] — seeded synthetic corpora with planted style/trend signals.

pub mod buzzword;
pub mod corpus;
pub mod generate;
pub mod model;
pub mod observation;
pub mod rouge;
pub mod similarity;
pub mod symbols;
pub mod synth;
pub mod training;

pub use buzzword::{BuzzwordConfig, BuzzwordList, FrequencyTable, Vocabulary};
pub use corpus::{Corpus, Post, SplitSpec, TimeStep};
pub use generate::{GenerationConfig, Hypothesis};
pub use model::{ModelConfig, ModelParams};
pub use observation::{SeasonSpec, StyleReport, TrendReport};
pub use rouge::RougeScore;
pub use similarity::{SimilarityMetric, TokenSeq};
pub use synth::SynthConfig;
pub use training::{CorruptionConfig, TrainConfig};

//! Hierarchical multi-label classification of research proposals over a
//! discipline taxonomy, with an interdisciplinarity graph built from topic
//! co-occurrence.
//!
//! The pipeline, end to end:
//!
//! 1. [`taxonomy`] — the partially ordered discipline hierarchy and the
//!    topic-path codec that turns code sets into per-level label sets.
//! 2. [`corpus`] — proposal data model, tokenization, JSONL I/O, and a
//!    seeded synthetic corpus generator with planted vocabularies.
//! 3. [`idgraph`] — directed weighted graph over disciplines, edge weights
//!    from per-pair Rao-Stirling statistics, k-hop neighborhood sampling.
//! 4. [`tensor`] — a small dense f64 tensor engine with reverse-mode
//!    autodiff, attention/transformer/GCN blocks, and Adam.
//! 5. [`model`] — the level-wise classifier: document encoder, graph
//!    knowledge encoder, attention fusion, per-level sigmoid heads.
//! 6. [`trainer`] — teacher-forced training loop with warm-up, logging,
//!    checkpointing and early stopping.
//! 7. [`metrics`] — micro/macro F1, the prefix-divergence label distance,
//!    and the wrong-case breakdown.

pub mod corpus;
pub mod idgraph;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod taxonomy;
pub mod tensor;
pub mod trainer;

pub use corpus::{CorpusConfig, Proposal, TokenizedProposal, Vocabulary};
pub use idgraph::{InterGraph, SampledNeighborhood, TopicStats};
pub use metrics::{DistanceReport, F1Report, WrongCaseReport};
pub use model::{ModelConfig, Prediction, StepOutput};
pub use taxonomy::{Discipline, DisciplineTaxonomy, LevelSet, NodeId, TopicPath};
pub use tensor::{ParamStore, Tape, Tensor};
pub use trainer::{TrainConfig, TrainLog};

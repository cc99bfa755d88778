//! Few-shot relation extraction with generated knowledge, role-aware
//! masked-span pre-training and span-level contrastive learning.

pub mod config;
pub mod corpus;
pub mod evalkit;
pub mod genkit;
pub mod maskgen;
pub mod neuralcore;
pub mod objectives;
pub mod pipeline;
pub mod seed;
pub mod toy;
pub mod trainloop;

pub use config::{ExperimentConfig, Variant};
pub use corpus::{Dataset, Provenance, RelationInstance, RelationSchema, Span};
pub use evalkit::EvalResult;
pub use neuralcore::{Model, ModelConfig, ModelParams, Vocabulary};
pub use trainloop::{RelationModel, TrainReport};

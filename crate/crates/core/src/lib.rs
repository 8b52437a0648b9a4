//! Knowledge-anchored manifold transport for cross-modal prompt tuning.
//!
//! Class prompts are factorized into learnable context tokens and frozen
//! class tokens, encoded by a frozen map into a joint embedding space, and
//! trained with three terms: cross-entropy on high-end images, anchoring to
//! fixed textual prototypes, and an entropic fused Gromov-Wasserstein
//! alignment of the low-end class embeddings onto the high-end ones. No
//! low-end image is used before evaluation.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod evalkit;
mod linalg;
pub mod objectives;
pub mod prompt_space;
pub mod trainer;
pub mod transport;

pub use datagen::{
    generate, load_embeddings, save_embeddings, EmbeddingRecord, LabeledEmbeddingSet, Split,
    SyntheticData, SyntheticSpec,
};
pub use error::{Error, Result};
pub use evalkit::{harmonic_mean, macro_f1, ConfusionMatrix, ModalityMetrics, RunReport, Summary};
pub use objectives::{LossBreakdown, LossWeights};
pub use prompt_space::{
    AnchorPrototypes, ClassEmbeddings, FrozenEncoder, Modality, PerModality, PromptBank,
    PromptConfig,
};
pub use trainer::{AblationCell, AblationSpec, TrainConfig};
pub use transport::{SolverConfig, TransportPlan, TransportProblem};

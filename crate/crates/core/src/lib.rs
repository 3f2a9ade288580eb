//! Core library for context-gated sparse low-rank adapters.
//!
//! Everything is self-contained f64 numerics: a small dense matrix type,
//! a deterministic counter-seeded RNG, the frozen sparse ternary
//! projection, the neuromodulatory gate, top-k expert routing, the
//! orthogonality-regularised losses with hand-derived gradients, AdamW
//! with warmup+cosine, training-free adapter merging, and the sequential
//! continual-learning protocol.

pub mod adapter;
pub mod checkpoint;
pub mod continual;
pub mod error;
pub mod gate;
pub mod losses;
pub mod merging;
pub mod numerics;
pub mod optim;
pub mod projection;
pub mod runner;
pub mod tasks;

pub use adapter::{AdapterConfig, AdapterGrads, AdapterState, ForwardTrace, Variant};
pub use checkpoint::{Checkpoint, Provenance};
pub use continual::{backward_transfer, run_sequence, AccuracyMatrix, SequenceReport};
pub use error::{Error, Result};
pub use gate::{GateGrads, GateParams, GateTape};
pub use losses::{LossConfig, Target, TaskLossKind};
pub use merging::{merge, subspace_overlap_report, MergeMethod, MergeRecipe};
pub use numerics::matrix::Matrix;
pub use numerics::rng::{Rng, Stream};
pub use optim::{eval_score, eval_split, train_epochs, AdamState, EpochMetrics, OptimizerConfig};
pub use projection::SparseTernaryProjection;
pub use runner::{RunConfig, Sweep};
pub use tasks::{base_map, gen_contextual_regression, gen_task_family, TaskDataset, TaskGenSpec};

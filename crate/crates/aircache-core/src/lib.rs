//! KV cache compression for vision-language decoding at desk scale.
//!
//! The crate provides the pieces of an attention-guided cache eviction
//! pipeline: dense kernels ([`linalg`]), attention map construction
//! ([`attention`]), visual-token importance scoring ([`scorer`]),
//! layer-wise budget allocation ([`budget`]), the per-layer KV store
//! ([`cache`]), and a deterministic toy decoder ([`model`]) used to
//! exercise everything end to end.
//!
//! The crate is `no_std` + `alloc`; all IO lives in the companion
//! bench crate.

#![no_std]
#![deny(unsafe_code)]
// Index loops mirror the row/column arithmetic of the kernels.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod attention;
pub mod budget;
pub mod cache;
pub mod error;
pub mod linalg;
pub mod model;
pub mod scorer;

pub use attention::{AttentionSnapshot, TokenLayout};
pub use budget::{AllocationMode, LayerBudgetPlan, LayerStats};
pub use cache::{Audience, CompressionConfig, Eviction, LayerCache, MemoryReport, Segment};
pub use error::CoreError;
pub use linalg::Matrix;
pub use model::{NeedleScenario, ToyModel, ToyModelConfig};
pub use scorer::{ImportanceProfile, ScorerPolicy};

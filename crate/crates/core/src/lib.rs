// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token attribution for decoder-only transformers.
//!
//! The crate is organised around a single interchange object, the
//! [`AttentionTrace`]: per generation step, the attention row of the query that
//! predicts the next token, for every layer and head.
//!
//! - [`trace`]: the trace data model and the `.attrc` binary container.
//! - [`model`]: a small deterministic decoder with KV cache, attention capture
//!   and pre-softmax key masking.
//! - [`macs`]: multi-layer attention consistency scores (redistribution, head
//!   pooling, floor, layer-wise Hadamard product, Z-scoring), streaming and batch.
//! - [`baselines`]: attention rollout and random attribution.
//! - [`eval`]: average precision against answer spans and attention-masking
//!   perturbation curves (MIF / LIF / SRG) over several base metrics.
//! - [`synthetic`]: trace and corpus fixtures with known ground truth.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod macs;
pub mod model;
pub mod synthetic;
pub mod trace;

pub use baselines::{random_attribution, rollout_attribution, RolloutConfig};
pub use error::{Error, Result};
pub use macs::{macs_run, macs_step, AggregateMode, AttributionMap, MacsConfig, MacsStream, Pooling, StdMode};
pub use model::{GenerationRecord, Model, ModelConfig, ModelMode};
pub use trace::{read_trace, validate_trace, write_trace, AttentionTrace, Segment, StepAttention, TokenMeta};

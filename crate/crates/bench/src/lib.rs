// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the criterion benchmarks.

use attnscope_core::synthetic::{random_trace, TraceShape};
use attnscope_core::{AttentionTrace, Model, ModelConfig, Result};

/// Decoder sized for a prompt of `context` tokens plus `max_new` generated ones.
pub fn bench_model(context: usize, max_new: usize) -> Result<Model> {
    Model::new(ModelConfig { max_seq: context + max_new, ..ModelConfig::default() })
}

/// Deterministic prompt of `len` tokens below `vocab`.
pub fn bench_prompt(len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|i| (i * 31 % vocab) as u32).collect()
}

/// Random trace with the default model's layer and head counts.
pub fn bench_trace(context: usize, steps: usize, full_matrices: bool) -> AttentionTrace {
    let cfg = ModelConfig::default();
    let shape = TraceShape { num_layers: cfg.num_layers, num_heads: cfg.num_heads, input_len: context, num_steps: steps };
    random_trace(context as u64, shape, full_matrices)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by trace I/O, the toy decoder, attribution and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// The byte stream is not an `.attrc` container (bad magic, bad manifest).
    #[error("format error: {0}")]
    Format(String),

    /// A per-step attention blob ended early.
    #[error("truncated attention blob at step {step}")]
    TruncatedStep {
        /// 1-based generation step whose blob is incomplete.
        step: usize,
    },

    /// The prefill (full-matrix) blob ended early.
    #[error("truncated prefill attention blob")]
    TruncatedPrefill,

    /// Shapes disagree (manifest vs blob, trace vs step, vector lengths).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A dimension does not fit the 32-bit index space of the container.
    #[error("dimension overflow: {0}")]
    Overflow(String),

    /// A configuration invariant does not hold.
    #[error("invalid config: {0}")]
    Config(String),

    /// Prompt plus requested tokens exceed the model context.
    #[error("sequence overflow: {needed} positions requested, max_seq is {max_seq}")]
    SequenceOverflow { needed: usize, max_seq: usize },

    /// A masked key position lies outside the prompt.
    #[error("masked position {position} is outside the prompt (length {prompt_len})")]
    MaskOutOfRange { position: usize, prompt_len: usize },

    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// The trace lacks data the requested method needs.
    #[error("capability error: {0}")]
    Capability(String),

    /// A perturbation curve cannot be normalised by its unperturbed value.
    #[error("cannot normalise {metric} curve: unperturbed value {baseline} is below 1e-12")]
    Normalization { metric: String, baseline: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

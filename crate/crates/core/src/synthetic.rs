// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures with known structure: random valid traces, planted-signal and
//! late-emergence traces, and copy-task / random-model sample corpora.

use std::ops::Range;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::trace::{AttentionTrace, PrefillAttention, Segment, StepAttention, TokenMeta};

/// Shape of a synthetic trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceShape {
    /// `L + 1`.
    pub num_layers: usize,
    pub num_heads: usize,
    pub input_len: usize,
    pub num_steps: usize,
}

fn write_normalized(dst: &mut [f32], raw: &[f64]) {
    let sum: f64 = raw.iter().sum();
    for (d, v) in dst.iter_mut().zip(raw) {
        *d = (v / sum) as f32;
    }
}

/// Random softmax-like row of length `len`. Sharpness varies so rows range
/// from near-uniform to near-one-hot.
fn random_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let temp = rng.random_range(0.2..3.0);
    (0..len).map(|_| (rng.random::<f64>() * 4.0 / temp).exp()).collect()
}

fn plain_tokens(rng: &mut ChaCha8Rng, n: usize, steps: usize, vocab: u32) -> Vec<TokenMeta> {
    (0..n + steps)
        .map(|i| {
            let id = rng.random_range(0..vocab);
            TokenMeta {
                token_id: id,
                position: i,
                segment: if i < n { Segment::Context } else { Segment::Generated },
                text: format!("t{id}"),
            }
        })
        .collect()
}

/// Builds a trace whose rows come from `row(step, layer, head, query, len)`;
/// `query` is the absolute query position. Step `k` uses query `N + k - 2`.
fn build_trace<F>(rng: &mut ChaCha8Rng, shape: TraceShape, full: bool, mut row: F) -> AttentionTrace
where
    F: FnMut(&mut ChaCha8Rng, usize, usize, usize, usize) -> Vec<f64>,
{
    let TraceShape { num_layers, num_heads, input_len: n, num_steps } = shape;
    let prefill = full.then(|| {
        let mut p = PrefillAttention::zeros(num_layers, num_heads, n);
        for l in 0..num_layers {
            for h in 0..num_heads {
                for q in 0..n {
                    let r = row(rng, l, h, q, q + 1);
                    write_normalized(p.row_mut(l, h, q), &r);
                }
            }
        }
        p
    });
    let steps = (1..=num_steps)
        .map(|k| {
            let len = n + k - 1;
            let mut s = StepAttention::zeros(k, num_layers, num_heads, len);
            for l in 0..num_layers {
                for h in 0..num_heads {
                    match (&prefill, k) {
                        // the step-1 query is the last prompt token
                        (Some(p), 1) => s.row_mut(l, h).copy_from_slice(p.row(l, h, n - 1)),
                        _ => {
                            let r = row(rng, l, h, len - 1, len);
                            write_normalized(s.row_mut(l, h), &r);
                        }
                    }
                }
            }
            s
        })
        .collect();
    let tokens = plain_tokens(rng, n, num_steps, 64);
    AttentionTrace { num_layers, num_heads, input_len: n, tokens, steps, answers: Vec::new(), prefill, provenance: None }
}

/// A valid trace with random attention rows.
pub fn random_trace(seed: u64, shape: TraceShape, full_matrices: bool) -> AttentionTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_trace(&mut rng, shape, full_matrices, |rng, _, _, _, len| random_row(rng, len))
}

/// A random shape within the given bounds (all at least 1).
pub fn random_shape(rng: &mut impl Rng, max_layers: usize, max_heads: usize, max_input: usize, max_steps: usize) -> TraceShape {
    TraceShape {
        num_layers: rng.random_range(1..=max_layers),
        num_heads: rng.random_range(1..=max_heads),
        input_len: rng.random_range(1..=max_input),
        num_steps: rng.random_range(1..=max_steps),
    }
}

/// Weight every layer and head puts on the planted token.
pub const PLANTED_WEIGHT: f64 = 0.9;

/// Planted-signal trace: every layer, head and step gives `planted` weight
/// [`PLANTED_WEIGHT`]; the other keys share the residue at random. The
/// context span is `context` and the single answer is `[planted]`. With
/// `full_matrices`, prefill queries that can see `planted` follow the same
/// pattern and earlier ones are random.
pub fn planted_trace(seed: u64, shape: TraceShape, context: Range<usize>, planted: usize, full_matrices: bool) -> Result<AttentionTrace> {
    if !context.contains(&planted) || context.end > shape.input_len {
        return Err(Error::Dimension(format!("planted token {planted} outside context {context:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = build_trace(&mut rng, shape, full_matrices, |rng, _, _, _, len| {
        if planted >= len {
            return random_row(rng, len);
        }
        let mut r: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        r[planted] = 0.0;
        let rest: f64 = r.iter().sum();
        if rest == 0.0 {
            return r.iter().enumerate().map(|(i, _)| if i == planted { 1.0 } else { 0.0 }).collect();
        }
        r.iter_mut().for_each(|v| *v *= (1.0 - PLANTED_WEIGHT) / rest);
        r[planted] = PLANTED_WEIGHT;
        r
    });
    trace.set_context_span(context)?;
    trace.answers = vec![vec![planted]];
    Ok(trace)
}

/// Late-emergence trace with full matrices and one step.
///
/// Every layer below the last routes each query entirely to position 0. In
/// the last layer the step query puts [`PLANTED_WEIGHT`] on `planted` and
/// spreads the rest at random; the other last-layer rows are random.
pub fn late_emergence_trace(seed: u64, num_layers: usize, num_heads: usize, input_len: usize, planted: usize) -> Result<AttentionTrace> {
    if num_layers < 2 || planted == 0 || planted + 1 >= input_len {
        return Err(Error::Config(format!(
            "late emergence needs >= 2 layers and 0 < planted < N - 1 (layers {num_layers}, N {input_len}, planted {planted})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = TraceShape { num_layers, num_heads, input_len, num_steps: 1 };
    let last = num_layers - 1;
    let mut trace = build_trace(&mut rng, shape, true, |rng, l, _, q, len| {
        if l < last {
            let mut r = vec![0.0; len];
            r[0] = 1.0;
            r
        } else if q == input_len - 1 {
            let mut r: Vec<f64> = (0..len).map(|_| rng.random_range(0.5..1.5)).collect();
            r[planted] = 0.0;
            let rest: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v *= (1.0 - PLANTED_WEIGHT) / rest);
            r[planted] = PLANTED_WEIGHT;
            r
        } else {
            random_row(rng, len)
        }
    });
    trace.set_context_span(0..input_len)?;
    trace.answers = vec![vec![planted]];
    Ok(trace)
}

/// One prompt of an evaluation corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub prompt_tokens: Vec<u32>,
    pub context_span: (usize, usize),
    pub answers: Vec<Vec<usize>>,
}

impl Sample {
    pub fn context_positions(&self) -> Vec<usize> {
        (self.context_span.0..self.context_span.1).collect()
    }
}

/// Copy-task corpus settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopyCorpusConfig {
    pub vocab_size: usize,
    pub num_heads: usize,
    pub context_len: usize,
    pub instruction_len: usize,
    pub max_new: usize,
}

impl Default for CopyCorpusConfig {
    fn default() -> Self {
        Self { vocab_size: 32, num_heads: 2, context_len: 40, instruction_len: 2, max_new: 4 }
    }
}

impl CopyCorpusConfig {
    pub fn prompt_len(&self) -> usize {
        self.context_len + 2 * self.instruction_len
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig::copy_task(self.vocab_size, self.num_heads, self.prompt_len() + self.max_new, seed)
    }
}

/// Copy-task samples: instruction filler, then `context_len` filler tokens
/// of which exactly one (the answer) is a source-class token, then more
/// instruction filler.
pub fn copy_task_corpus(config: &CopyCorpusConfig, num_samples: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = Model::copy_source_bound(config.vocab_size) as u32;
    let v = config.vocab_size as u32;
    (0..num_samples)
        .map(|i| {
            let start = config.instruction_len;
            let end = start + config.context_len;
            let mut prompt: Vec<u32> = (0..config.prompt_len()).map(|_| rng.random_range(bound..v)).collect();
            let source = rng.random_range(start..end);
            prompt[source] = rng.random_range(0..bound);
            Sample { id: format!("copy-{i:03}"), prompt_tokens: prompt, context_span: (start, end), answers: vec![vec![source]] }
        })
        .collect()
}

/// Random-token samples for a random-init model; the answer is a random
/// context position.
pub fn random_corpus(vocab_size: usize, prompt_len: usize, context: Range<usize>, num_samples: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx: Vec<usize> = context.clone().collect();
    (0..num_samples)
        .map(|i| {
            let prompt = (0..prompt_len).map(|_| rng.random_range(0..vocab_size as u32)).collect();
            let answer = *ctx.choose(&mut rng).expect("nonempty context");
            Sample { id: format!("rand-{i:03}"), prompt_tokens: prompt, context_span: (context.start, context.end), answers: vec![vec![answer]] }
        })
        .collect()
}

/// Generates the sample with full segment labels and answers attached.
pub fn trace_sample(model: &Model, sample: &Sample, max_new: usize, full_matrices: bool) -> Result<AttentionTrace> {
    let mut trace = model.generate_with_capture(&sample.prompt_tokens, max_new, &[], full_matrices)?.trace;
    trace.set_context_span(sample.context_span.0..sample.context_span.1)?;
    trace.answers = sample.answers.clone();
    Ok(trace)
}

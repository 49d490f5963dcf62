// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multi-layer attention consistency scores.
//!
//! For each generation step the query row of every layer and head is split
//! into attention to the `N` input tokens and attention to previously
//! generated tokens. Output attention is spread uniformly back over the
//! inputs, heads are pooled (max by default), the pooled vector is lifted by
//! a floor `m = alpha * m' + (1 - alpha)`, and the floored vectors of all
//! layers are multiplied elementwise. The resulting consistency vector is
//! Z-scored over the input tokens.
//!
//! [`MacsStream`] consumes steps one at a time as a decoder produces them;
//! [`macs_run`] processes a whole trace layer-major. Both produce identical
//! [`AttributionMap`]s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AttentionTrace, StepAttention};

/// Standard deviations below this are treated as zero by [`z_score`].
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Mean,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divide by `N`.
    Population,
    /// Divide by `N - 1`.
    Sample,
}

/// Which per-step vectors are averaged into [`AttributionMap::aggregate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    ZScore,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacsConfig {
    pub alpha: f64,
    pub pooling: Pooling,
    pub redistribute: bool,
    pub zscore_std: StdMode,
    pub aggregate: AggregateMode,
}

impl Default for MacsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            pooling: Pooling::Max,
            redistribute: true,
            zscore_std: StdMode::Population,
            aggregate: AggregateMode::ZScore,
        }
    }
}

impl MacsConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Adds the mean attention paid to previous outputs onto every input token.
///
/// Total mass is preserved: `sum(result) == sum(a_inputs) + sum(a_outputs)`.
pub fn redistribute(a_inputs: &[f64], a_outputs: &[f64]) -> Result<Vec<f64>> {
    if a_inputs.is_empty() {
        return Err(Error::Empty("input attention (N = 0)"));
    }
    let share = a_outputs.iter().sum::<f64>() / a_inputs.len() as f64;
    Ok(a_inputs.iter().map(|a| a + share).collect())
}

/// Elementwise pooling of per-head vectors.
pub fn pool_heads<R: AsRef<[f64]>>(rows: &[R], mode: Pooling) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::Empty("attention heads (H = 0)"))?.as_ref();
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != first.len()) {
        return Err(Error::Dimension(format!(
            "head rows have lengths {} and {}",
            first.len(),
            bad.as_ref().len()
        )));
    }
    let mut out = first.to_vec();
    for row in &rows[1..] {
        for (o, &v) in out.iter_mut().zip(row.as_ref()) {
            match mode {
                Pooling::Max => *o = o.max(v),
                Pooling::Min => *o = o.min(v),
                Pooling::Mean => *o += v,
            }
        }
    }
    if mode == Pooling::Mean {
        let h = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= h);
    }
    Ok(out)
}

/// `m = alpha * m' + (1 - alpha)`; every entry ends up at least `1 - alpha`.
pub fn apply_floor(m_prime: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    Ok(m_prime.iter().map(|v| alpha * v + (1.0 - alpha)).collect())
}

/// Hadamard product of the running consistency vector with a layer's floored vector.
pub fn consistency_update(c_prev: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    if c_prev.len() != m.len() {
        return Err(Error::Dimension(format!("consistency length {} vs layer vector {}", c_prev.len(), m.len())));
    }
    Ok(c_prev.iter().zip(m).map(|(c, m)| c * m).collect())
}

/// Z-scores together with the normalisation constants used.
#[derive(Clone, Debug, PartialEq)]
pub struct ZScores {
    pub z: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Z-scores over all entries. A standard deviation below [`DEGENERATE_STD`]
/// yields all zeros.
pub fn z_score(values: &[f64], mode: StdMode) -> Vec<f64> {
    z_score_stats(values, mode).z
}

pub fn z_score_stats(values: &[f64], mode: StdMode) -> ZScores {
    let n = values.len();
    if n == 0 {
        return ZScores { z: Vec::new(), mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match mode {
        StdMode::Population => n as f64,
        StdMode::Sample => (n as f64 - 1.0).max(0.0),
    };
    let std = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
    let z = if std < DEGENERATE_STD {
        vec![0.0; n]
    } else {
        values.iter().map(|v| (v - mean) / std).collect()
    };
    ZScores { z, mean, std }
}

/// Running state of the layer fold for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyState {
    /// Pooled vector of the last folded layer.
    pub m_prime: Vec<f64>,
    /// Floored vector of the last folded layer.
    pub m: Vec<f64>,
    /// Running product over the folded layers.
    pub c: Vec<f64>,
    /// Number of layers folded so far.
    pub layers: usize,
    alpha: f64,
}

impl ConsistencyState {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { m_prime: Vec::new(), m: Vec::new(), c: Vec::new(), layers: 0, alpha })
    }

    /// Folds one layer's pooled vector: floor, then multiply into `c`
    /// (layer 0 initialises `c` with its floored vector).
    pub fn fold(&mut self, pooled: Vec<f64>) -> Result<()> {
        let m = apply_floor(&pooled, self.alpha)?;
        self.c = if self.layers == 0 { m.clone() } else { consistency_update(&self.c, &m)? };
        self.m_prime = pooled;
        self.m = m;
        self.layers += 1;
        Ok(())
    }
}

fn check_step(step: &StepAttention, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("input attention (N = 0)"));
    }
    if step.step() == 0 || step.key_len() != n + step.step() - 1 {
        return Err(Error::Dimension(format!(
            "step {} has {} keys, expected N + k - 1 = {}",
            step.step(),
            step.key_len(),
            (n + step.step()).saturating_sub(1)
        )));
    }
    if step.num_layers() == 0 || step.num_heads() == 0 {
        return Err(Error::Empty("layers or heads"));
    }
    Ok(())
}

/// Head-pooled (and optionally redistributed) input attention of one layer.
fn pooled_layer(step: &StepAttention, layer: usize, n: usize, config: &MacsConfig) -> Result<Vec<f64>> {
    let heads = (0..step.num_heads())
        .map(|h| {
            let row: Vec<f64> = step.row(layer, h).iter().map(|&v| f64::from(v)).collect();
            let (inputs, outputs) = row.split_at(n);
            if config.redistribute {
                redistribute(inputs, outputs)
            } else {
                Ok(inputs.to_vec())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    pool_heads(&heads, config.pooling)
}

/// Scores of one generation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepScores {
    pub z: Vec<f64>,
    /// Raw score vector before Z-scoring (the final consistency vector for MACS).
    pub raw: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl StepScores {
    pub fn from_raw(raw: Vec<f64>, mode: StdMode) -> Self {
        let ZScores { z, mean, std } = z_score_stats(&raw, mode);
        Self { z, raw, mean, std }
    }
}

/// MACS for a single step with `n` input tokens.
pub fn macs_step(step: &StepAttention, n: usize, config: &MacsConfig) -> Result<StepScores> {
    config.validate()?;
    check_step(step, n)?;
    let mut state = ConsistencyState::new(config.alpha)?;
    for layer in 0..step.num_layers() {
        state.fold(pooled_layer(step, layer, n, config)?)?;
    }
    Ok(StepScores::from_raw(state.c, config.zscore_std))
}

/// Per-step attribution scores over the `N` input tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// `[step][N]` Z-scores.
    pub per_step_z: Vec<Vec<f64>>,
    /// `[step][N]` scores before Z-scoring.
    pub per_step_raw: Vec<Vec<f64>>,
    /// Elementwise mean across steps, used to rank tokens for perturbation.
    pub aggregate: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AttributionMap {
    pub fn from_steps(steps: Vec<StepScores>, aggregate: AggregateMode) -> Result<Self> {
        let n = steps.first().ok_or(Error::Empty("attribution steps"))?.z.len();
        let mut per_step_z = Vec::with_capacity(steps.len());
        let mut per_step_raw = Vec::with_capacity(steps.len());
        let mut mean = Vec::with_capacity(steps.len());
        let mut std = Vec::with_capacity(steps.len());
        for s in steps {
            if s.z.len() != n || s.raw.len() != n {
                return Err(Error::Dimension("steps cover different numbers of tokens".into()));
            }
            per_step_z.push(s.z);
            per_step_raw.push(s.raw);
            mean.push(s.mean);
            std.push(s.std);
        }
        let source = match aggregate {
            AggregateMode::ZScore => &per_step_z,
            AggregateMode::Raw => &per_step_raw,
        };
        let k = source.len() as f64;
        let mut agg = vec![0.0; n];
        for row in source {
            for (a, v) in agg.iter_mut().zip(row) {
                *a += v;
            }
        }
        agg.iter_mut().for_each(|a| *a /= k);
        Ok(Self { per_step_z, per_step_raw, aggregate: agg, mean, std })
    }

    pub fn num_steps(&self) -> usize {
        self.per_step_z.len()
    }

    pub fn input_len(&self) -> usize {
        self.aggregate.len()
    }
}

/// Incremental MACS: push steps as the decoder emits them.
#[derive(Clone, Debug)]
pub struct MacsStream {
    config: MacsConfig,
    input_len: usize,
    steps: Vec<StepScores>,
}

impl MacsStream {
    pub fn new(input_len: usize, config: MacsConfig) -> Result<Self> {
        config.validate()?;
        if input_len == 0 {
            return Err(Error::Empty("input attention (N = 0)"));
        }
        Ok(Self { config, input_len, steps: Vec::new() })
    }

    /// Scores one step and returns its Z-scores.
    pub fn push(&mut self, step: &StepAttention) -> Result<&[f64]> {
        if step.step() != self.steps.len() + 1 {
            return Err(Error::Dimension(format!("expected step {}, got {}", self.steps.len() + 1, step.step())));
        }
        let scores = macs_step(step, self.input_len, &self.config)?;
        self.steps.push(scores);
        Ok(&self.steps.last().expect("just pushed").z)
    }

    pub fn steps(&self) -> &[StepScores] {
        &self.steps
    }

    pub fn finish(self) -> Result<AttributionMap> {
        AttributionMap::from_steps(self.steps, self.config.aggregate)
    }
}

/// Batch MACS over a whole trace.
///
/// Folds layer by layer across all steps at once; equal to feeding the
/// steps through [`MacsStream`].
pub fn macs_run(trace: &AttentionTrace, config: &MacsConfig) -> Result<AttributionMap> {
    config.validate()?;
    if trace.steps.is_empty() {
        return Err(Error::Empty("trace steps"));
    }
    let n = trace.input_len;
    for step in &trace.steps {
        check_step(step, n)?;
        if step.num_layers() != trace.num_layers || step.num_heads() != trace.num_heads {
            return Err(Error::Dimension(format!("step {} layer/head counts disagree with trace", step.step())));
        }
    }
    let mut states = trace
        .steps
        .iter()
        .map(|_| ConsistencyState::new(config.alpha))
        .collect::<Result<Vec<_>>>()?;
    for layer in 0..trace.num_layers {
        for (state, step) in states.iter_mut().zip(&trace.steps) {
            state.fold(pooled_layer(step, layer, n, config)?)?;
        }
    }
    let steps = states
        .into_iter()
        .map(|s| StepScores::from_raw(s.c, config.zscore_std))
        .collect();
    AttributionMap::from_steps(steps, config.aggregate)
}

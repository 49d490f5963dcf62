// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention rollout and random attribution baselines.
//!
//! Both produce [`AttributionMap`]s over the `N` input tokens, Z-scored per
//! step exactly like MACS, so every method shares one evaluation pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macs::{AggregateMode, AttributionMap, StdMode, StepScores};
use crate::trace::AttentionTrace;

/// Dense square matrix, row-major as nested rows.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAggregation {
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Weight of raw attention against the identity: `A' = r A + (1 - r) I`.
    pub residual_mix: f64,
    pub head_agg: HeadAggregation,
    pub renormalize_rows: bool,
    pub zscore_std: StdMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { residual_mix: 0.5, head_agg: HeadAggregation::Mean, renormalize_rows: true, zscore_std: StdMode::Population }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.residual_mix) {
            Ok(())
        } else {
            Err(Error::Config(format!("residual_mix must lie in [0, 1], got {}", self.residual_mix)))
        }
    }
}

/// Head-averaged causal attention matrix of `layer` as seen when predicting
/// step `k`: `(N + k - 1)` square, prefill rows followed by the query rows of
/// steps `2..=k`.
pub fn layer_matrix(trace: &AttentionTrace, k: usize, layer: usize) -> Result<Matrix> {
    let prefill = trace
        .prefill
        .as_ref()
        .ok_or_else(|| Error::Capability("rollout needs a trace captured with full matrices".into()))?;
    if k == 0 || k > trace.steps.len() {
        return Err(Error::Dimension(format!("step {k} out of range 1..={}", trace.steps.len())));
    }
    let n = trace.input_len;
    let size = n + k - 1;
    let heads = trace.num_heads as f64;
    let mut m = vec![vec![0.0; size]; size];
    for (q, row) in m.iter_mut().enumerate() {
        for h in 0..trace.num_heads {
            let src = if q < n { prefill.row(layer, h, q) } else { trace.steps[q - n + 1].row(layer, h) };
            for (dst, &w) in row.iter_mut().zip(src) {
                *dst += f64::from(w) / heads;
            }
        }
    }
    Ok(m)
}

/// `A' = r A + (1 - r) I`, optionally renormalised to unit row sums.
pub fn residual_adjust(a: &Matrix, config: &RolloutConfig) -> Matrix {
    let r = config.residual_mix;
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut out: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(j, &v)| r * v + if i == j { 1.0 - r } else { 0.0 })
                .collect();
            if config.renormalize_rows {
                let s: f64 = out.iter().sum();
                if s > 0.0 {
                    out.iter_mut().for_each(|v| *v /= s);
                }
            }
            out
        })
        .collect()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; n];
            for (aik, brow) in row.iter().zip(b) {
                if *aik != 0.0 {
                    for (o, bkj) in out.iter_mut().zip(brow) {
                        *o += aik * bkj;
                    }
                }
            }
            out
        })
        .collect()
}

/// Full rollout product `A'_L ... A'_0` of per-layer matrices given in layer
/// order `0..=L`.
pub fn rollout_product(layers: &[Matrix], config: &RolloutConfig) -> Result<Matrix> {
    config.validate()?;
    let mut iter = layers.iter();
    let first = iter.next().ok_or(Error::Empty("rollout layers"))?;
    let mut acc = residual_adjust(first, config);
    for layer in iter {
        acc = matmul(&residual_adjust(layer, config), &acc);
    }
    Ok(acc)
}

/// Full rollout matrix for step `k` of a full-matrix trace.
pub fn rollout_matrix(trace: &AttentionTrace, k: usize, config: &RolloutConfig) -> Result<Matrix> {
    let layers = (0..trace.num_layers).map(|l| layer_matrix(trace, k, l)).collect::<Result<Vec<_>>>()?;
    rollout_product(&layers, config)
}

/// Last row of the rollout product for step `k`, computed as a chain of
/// vector-matrix products from the top layer down.
pub fn rollout_row(trace: &AttentionTrace, k: usize, config: &RolloutConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let size = trace.input_len + k - 1;
    let mut v = vec![0.0; size];
    v[size - 1] = 1.0;
    for layer in (0..trace.num_layers).rev() {
        let a = residual_adjust(&layer_matrix(trace, k, layer)?, config);
        let mut next = vec![0.0; size];
        for (vi, row) in v.iter().zip(&a) {
            if *vi != 0.0 {
                for (nj, aij) in next.iter_mut().zip(row) {
                    *nj += vi * aij;
                }
            }
        }
        v = next;
    }
    Ok(v)
}

/// Rollout attribution: per step, the query row of the rollout product
/// restricted to the input columns, then Z-scored.
pub fn rollout_attribution(trace: &AttentionTrace, config: &RolloutConfig) -> Result<AttributionMap> {
    config.validate()?;
    if !trace.full_matrices() {
        return Err(Error::Capability("rollout needs a trace captured with full matrices".into()));
    }
    if trace.steps.is_empty() {
        return Err(Error::Empty("trace steps"));
    }
    let steps = (1..=trace.steps.len())
        .map(|k| {
            let mut row = rollout_row(trace, k, config)?;
            row.truncate(trace.input_len);
            Ok(StepScores::from_raw(row, config.zscore_std))
        })
        .collect::<Result<Vec<_>>>()?;
    AttributionMap::from_steps(steps, AggregateMode::ZScore)
}

/// I.i.d. uniform scores per step, Z-scored; determined by `seed`.
pub fn random_attribution(n: usize, num_steps: usize, seed: u64) -> Result<AttributionMap> {
    if n == 0 {
        return Err(Error::Empty("input tokens (N = 0)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (0..num_steps)
        .map(|_| StepScores::from_raw((0..n).map(|_| rng.random::<f64>()).collect(), StdMode::Population))
        .collect();
    AttributionMap::from_steps(steps, AggregateMode::ZScore)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Average precision against answer spans and token orderings for perturbation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macs::AttributionMap;

/// Indices sorted by descending score; equal scores keep ascending index order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Average precision of the ranking induced by `y_score`.
///
/// Every rank position is its own threshold (ties are broken by ascending
/// index), so AP is the mean of precision@r over the ranks `r` holding a
/// positive. All-negative labels give 0.0.
pub fn average_precision(y_true: &[bool], y_score: &[f64]) -> Result<f64> {
    if y_true.len() != y_score.len() {
        return Err(Error::Dimension(format!(
            "{} labels vs {} scores",
            y_true.len(),
            y_score.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Empty("average precision inputs"));
    }
    let positives = y_true.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in descending(y_score).iter().enumerate() {
        if y_true[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Best-step AUC-PR of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAucPr {
    /// Maximum over steps of the mean AP across answers.
    pub value: f64,
    /// 1-based step attaining the maximum (first one on ties).
    pub best_step: usize,
    /// Mean AP across answers for every step.
    pub per_step: Vec<f64>,
}

/// Per step, AP of the context-restricted Z-scores against every answer span,
/// averaged over answers; the sample score is the maximum over steps.
pub fn sample_auc_pr(map: &AttributionMap, answers: &[Vec<usize>], context_positions: &[usize]) -> Result<SampleAucPr> {
    if answers.is_empty() {
        return Err(Error::Empty("answer spans"));
    }
    if context_positions.is_empty() {
        return Err(Error::Empty("context positions"));
    }
    if map.num_steps() == 0 {
        return Err(Error::Empty("attribution steps"));
    }
    if let Some(&p) = context_positions.iter().find(|&&p| p >= map.input_len()) {
        return Err(Error::Dimension(format!("context position {p} outside {} attributed tokens", map.input_len())));
    }
    let labels: Vec<Vec<bool>> = answers
        .iter()
        .map(|span| context_positions.iter().map(|p| span.contains(p)).collect())
        .collect();
    let mut per_step = Vec::with_capacity(map.num_steps());
    for z in &map.per_step_z {
        let scores: Vec<f64> = context_positions.iter().map(|&p| z[p]).collect();
        let mut total = 0.0;
        for y in &labels {
            total += average_precision(y, &scores)?;
        }
        per_step.push(total / answers.len() as f64);
    }
    let (best, value) = per_step
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    Ok(SampleAucPr { value, best_step: best + 1, per_step })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Most influential first.
    Mif,
    /// Least influential first.
    Lif,
    Random,
}

/// Orders context positions for removal. Ties keep ascending position in
/// both MIF and LIF; `Random` is a seeded shuffle.
pub fn rank_tokens(map: &AttributionMap, context_positions: &[usize], ordering: Ordering, seed: u64) -> Vec<usize> {
    rank_by_scores(&map.aggregate, context_positions, ordering, seed)
}

pub fn rank_by_scores(scores: &[f64], context_positions: &[usize], ordering: Ordering, seed: u64) -> Vec<usize> {
    let mut out = context_positions.to_vec();
    match ordering {
        Ordering::Mif => out.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))),
        Ordering::Lif => out.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))),
        Ordering::Random => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    out
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-masking perturbation curves.
//!
//! For every fraction `s` of the schedule the first `floor(s * N_ctx)` tokens
//! of an ordering are masked, the model regenerates from scratch with the
//! same greedy decoding and length, and each base metric is measured:
//!
//! - mean logits and perplexity: the masked model teacher-forced on the
//!   original generated tokens;
//! - ROUGE-L and BLEU: the masked model's own free-run output against the
//!   original generation.
//!
//! Values are normalised by the unmasked value and integrated with the
//! trapezoid rule over the schedule, divided by its span.

use serde::{Deserialize, Serialize};

use super::ranking::Ordering;
use super::text::{bleu, rouge_l};
use crate::error::{Error, Result};
use crate::model::Model;

/// Unperturbed metric values below this cannot normalise a curve.
pub const MIN_BASELINE: f64 = 1e-12;

/// Guards `floor(s * n)` against products like `0.29 * 100 = 28.999...`.
const COUNT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FractionSchedule(Vec<f64>);

impl Default for FractionSchedule {
    fn default() -> Self {
        Self(vec![0.0, 0.01, 0.05, 0.10, 0.15, 0.20])
    }
}

impl TryFrom<Vec<f64>> for FractionSchedule {
    type Error = Error;

    fn try_from(fractions: Vec<f64>) -> Result<Self> {
        Self::new(fractions)
    }
}

impl From<FractionSchedule> for Vec<f64> {
    fn from(s: FractionSchedule) -> Self {
        s.0
    }
}

impl FractionSchedule {
    /// Strictly increasing fractions starting at exactly 0 and ending at most
    /// 1, with at least one non-zero fraction.
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.first() != Some(&0.0) {
            return Err(Error::Config("fraction schedule must start at 0".into()));
        }
        if fractions.len() < 2 {
            return Err(Error::Config("fraction schedule needs at least one non-zero fraction".into()));
        }
        if fractions.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Config("fraction schedule must be strictly increasing".into()));
        }
        if fractions[fractions.len() - 1] > 1.0 {
            return Err(Error::Config("fractions cannot exceed 1".into()));
        }
        Ok(Self(fractions))
    }

    pub fn fractions(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of tokens masked at fraction index `i` out of `n_ctx`.
    pub fn masked_count(&self, i: usize, n_ctx: usize) -> usize {
        ((self.0[i] * n_ctx as f64) + COUNT_EPS).floor() as usize
    }

    /// Trapezoid integral of `curve` over the schedule divided by its span.
    ///
    /// The span is accumulated from the same interval widths, so a constant
    /// curve of ones integrates to exactly 1.
    pub fn auc(&self, curve: &[f64]) -> Result<f64> {
        if curve.len() != self.0.len() {
            return Err(Error::Dimension(format!("curve has {} points, schedule {}", curve.len(), self.0.len())));
        }
        let mut area = 0.0;
        let mut span = 0.0;
        for j in 1..self.0.len() {
            let width = self.0[j] - self.0[j - 1];
            area += (curve[j] + curve[j - 1]) / 2.0 * width;
            span += width;
        }
        Ok(area / span)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    MeanLogits,
    Perplexity,
    RougeL,
    Bleu,
}

impl BaseMetric {
    pub const ALL: [BaseMetric; 4] = [BaseMetric::MeanLogits, BaseMetric::Perplexity, BaseMetric::RougeL, BaseMetric::Bleu];

    pub fn name(self) -> &'static str {
        match self {
            BaseMetric::MeanLogits => "mean_logits",
            BaseMetric::Perplexity => "perplexity",
            BaseMetric::RougeL => "rouge_l",
            BaseMetric::Bleu => "bleu",
        }
    }

    /// Short column tag (`ML`, `PP`, `RL`, `BLEU`).
    pub fn tag(self) -> &'static str {
        match self {
            BaseMetric::MeanLogits => "ML",
            BaseMetric::Perplexity => "PP",
            BaseMetric::RougeL => "RL",
            BaseMetric::Bleu => "BLEU",
        }
    }
}

impl std::str::FromStr for BaseMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaseMetric::ALL
            .into_iter()
            .find(|m| m.name() == s || m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

impl std::fmt::Display for BaseMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_targets(logits: &[Vec<f64>], targets: &[u32]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Empty("generation"));
    }
    if logits.len() != targets.len() {
        return Err(Error::Dimension(format!("{} logit rows for {} tokens", logits.len(), targets.len())));
    }
    Ok(())
}

/// Mean over steps of the logit assigned to the target token.
pub fn metric_mean_logits(logits: &[Vec<f64>], targets: &[u32]) -> Result<f64> {
    check_targets(logits, targets)?;
    let total: f64 = logits.iter().zip(targets).map(|(row, &t)| row[t as usize]).sum();
    Ok(total / targets.len() as f64)
}

fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[index] - lse
}

/// `exp` of the mean negative log-probability of the target tokens.
pub fn metric_perplexity(logits: &[Vec<f64>], targets: &[u32]) -> Result<f64> {
    check_targets(logits, targets)?;
    let nll: f64 = logits.iter().zip(targets).map(|(row, &t)| -log_softmax_at(row, t as usize)).sum();
    Ok((nll / targets.len() as f64).exp())
}

pub fn metric_rouge_l(reference: &[u32], hypothesis: &[u32]) -> Result<f64> {
    rouge_l(reference, hypothesis)
}

pub fn metric_bleu(reference: &[u32], hypothesis: &[u32]) -> Result<f64> {
    bleu(reference, hypothesis)
}

/// `AUC_LIF - AUC_MIF`.
pub fn srg(auc_lif: f64, auc_mif: f64) -> f64 {
    auc_lif - auc_mif
}

/// Unnormalised metric values along a schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCurve {
    pub metric: BaseMetric,
    pub values: Vec<f64>,
}

/// A normalised perturbation curve and its area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub ordering: Ordering,
    pub metric: BaseMetric,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub auc: f64,
}

impl PerturbationCurve {
    pub fn from_raw(ordering: Ordering, raw: RawCurve, schedule: &FractionSchedule) -> Result<Self> {
        let baseline = raw.values[0];
        if baseline.is_nan() || baseline < MIN_BASELINE {
            return Err(Error::Normalization { metric: raw.metric.name().into(), baseline });
        }
        let normalized: Vec<f64> = raw.values.iter().map(|v| v / baseline).collect();
        let auc = schedule.auc(&normalized)?;
        Ok(Self { ordering, metric: raw.metric, raw: raw.values, normalized, auc })
    }
}

/// Measures every metric along the schedule for one token ordering.
pub fn measure_curves(
    model: &Model,
    prompt: &[u32],
    original: &[u32],
    ordering: &[usize],
    schedule: &FractionSchedule,
    metrics: &[BaseMetric],
) -> Result<Vec<RawCurve>> {
    let mut curves: Vec<RawCurve> = metrics.iter().map(|&m| RawCurve { metric: m, values: Vec::new() }).collect();
    let mut last: Option<(usize, Vec<f64>)> = None;
    for i in 0..schedule.len() {
        let count = schedule.masked_count(i, ordering.len()).min(ordering.len());
        let values = match &last {
            // nested prefixes: same count means the same masked set
            Some((c, v)) if *c == count => v.clone(),
            _ => measure_point(model, prompt, original, &ordering[..count], metrics)?,
        };
        for (curve, v) in curves.iter_mut().zip(&values) {
            curve.values.push(*v);
        }
        last = Some((count, values));
    }
    Ok(curves)
}

fn measure_point(model: &Model, prompt: &[u32], original: &[u32], masked: &[usize], metrics: &[BaseMetric]) -> Result<Vec<f64>> {
    let needs_logits = metrics.iter().any(|m| matches!(m, BaseMetric::MeanLogits | BaseMetric::Perplexity));
    let needs_text = metrics.iter().any(|m| matches!(m, BaseMetric::RougeL | BaseMetric::Bleu));
    let forced = if needs_logits { model.score_continuation(prompt, original, masked)? } else { Vec::new() };
    let free = if needs_text { model.generate_tokens(prompt, original.len(), masked)?.generated_tokens } else { Vec::new() };
    metrics
        .iter()
        .map(|m| match m {
            BaseMetric::MeanLogits => metric_mean_logits(&forced, original),
            BaseMetric::Perplexity => metric_perplexity(&forced, original),
            BaseMetric::RougeL => metric_rouge_l(original, &free),
            BaseMetric::Bleu => metric_bleu(original, &free),
        })
        .collect()
}

/// Single-metric perturbation curve for one ordering.
pub fn perturb_and_measure(
    model: &Model,
    prompt: &[u32],
    original: &[u32],
    ordering_kind: Ordering,
    ordering: &[usize],
    schedule: &FractionSchedule,
    metric: BaseMetric,
) -> Result<PerturbationCurve> {
    let raw = measure_curves(model, prompt, original, ordering, schedule, &[metric])?
        .pop()
        .expect("one metric requested");
    PerturbationCurve::from_raw(ordering_kind, raw, schedule)
}

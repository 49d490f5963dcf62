// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation of attribution maps.
//!
//! [`ranking`] scores maps against ground-truth answer spans (best-step
//! AUC-PR) and derives removal orderings. [`perturb`] masks tokens in those
//! orderings and measures how the generation degrades. [`report`] aggregates
//! per-sample results into corpus means with 95% confidence half-widths.

pub mod perturb;
pub mod ranking;
pub mod report;
pub mod text;

use serde::{Deserialize, Serialize};

pub use perturb::{
    measure_curves, metric_bleu, metric_mean_logits, metric_perplexity, metric_rouge_l, perturb_and_measure, srg, BaseMetric,
    FractionSchedule, PerturbationCurve, RawCurve,
};
pub use ranking::{average_precision, rank_by_scores, rank_tokens, sample_auc_pr, Ordering, SampleAucPr};
pub use report::{aggregate_report, EvalReport, MetricSummary, Summary};

use crate::error::{Error, Result};
use crate::macs::AttributionMap;
use crate::model::Model;

/// AUCs of one base metric for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: BaseMetric,
    pub auc_mif: f64,
    pub auc_lif: f64,
    /// `auc_lif - auc_mif`.
    pub srg: f64,
    /// SRG of two independent random orderings, when requested.
    pub random_srg: Option<f64>,
    pub mif: PerturbationCurve,
    pub lif: PerturbationCurve,
}

/// Everything measured on one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    /// Absent when the sample has no answer spans.
    pub auc_pr: Option<SampleAucPr>,
    pub metrics: Vec<MetricResult>,
    /// Metrics whose unperturbed value was too small to normalise by.
    pub skipped: Vec<BaseMetric>,
}

impl SampleResult {
    pub fn metric(&self, metric: BaseMetric) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Inputs of a single-sample evaluation.
#[derive(Clone, Copy, Debug)]
pub struct SampleInput<'a> {
    pub id: &'a str,
    pub prompt: &'a [u32],
    /// Unperturbed greedy generation.
    pub generated: &'a [u32],
    pub context_positions: &'a [usize],
    pub answers: &'a [Vec<usize>],
}

/// Evaluation settings shared by all samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub schedule: FractionSchedule,
    pub metrics: Vec<BaseMetric>,
    /// Also measure SRG between two independent random orderings.
    pub random_pair: bool,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { schedule: FractionSchedule::default(), metrics: BaseMetric::ALL.to_vec(), random_pair: false, seed: 0 }
    }
}

/// Seeds of the two random orderings used for the random-vs-random SRG.
pub fn random_pair_seeds(seed: u64) -> (u64, u64) {
    (seed.wrapping_mul(2), seed.wrapping_mul(2).wrapping_add(1))
}

/// Scores one sample: best-step AUC-PR (if it has answers) and, per base
/// metric, MIF/LIF perturbation curves from `map`'s aggregate scores.
pub fn evaluate_sample(model: &Model, map: &AttributionMap, input: SampleInput<'_>, settings: &EvalSettings) -> Result<SampleResult> {
    if input.context_positions.is_empty() {
        return Err(Error::Empty("context positions"));
    }
    if input.generated.is_empty() {
        return Err(Error::Empty("generation"));
    }
    if map.input_len() != input.prompt.len() {
        return Err(Error::Dimension(format!("map covers {} tokens, prompt has {}", map.input_len(), input.prompt.len())));
    }
    let auc_pr = if input.answers.is_empty() {
        None
    } else {
        Some(sample_auc_pr(map, input.answers, input.context_positions)?)
    };

    let curves_for = |ordering: &[usize]| {
        measure_curves(model, input.prompt, input.generated, ordering, &settings.schedule, &settings.metrics)
    };
    let mif = curves_for(&rank_tokens(map, input.context_positions, Ordering::Mif, 0))?;
    let lif = curves_for(&rank_tokens(map, input.context_positions, Ordering::Lif, 0))?;
    let random = if settings.random_pair {
        let (a, b) = random_pair_seeds(settings.seed);
        let ra = curves_for(&rank_tokens(map, input.context_positions, Ordering::Random, a))?;
        let rb = curves_for(&rank_tokens(map, input.context_positions, Ordering::Random, b))?;
        Some((ra, rb))
    } else {
        None
    };

    let mut metrics = Vec::new();
    let mut skipped = Vec::new();
    for (i, &metric) in settings.metrics.iter().enumerate() {
        let normalised = (|| -> Result<_> {
            let m = PerturbationCurve::from_raw(Ordering::Mif, mif[i].clone(), &settings.schedule)?;
            let l = PerturbationCurve::from_raw(Ordering::Lif, lif[i].clone(), &settings.schedule)?;
            let r = match &random {
                Some((ra, rb)) => {
                    let a = PerturbationCurve::from_raw(Ordering::Random, ra[i].clone(), &settings.schedule)?;
                    let b = PerturbationCurve::from_raw(Ordering::Random, rb[i].clone(), &settings.schedule)?;
                    Some(srg(a.auc, b.auc))
                }
                None => None,
            };
            Ok((m, l, r))
        })();
        match normalised {
            Ok((m, l, random_srg)) => metrics.push(MetricResult {
                metric,
                auc_mif: m.auc,
                auc_lif: l.auc,
                srg: srg(l.auc, m.auc),
                random_srg,
                mif: m,
                lif: l,
            }),
            Err(Error::Normalization { .. }) => skipped.push(metric),
            Err(e) => return Err(e),
        }
    }
    Ok(SampleResult { id: input.id.to_string(), auc_pr, metrics, skipped })
}

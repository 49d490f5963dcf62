// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus aggregation.

use serde::{Deserialize, Serialize};

use super::perturb::BaseMetric;
use super::SampleResult;

/// Normal-approximation 95% quantile.
pub const Z_95: f64 = 1.96;

/// Mean with a 95% confidence half-width `1.96 * s / sqrt(n)`, where `s` is
/// the sample standard deviation. The half-width is absent for `n < 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_half_width: Option<f64>,
    pub n: usize,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        // shifted by the first value so identical inputs give exactly 0 spread
        let shift = values[0];
        let d_sum: f64 = values.iter().map(|v| v - shift).sum();
        let d_mean = d_sum / n as f64;
        let mean = shift + d_mean;
        let ci_half_width = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - shift - d_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z_95 * var.sqrt() / (n as f64).sqrt()
        });
        Some(Self { mean, ci_half_width, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: BaseMetric,
    pub auc_mif: Summary,
    pub auc_lif: Summary,
    /// Mean of the per-sample `auc_lif - auc_mif`.
    pub srg: Summary,
    pub random_srg: Option<Summary>,
    /// Samples dropped because the unperturbed value could not normalise.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub num_samples: usize,
    pub auc_pr: Option<Summary>,
    pub metrics: Vec<MetricSummary>,
    pub samples: Vec<SampleResult>,
}

impl EvalReport {
    pub fn metric(&self, metric: BaseMetric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Corpus means over per-sample results. Metrics are listed in `metrics`
/// order; a metric skipped on every sample is omitted.
pub fn aggregate_report(method: &str, metrics: &[BaseMetric], samples: Vec<SampleResult>) -> EvalReport {
    let auc_pr: Vec<f64> = samples.iter().filter_map(|s| s.auc_pr.as_ref().map(|a| a.value)).collect();
    let summaries = metrics
        .iter()
        .filter_map(|&metric| {
            let rows: Vec<_> = samples.iter().filter_map(|s| s.metric(metric)).collect();
            let skipped = samples.iter().filter(|s| s.skipped.contains(&metric)).count();
            let col = |f: &dyn Fn(&super::MetricResult) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
            let random: Vec<f64> = rows.iter().filter_map(|r| r.random_srg).collect();
            Some(MetricSummary {
                metric,
                auc_mif: Summary::of(&col(&|r| r.auc_mif))?,
                auc_lif: Summary::of(&col(&|r| r.auc_lif))?,
                srg: Summary::of(&col(&|r| r.srg))?,
                random_srg: Summary::of(&random),
                skipped,
            })
        })
        .collect();
    EvalReport { method: method.to_string(), num_samples: samples.len(), auc_pr: Summary::of(&auc_pr), metrics: summaries, samples }
}

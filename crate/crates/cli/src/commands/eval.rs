// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attnscope eval`: AUC-PR and perturbation curves for trace/attribution pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use attnscope_core::eval::{aggregate_report, evaluate_sample, BaseMetric, EvalReport, EvalSettings, FractionSchedule, SampleInput};
use attnscope_core::trace::read_trace;
use attnscope_core::{AttentionTrace, Model, ModelConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attribute::{sample_seed, AttributionFile};
use super::{dir_or, Common};
use crate::config::{parse_fractions, parse_metrics};
use crate::error::{CliError, CliResult};
use crate::output::{list_files, read_json, sha256_hex, write_atomic, write_json};

#[derive(Clone, Debug, clap::Args)]
pub struct EvalArgs {
    /// Directory of `.attrc` traces (defaults to `<out>/traces`).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Directory of attribution files (defaults to `<out>/attributions`).
    #[arg(long)]
    pub attributions: Option<PathBuf>,
    /// Comma-separated masking fractions, starting at 0.
    #[arg(long)]
    pub fractions: Option<String>,
    /// Comma-separated base metrics (mean_logits, perplexity, rouge_l, bleu).
    #[arg(long)]
    pub metrics: Option<String>,
    /// Also measure SRG between two independent random orderings.
    #[arg(long)]
    pub random_pair: bool,
    /// Accept mixed configurations and unmatched files.
    #[arg(long)]
    pub force: bool,
}

/// Settings echoed into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub fractions: FractionSchedule,
    pub metrics: Vec<BaseMetric>,
    pub random_pair: bool,
    pub seed: u64,
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub num_samples: usize,
    pub m_auc_pr: Option<f64>,
    pub m_auc_pr_ci: Option<f64>,
    /// `(metric tag, mean SRG, CI half-width)`.
    pub m_srg: Vec<(String, f64, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: EvalConfigEcho,
    /// Method configuration echoed from the attribution files.
    pub method_configs: BTreeMap<String, serde_json::Value>,
    pub table: Vec<TableRow>,
    pub reports: Vec<EvalReport>,
}

struct Pair {
    trace: AttentionTrace,
    model: ModelConfig,
    attribution: AttributionFile,
}

fn model_config_of(trace: &AttentionTrace, path: &Path) -> CliResult<ModelConfig> {
    let model = trace
        .provenance
        .as_ref()
        .and_then(|p| p.get("model"))
        .ok_or_else(|| CliError::Data(format!("{}: trace has no model provenance", path.display())))?;
    serde_json::from_value(model.clone()).map_err(|e| CliError::Data(format!("{}: model provenance: {e}", path.display())))
}

fn load_pairs(traces_dir: &Path, attr_dir: &Path, force: bool) -> CliResult<BTreeMap<String, Vec<Pair>>> {
    let mut traces = BTreeMap::new();
    for path in list_files(traces_dir, ".attrc")? {
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        traces.insert(name, (path, sha256_hex(&bytes), bytes));
    }
    let mut by_method: BTreeMap<String, Vec<Pair>> = BTreeMap::new();
    for path in list_files(attr_dir, ".json")? {
        let attribution: AttributionFile = read_json(&path)?;
        let Some((trace_path, digest, bytes)) = traces.get(&attribution.trace) else {
            if force {
                continue;
            }
            return Err(CliError::Data(format!("{}: trace {} not found in {}", path.display(), attribution.trace, traces_dir.display())));
        };
        if *digest != attribution.trace_sha256 {
            return Err(CliError::Data(format!("{}: trace digest does not match {}", path.display(), trace_path.display())));
        }
        let trace = read_trace(bytes.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", trace_path.display())))?;
        let model = model_config_of(&trace, trace_path)?;
        by_method.entry(attribution.method.name().to_string()).or_default().push(Pair { trace, model, attribution });
    }
    for (method, pairs) in &by_method {
        if pairs.len() != traces.len() && !force {
            return Err(CliError::Data(format!(
                "{method}: {} attributions for {} traces (use --force to evaluate the matched subset)",
                pairs.len(),
                traces.len()
            )));
        }
        let first = &pairs[0];
        if !force {
            if let Some(p) = pairs.iter().find(|p| p.attribution.config != first.attribution.config) {
                return Err(CliError::Data(format!("{method}: mixed attribution configs ({} vs {})", first.attribution.trace, p.attribution.trace)));
            }
            if let Some(p) = pairs.iter().find(|p| p.model != first.model) {
                return Err(CliError::Data(format!("{method}: traces from different models ({} vs {})", first.attribution.trace, p.attribution.trace)));
            }
        }
    }
    Ok(by_method)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat per-sample CSV: one row per (method, sample, metric).
pub fn samples_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,sample,auc_pr,best_step,metric,auc_mif,auc_lif,srg,random_srg\n");
    for report in reports {
        for s in &report.samples {
            let (ap, best) = match &s.auc_pr {
                Some(a) => (a.value.to_string(), a.best_step.to_string()),
                None => (String::new(), String::new()),
            };
            for m in &s.metrics {
                let _ = writeln!(
                    out,
                    "{},{},{ap},{best},{},{},{},{},{}",
                    csv_field(&report.method),
                    csv_field(&s.id),
                    m.metric.name(),
                    m.auc_mif,
                    m.auc_lif,
                    m.srg,
                    opt(m.random_srg)
                );
            }
            for m in &s.skipped {
                let _ = writeln!(out, "{},{},{ap},{best},{},,,,", csv_field(&report.method), csv_field(&s.id), m.name());
            }
        }
    }
    out
}

fn table_row(report: &EvalReport) -> TableRow {
    TableRow {
        method: report.method.clone(),
        num_samples: report.num_samples,
        m_auc_pr: report.auc_pr.map(|s| s.mean),
        m_auc_pr_ci: report.auc_pr.and_then(|s| s.ci_half_width),
        m_srg: report.metrics.iter().map(|m| (m.metric.tag().to_string(), m.srg.mean, m.srg.ci_half_width)).collect(),
    }
}

fn fmt_ci(mean: f64, ci: Option<f64>) -> String {
    match ci {
        Some(c) => format!("{mean:.3} ± {c:.3}"),
        None => format!("{mean:.3}"),
    }
}

pub fn run(common: &Common, args: &EvalArgs) -> CliResult<()> {
    let mut config = common.load()?;
    if let Some(f) = &args.fractions {
        config.fractions = parse_fractions(f)?;
    }
    if let Some(m) = &args.metrics {
        config.metrics = parse_metrics(m)?;
    }
    config.random_pair |= args.random_pair;
    let out_root = common.out_dir(&config);
    let traces_dir = dir_or(args.traces.as_deref(), &out_root, "traces");
    let attr_dir = dir_or(args.attributions.as_deref(), &out_root, "attributions");
    let by_method = load_pairs(&traces_dir, &attr_dir, args.force)?;
    if by_method.is_empty() {
        return Err(CliError::Data(format!("no attributions in {}", attr_dir.display())));
    }

    let pool = common.pool()?;
    let mut models: BTreeMap<String, Model> = BTreeMap::new();
    for pair in by_method.values().flatten() {
        let key = serde_json::to_string(&pair.model).expect("model config serialises");
        if let std::collections::btree_map::Entry::Vacant(slot) = models.entry(key) {
            slot.insert(Model::new(pair.model.clone())?);
        }
    }
    let mut reports = Vec::new();
    let mut method_configs = BTreeMap::new();
    for (method, pairs) in &by_method {
        method_configs.insert(method.clone(), pairs[0].attribution.config.clone());
        let results = pool.install(|| {
            pairs
                .par_iter()
                .map(|p| {
                    let key = serde_json::to_string(&p.model).expect("model config serialises");
                    let model = &models[&key];
                    let id = p.attribution.trace.trim_end_matches(".attrc");
                    let settings = EvalSettings {
                        schedule: config.fractions.clone(),
                        metrics: config.metrics.clone(),
                        random_pair: config.random_pair,
                        seed: sample_seed(config.seed, &p.attribution.trace),
                    };
                    let prompt = p.trace.prompt_ids();
                    let generated = p.trace.generated_ids();
                    let input = SampleInput {
                        id,
                        prompt: &prompt,
                        generated: &generated,
                        context_positions: &p.attribution.context_token_positions,
                        answers: &p.trace.answers,
                    };
                    evaluate_sample(model, &p.attribution.map, input, &settings).map_err(|e| CliError::Data(format!("{id}: {e}")))
                })
                .collect::<CliResult<Vec<_>>>()
        })?;
        reports.push(aggregate_report(method, &config.metrics, results));
    }

    let file = ReportFile {
        config: EvalConfigEcho {
            fractions: config.fractions.clone(),
            metrics: config.metrics.clone(),
            random_pair: config.random_pair,
            seed: config.seed,
        },
        method_configs,
        table: reports.iter().map(table_row).collect(),
        reports,
    };
    let out = out_root.join("eval");
    write_json(&out.join("report.json"), &file)?;
    write_atomic(&out.join("samples.csv"), samples_csv(&file.reports).as_bytes())?;

    for row in &file.table {
        let mut line = format!("{:<8} n={:<4}", row.method, row.num_samples);
        if let Some(ap) = row.m_auc_pr {
            let _ = write!(line, " mAUC-PR {}", fmt_ci(ap, row.m_auc_pr_ci));
        }
        for (tag, mean, ci) in &row.m_srg {
            let _ = write!(line, " mSRG-{tag} {}", fmt_ci(*mean, *ci));
        }
        println!("{line}");
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

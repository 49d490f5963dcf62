// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attnscope attribute`: attribution maps for stored traces.

use std::path::{Path, PathBuf};

use attnscope_core::trace::read_trace;
use attnscope_core::{macs_run, random_attribution, rollout_attribution, AttributionMap, MacsConfig, RolloutConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{dir_or, Common};
use crate::config::apply_ablation;
use crate::corpus::fnv1a;
use crate::error::{CliError, CliResult};
use crate::output::{list_files, sha256_hex, stem, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Macs,
    Rollout,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Macs => "macs",
            Method::Rollout => "rollout",
            Method::Random => "random",
        }
    }
}

#[derive(Clone, Debug, clap::Args)]
pub struct AttributeArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Directory of `.attrc` traces (defaults to `<out>/traces`).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Configuration override `key=value`, e.g. `pooling=mean`; repeatable.
    #[arg(long = "ablate", value_name = "KEY=VALUE")]
    pub ablate: Vec<String>,
}

/// On-disk attribution record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionFile {
    pub method: Method,
    /// Exact method configuration.
    pub config: serde_json::Value,
    /// File name of the trace inside its directory.
    pub trace: String,
    pub trace_sha256: String,
    pub input_len: usize,
    pub context_token_positions: Vec<usize>,
    #[serde(flatten)]
    pub map: AttributionMap,
    pub provenance: serde_json::Value,
}

/// Seed of the random attribution for one trace.
pub fn sample_seed(run_seed: u64, sample: &str) -> u64 {
    run_seed ^ fnv1a(sample.as_bytes())
}

/// Resolved method configuration.
#[derive(Clone, Debug)]
pub struct MethodConfig {
    pub method: Method,
    pub macs: MacsConfig,
    pub rollout: RolloutConfig,
    pub seed: u64,
    pub ablations: Vec<String>,
}

impl MethodConfig {
    pub fn echo(&self) -> serde_json::Value {
        match self.method {
            Method::Macs => json!(self.macs),
            Method::Rollout => json!(self.rollout),
            Method::Random => json!({ "seed": self.seed }),
        }
    }
}

pub fn attribute_bytes(bytes: &[u8], name: &str, cfg: &MethodConfig) -> CliResult<AttributionFile> {
    let trace = read_trace(bytes)?;
    let map = match cfg.method {
        Method::Macs => macs_run(&trace, &cfg.macs)?,
        Method::Rollout => rollout_attribution(&trace, &cfg.rollout)?,
        Method::Random => random_attribution(trace.input_len, trace.num_steps(), sample_seed(cfg.seed, name))?,
    };
    Ok(AttributionFile {
        method: cfg.method,
        config: cfg.echo(),
        trace: name.to_string(),
        trace_sha256: sha256_hex(bytes),
        input_len: trace.input_len,
        context_token_positions: trace.context_positions(),
        map,
        provenance: json!({
            "trace": trace.provenance,
            "ablate": cfg.ablations,
        }),
    })
}

fn attribute_file(path: &Path, cfg: &MethodConfig) -> CliResult<AttributionFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    attribute_bytes(&bytes, &name, cfg).map_err(|e| match e {
        CliError::Core(inner) => CliError::Data(format!("{}: {inner}", path.display())),
        other => other,
    })
}

pub fn run(common: &Common, args: &AttributeArgs) -> CliResult<()> {
    let mut config = common.load()?;
    for spec in &args.ablate {
        apply_ablation(&mut config.macs, &mut config.rollout, spec)?;
    }
    let cfg = MethodConfig {
        method: args.method,
        macs: config.macs,
        rollout: config.rollout,
        seed: config.seed,
        ablations: args.ablate.clone(),
    };
    let out_root = common.out_dir(&config);
    let traces = dir_or(args.traces.as_deref(), &out_root, "traces");
    let files = list_files(&traces, ".attrc")?;
    let out = out_root.join("attributions");
    common.pool()?.install(|| {
        files.par_iter().try_for_each(|path| {
            let record = attribute_file(path, &cfg)?;
            let target = out.join(format!("{}.{}.json", stem(path, ".attrc"), cfg.method.name()));
            write_json(&target, &record)
        })
    })?;
    println!("wrote {} {} attributions to {}", files.len(), cfg.method.name(), out.display());
    Ok(())
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attnscope report`: standalone HTML heatmap for one trace.

use std::path::PathBuf;

use attnscope_core::trace::read_trace;

use super::attribute::AttributionFile;
use super::Common;
use crate::error::{CliError, CliResult};
use crate::html::render_report;
use crate::output::{read_json, sha256_hex, stem, write_atomic};

#[derive(Clone, Debug, clap::Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub attribution: PathBuf,
    /// Steps to render: `all` or comma-separated 1-based indices.
    #[arg(long, default_value = "all")]
    pub steps: String,
    /// Output file (defaults to `<out>/report/<trace>.<method>.html`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn parse_steps(raw: &str, num_steps: usize) -> CliResult<Vec<usize>> {
    if raw.trim() == "all" {
        return Ok((1..=num_steps).collect());
    }
    raw.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad step {s:?}"))))
        .collect()
}

pub fn run(common: &Common, args: &ReportArgs) -> CliResult<()> {
    let config = common.load()?;
    let bytes = std::fs::read(&args.trace).map_err(|e| CliError::io(&args.trace, e))?;
    let trace = read_trace(bytes.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", args.trace.display())))?;
    let attribution: AttributionFile = read_json(&args.attribution)?;
    if attribution.trace_sha256 != sha256_hex(&bytes) {
        return Err(CliError::Data(format!("{} was not computed from {}", args.attribution.display(), args.trace.display())));
    }
    let steps = parse_steps(&args.steps, attribution.map.num_steps())?;
    let name = stem(&args.trace, ".attrc");
    let title = format!("{name} ({})", attribution.method.name());
    let html = render_report(&trace, &attribution.map.per_step_z, &steps, &title)?;
    let target = args
        .output
        .clone()
        .unwrap_or_else(|| common.out_dir(&config).join("report").join(format!("{name}.{}.html", attribution.method.name())));
    write_atomic(&target, html.as_bytes())?;
    println!("wrote {}", target.display());
    Ok(())
}

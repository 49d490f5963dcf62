// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end: `attnscope trace|attribute|eval|report|bench`.

pub mod alloc;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod html;
pub mod output;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

use commands::attribute::AttributeArgs;
use commands::bench::BenchArgs;
use commands::eval::EvalArgs;
use commands::fixture::{ConvertArgs, FixtureArgs};
use commands::report::ReportArgs;
use commands::trace::TraceArgs;
use commands::Common;
pub use error::{CliError, CliResult, EXIT_DATA, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "attnscope", version, about = "Attention-consistency attribution for a toy decoder")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate every corpus sample and write one `.attrc` trace each.
    Trace(TraceArgs),
    /// Compute attribution maps (macs, rollout or random) for traces.
    Attribute(AttributeArgs),
    /// Score attributions: best-step AUC-PR and MIF/LIF perturbation SRG.
    Eval(EvalArgs),
    /// Render a standalone HTML heatmap for one trace and attribution.
    Report(ReportArgs),
    /// Throughput and peak heap of inference with and without attribution.
    Bench(BenchArgs),
    /// Write a fixture corpus and its matching config.
    Fixture(FixtureArgs),
    /// Convert question/context/answer records into corpus lines.
    Convert(ConvertArgs),
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Trace(a) => commands::trace::run(&cli.common, a),
        Command::Attribute(a) => commands::attribute::run(&cli.common, a),
        Command::Eval(a) => commands::eval::run(&cli.common, a),
        Command::Report(a) => commands::report::run(&cli.common, a),
        Command::Bench(a) => commands::bench::run(&cli.common, a),
        Command::Fixture(a) => commands::fixture::run_fixture(&cli.common, a),
        Command::Convert(a) => commands::fixture::run_convert(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

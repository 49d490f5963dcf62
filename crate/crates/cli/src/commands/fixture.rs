// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attnscope fixture` and `attnscope convert`: corpus generation.

use std::io::BufRead;
use std::path::PathBuf;

use attnscope_core::synthetic::{copy_task_corpus, random_corpus, CopyCorpusConfig, Sample};
use attnscope_core::ModelConfig;

use super::Common;
use crate::config::RunConfig;
use crate::corpus::{convert_qa, CorpusLine, QaRecord};
use crate::error::{CliError, CliResult};
use crate::output::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureKind {
    /// One-layer copy model; the answer is the single salient source token.
    CopyTask,
    /// Random-init model over random prompts.
    Random,
}

#[derive(Clone, Debug, clap::Args)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub kind: FixtureKind,
    #[arg(long, default_value_t = 40)]
    pub samples: usize,
}

#[derive(Clone, Debug, clap::Args)]
pub struct ConvertArgs {
    /// JSON lines of `{id?, question, context, answers[]}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

fn to_line(s: Sample) -> CorpusLine {
    CorpusLine {
        id: Some(s.id),
        prompt_tokens: Some(s.prompt_tokens),
        text: None,
        context_span: [s.context_span.0, s.context_span.1],
        answers: s.answers,
    }
}

fn jsonl(lines: &[CorpusLine]) -> String {
    lines.iter().map(|l| serde_json::to_string(l).expect("corpus lines serialise") + "\n").collect()
}

/// Corpus lines plus the run configuration that matches them.
pub fn fixture(kind: FixtureKind, samples: usize, seed: u64) -> (Vec<CorpusLine>, RunConfig) {
    let mut config = RunConfig { seed, ..RunConfig::default() };
    let lines = match kind {
        FixtureKind::CopyTask => {
            let cc = CopyCorpusConfig::default();
            config.model = cc.model_config(seed);
            config.max_new = cc.max_new;
            copy_task_corpus(&cc, samples, seed)
        }
        FixtureKind::Random => {
            config.model = ModelConfig { max_seq: 64, seed, ..ModelConfig::default() };
            config.max_new = 8;
            random_corpus(config.model.vocab_size, 32, 2..30, samples, seed)
        }
    };
    (lines.into_iter().map(to_line).collect(), config)
}

pub fn run_fixture(common: &Common, args: &FixtureArgs) -> CliResult<()> {
    let base = common.load()?;
    let out = common.out_dir(&base);
    let (lines, mut config) = fixture(args.kind, args.samples, base.seed);
    let corpus = out.join("corpus.jsonl");
    config.corpus = Some(PathBuf::from("corpus.jsonl"));
    config.out_dir = PathBuf::from(".");
    write_atomic(&corpus, jsonl(&lines).as_bytes())?;
    let toml = toml::to_string(&config).map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(&out.join("config.toml"), toml.as_bytes())?;
    println!("wrote {} samples to {} and {}", lines.len(), corpus.display(), out.join("config.toml").display());
    Ok(())
}

pub fn run_convert(args: &ConvertArgs) -> CliResult<()> {
    let file = std::fs::File::open(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let mut lines = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&args.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QaRecord =
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", args.input.display(), i + 1)))?;
        lines.push(convert_qa(&rec));
    }
    write_atomic(&args.output, jsonl(&lines).as_bytes())?;
    println!("converted {} records to {}", lines.len(), args.output.display());
    Ok(())
}

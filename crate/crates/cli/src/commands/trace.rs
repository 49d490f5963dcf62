// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attnscope trace`: generate each corpus sample and store its attention.

use std::collections::BTreeSet;
use std::path::PathBuf;

use attnscope_core::trace::write_trace;
use attnscope_core::Model;
use rayon::prelude::*;
use serde_json::json;

use super::Common;
use crate::corpus::{read_corpus, CorpusSample};
use crate::error::{CliError, CliResult};
use crate::output::{file_safe, write_atomic};

#[derive(Clone, Debug, clap::Args)]
pub struct TraceArgs {
    /// JSON-lines corpus (defaults to `corpus` in the config).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Also store prefill attention so rollout can run on the traces.
    #[arg(long)]
    pub full_matrices: bool,
    /// Tokens to generate per sample.
    #[arg(long)]
    pub max_new: Option<usize>,
}

pub fn trace_bytes(model: &Model, sample: &CorpusSample, max_new: usize, full_matrices: bool) -> CliResult<Vec<u8>> {
    let mut trace = model.generate_with_capture(&sample.tokens, max_new, &[], full_matrices)?.trace;
    trace.set_context_span(sample.context_span.0..sample.context_span.1)?;
    for (tok, text) in trace.tokens.iter_mut().zip(&sample.texts) {
        tok.text = text.clone();
    }
    trace.answers = sample.answers.clone();
    trace.provenance = Some(json!({
        "sample_id": sample.id,
        "model": model.config(),
        "max_new": max_new,
    }));
    let mut bytes = Vec::new();
    write_trace(&trace, &mut bytes)?;
    Ok(bytes)
}

pub fn run(common: &Common, args: &TraceArgs) -> CliResult<()> {
    let mut config = common.load()?;
    if let Some(n) = args.max_new {
        config.max_new = n;
    }
    config.full_matrices |= args.full_matrices;
    let corpus = args
        .corpus
        .clone()
        .or_else(|| config.corpus.clone())
        .ok_or_else(|| CliError::Usage("no corpus given (--corpus or `corpus` in the config)".into()))?;
    let samples = read_corpus(&corpus, config.model.vocab_size)?;
    let names: Vec<String> = samples.iter().map(|s| file_safe(&s.id)).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(CliError::Data("sample ids collide after file-name sanitising".into()));
    }
    let out = common.out_dir(&config).join("traces");
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let model = Model::new(config.model.clone())?;
    common.pool()?.install(|| {
        samples.par_iter().zip(&names).try_for_each(|(sample, name)| {
            let bytes = trace_bytes(&model, sample, config.max_new, config.full_matrices)
                .map_err(|e| CliError::Data(format!("sample {}: {e}", sample.id)))?;
            write_atomic(&out.join(format!("{name}.attrc")), &bytes)
        })
    })?;
    println!("wrote {} traces to {}", samples.len(), out.display());
    Ok(())
}

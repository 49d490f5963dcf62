// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attnscope bench`: throughput and peak heap of inference alone, with
//! streaming MACS, and with full-matrix capture plus rollout.

use std::time::Instant;

use attnscope_core::{rollout_attribution, MacsStream, Model, ModelConfig};
use serde::{Deserialize, Serialize};

use super::Common;
use crate::alloc;
use crate::error::{CliError, CliResult};
use crate::output::write_json;

#[derive(Clone, Debug, clap::Args)]
pub struct BenchArgs {
    /// Comma-separated prompt lengths.
    #[arg(long, default_value = "32,64,128,256")]
    pub contexts: String,
    #[arg(long, default_value_t = 16)]
    pub max_new: usize,
    /// Timed repetitions per cell; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Inference,
    MacsStream,
    Rollout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub context_len: usize,
    pub mode: BenchMode,
    /// `None` when nothing was generated.
    pub tokens_per_sec: Option<f64>,
    /// Peak heap growth in bytes; `None` without the counting allocator.
    pub peak_bytes: Option<usize>,
    /// Slowdown against plain inference, in percent.
    pub overhead_pct: Option<f64>,
}

fn measure<F: FnMut() -> CliResult<()>>(repeats: usize, mut f: F) -> CliResult<(f64, Option<usize>)> {
    let mut best = f64::INFINITY;
    let mut peak = 0;
    for _ in 0..repeats.max(1) {
        let base = alloc::reset_peak();
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
        peak = peak.max(alloc::peak().saturating_sub(base));
    }
    Ok((best, alloc::is_active().then_some(peak)))
}

pub fn bench_rows(model_base: &ModelConfig, contexts: &[usize], max_new: usize, repeats: usize) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in contexts {
        let model = Model::new(ModelConfig { max_seq: n + max_new.max(1), ..model_base.clone() })?;
        let prompt: Vec<u32> = (0..n).map(|i| (i * 31 % model_base.vocab_size) as u32).collect();
        let plain = measure(repeats, || {
            model.generate_tokens(&prompt, max_new, &[])?;
            Ok(())
        })?;
        let stream = measure(repeats, || {
            let mut macs = MacsStream::new(n, Default::default())?;
            let mut err = None;
            model.generate_streaming(&prompt, max_new, &[], |step| {
                if err.is_none() {
                    err = macs.push(&step).err();
                }
            })?;
            match err {
                Some(e) => Err(e.into()),
                None => Ok(()),
            }
        })?;
        let rollout = measure(repeats, || {
            let rec = model.generate_with_capture(&prompt, max_new, &[], true)?;
            if max_new > 0 {
                rollout_attribution(&rec.trace, &Default::default())?;
            }
            Ok(())
        })?;
        let tps = |secs: f64| (max_new > 0 && secs > 0.0).then(|| max_new as f64 / secs);
        for (mode, (secs, peak)) in [(BenchMode::Inference, plain), (BenchMode::MacsStream, stream), (BenchMode::Rollout, rollout)] {
            let overhead = (max_new > 0 && plain.0 > 0.0).then(|| 100.0 * (secs / plain.0 - 1.0));
            rows.push(BenchRow {
                context_len: n,
                mode,
                tokens_per_sec: tps(secs),
                peak_bytes: peak,
                overhead_pct: if mode == BenchMode::Inference { overhead.map(|_| 0.0) } else { overhead },
            });
        }
    }
    Ok(rows)
}

fn show<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

pub fn run(common: &Common, args: &BenchArgs) -> CliResult<()> {
    let config = common.load()?;
    let contexts = args
        .contexts
        .split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Usage(format!("bad context length {s:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = bench_rows(&config.model, &contexts, args.max_new, args.repeats)?;
    println!("{:>8} {:<12} {:>12} {:>12} {:>10}", "context", "mode", "tokens/s", "peak_bytes", "overhead%");
    for r in &rows {
        println!(
            "{:>8} {:<12} {:>12} {:>12} {:>10}",
            r.context_len,
            format!("{:?}", r.mode),
            show(r.tokens_per_sec.map(|t| format!("{t:.1}"))),
            show(r.peak_bytes),
            show(r.overhead_pct.map(|o| format!("{o:.1}"))),
        );
    }
    let path = common.out_dir(&config).join("bench").join("bench.json");
    write_json(&path, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token-level ROUGE-L and BLEU.

use std::collections::HashMap;

use crate::error::{Error, Result};

fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over token ids.
pub fn rouge_l(reference: &[u32], hypothesis: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("ROUGE-L reference"));
    }
    let lcs = lcs_len(reference, hypothesis);
    if lcs == 0 {
        return Ok(0.0);
    }
    let precision = lcs as f64 / hypothesis.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Highest n-gram order used by [`bleu`].
pub const BLEU_MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Modified n-gram precision `(matches, total)` with clipped counts.
pub fn clipped_matches(reference: &[u32], hypothesis: &[u32], n: usize) -> (usize, usize) {
    let refs = ngram_counts(reference, n);
    let hyp = ngram_counts(hypothesis, n);
    let total = hypothesis.len().saturating_sub(n - 1);
    let matches = hyp.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
    (matches, total)
}

/// Single-reference BLEU with orders 1..=4, uniform weights and brevity
/// penalty. An order with zero matches contributes `1 / (total + 1)`
/// (add-one smoothing); other orders use the plain clipped precision.
pub fn bleu(reference: &[u32], hypothesis: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("BLEU reference"));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let (m, t) = clipped_matches(reference, hypothesis, n);
        let p = if m == 0 { 1.0 / (t as f64 + 1.0) } else { m as f64 / t as f64 };
        log_sum += p.ln() / BLEU_MAX_ORDER as f64;
    }
    let (r, h) = (reference.len() as f64, hypothesis.len() as f64);
    let bp = if h >= r { 1.0 } else { (1.0 - r / h).exp() };
    Ok(bp * log_sum.exp())
}

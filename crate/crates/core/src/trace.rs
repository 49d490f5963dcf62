// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention traces and the `.attrc` container.
//!
//! An [`AttentionTrace`] records, for every generation step `k` (1-based), the
//! attention row issued by the query that predicts token `t_k`. With `N` prompt
//! tokens that query sits at 0-based position `N + k - 2` (for `k = 1` it is
//! the last prompt token) and its row covers `N + k - 1` keys.
//!
//! Traces captured with full matrices additionally carry the lower-triangular
//! prefill attention for query positions `0..N`, which together with the step
//! rows reconstructs the square causal matrix at any step.
//!
//! # Container layout
//!
//! ```text
//! magic      8 bytes   "ATTRC\0\0\x01"
//! len        u32 LE    manifest length in bytes
//! manifest   len bytes UTF-8 JSON
//! blobs      f32 LE    step blobs in step order, then the prefill blob
//! ```
//!
//! Each step blob is `[layer][head][key]` row-major. Blob offsets in the
//! manifest are relative to the start of the blob section.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Container magic bytes.
pub const MAGIC: [u8; 8] = *b"ATTRC\0\0\x01";

/// Manifest schema version written by [`write_trace`].
pub const FORMAT_VERSION: u32 = 1;

/// Allowed deviation of an attention row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Role of a token in the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    InstructionPrompt,
    Context,
    Generated,
}

/// Per-token metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    #[serde(rename = "id")]
    pub token_id: u32,
    #[serde(rename = "pos")]
    pub position: usize,
    #[serde(rename = "seg")]
    pub segment: Segment,
    pub text: String,
}

/// Attention rows of one generation step, laid out `[layer][head][key]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAttention {
    step: usize,
    num_layers: usize,
    num_heads: usize,
    key_len: usize,
    weights: Vec<f32>,
}

impl StepAttention {
    pub fn new(step: usize, num_layers: usize, num_heads: usize, key_len: usize, weights: Vec<f32>) -> Result<Self> {
        let expected = num_layers * num_heads * key_len;
        if weights.len() != expected {
            return Err(Error::Dimension(format!(
                "step {step}: expected {expected} weights ({num_layers}x{num_heads}x{key_len}), got {}",
                weights.len()
            )));
        }
        Ok(Self { step, num_layers, num_heads, key_len, weights })
    }

    pub fn zeros(step: usize, num_layers: usize, num_heads: usize, key_len: usize) -> Self {
        Self { step, num_layers, num_heads, key_len, weights: vec![0.0; num_layers * num_heads * key_len] }
    }

    /// 1-based generation step index `k`.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    /// Number of keys per row (`N + k - 1`).
    pub fn key_len(&self) -> usize {
        self.key_len
    }

    pub fn row(&self, layer: usize, head: usize) -> &[f32] {
        let start = (layer * self.num_heads + head) * self.key_len;
        &self.weights[start..start + self.key_len]
    }

    pub fn row_mut(&mut self, layer: usize, head: usize) -> &mut [f32] {
        let start = (layer * self.num_heads + head) * self.key_len;
        &mut self.weights[start..start + self.key_len]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// Lower-triangular prefill attention for query positions `0..len`.
///
/// Row `q` of layer `l`, head `h` has `q + 1` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefillAttention {
    num_layers: usize,
    num_heads: usize,
    len: usize,
    weights: Vec<f32>,
}

fn triangle(len: usize) -> usize {
    len * (len + 1) / 2
}

impl PrefillAttention {
    pub fn new(num_layers: usize, num_heads: usize, len: usize, weights: Vec<f32>) -> Result<Self> {
        let expected = num_layers * num_heads * triangle(len);
        if weights.len() != expected {
            return Err(Error::Dimension(format!(
                "prefill: expected {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self { num_layers, num_heads, len, weights })
    }

    pub fn zeros(num_layers: usize, num_heads: usize, len: usize) -> Self {
        Self { num_layers, num_heads, len, weights: vec![0.0; num_layers * num_heads * triangle(len)] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn offset(&self, layer: usize, head: usize, query: usize) -> usize {
        (layer * self.num_heads + head) * triangle(self.len) + triangle(query)
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f32] {
        let start = self.offset(layer, head, query);
        &self.weights[start..start + query + 1]
    }

    pub fn row_mut(&mut self, layer: usize, head: usize, query: usize) -> &mut [f32] {
        let start = self.offset(layer, head, query);
        &mut self.weights[start..start + query + 1]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// Attention captured over one generation, plus token metadata and answer spans.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    /// Number of layers (`L + 1`; layers are indexed `0..=L`).
    pub num_layers: usize,
    pub num_heads: usize,
    /// Number of prompt tokens `N`.
    pub input_len: usize,
    /// Prompt tokens followed by generated tokens.
    pub tokens: Vec<TokenMeta>,
    pub steps: Vec<StepAttention>,
    /// Alternative ground-truth answer spans, as absolute token positions.
    pub answers: Vec<Vec<usize>>,
    /// Present when the trace was captured with full matrices.
    pub prefill: Option<PrefillAttention>,
    /// Free-form record of the configuration that produced the trace.
    pub provenance: Option<serde_json::Value>,
}

impl AttentionTrace {
    /// Index of the last layer, `L`.
    pub fn last_layer(&self) -> usize {
        self.num_layers.saturating_sub(1)
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn full_matrices(&self) -> bool {
        self.prefill.is_some()
    }

    /// Positions of context tokens, in ascending order.
    pub fn context_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .filter(|t| t.segment == Segment::Context)
            .map(|t| t.position)
            .collect()
    }

    /// Prompt token ids.
    pub fn prompt_ids(&self) -> Vec<u32> {
        self.tokens.iter().take(self.input_len).map(|t| t.token_id).collect()
    }

    /// Generated token ids.
    pub fn generated_ids(&self) -> Vec<u32> {
        self.tokens.iter().skip(self.input_len).map(|t| t.token_id).collect()
    }

    /// Labels prompt positions in `span` as context and the other prompt
    /// positions as instruction text.
    pub fn set_context_span(&mut self, span: std::ops::Range<usize>) -> Result<()> {
        if span.is_empty() || span.end > self.input_len {
            return Err(Error::Dimension(format!(
                "context span {}..{} invalid for {} prompt tokens",
                span.start, span.end, self.input_len
            )));
        }
        for t in self.tokens.iter_mut().take(self.input_len) {
            t.segment = if span.contains(&t.position) { Segment::Context } else { Segment::InstructionPrompt };
        }
        Ok(())
    }

    /// Total size of the float blobs in bytes.
    pub fn blob_bytes(&self) -> usize {
        let steps: usize = self.steps.iter().map(|s| 4 * s.weights.len()).sum();
        steps + self.prefill.as_ref().map_or(0, |p| 4 * p.weights.len())
    }
}

/// What went wrong in a [`Violation`].
#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    /// Row does not sum to 1 within [`ROW_SUM_TOLERANCE`].
    RowSum { sum: f64 },
    /// An entry is outside `[0, 1]` or not finite.
    Range { key: usize, value: f32 },
    /// Dimensions disagree with the parent trace.
    Shape(String),
    /// Token metadata breaks an invariant.
    Tokens(String),
    /// An answer span points outside the context.
    Answer(String),
}

/// One invariant violation, located at `(step, layer, head)` where applicable.
///
/// Prefill rows are reported with `step: None` and `query: Some(q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub step: Option<usize>,
    pub layer: Option<usize>,
    pub head: Option<usize>,
    pub query: Option<usize>,
    pub kind: ViolationKind,
}

impl Violation {
    fn structural(kind: ViolationKind) -> Self {
        Self { step: None, layer: None, head: None, query: None, kind }
    }
}

fn check_row(row: &[f32], mut report: impl FnMut(ViolationKind)) {
    if let Some((key, &value)) = row
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
    {
        report(ViolationKind::Range { key, value });
    }
    let sum: f64 = row.iter().map(|&v| f64::from(v)).sum();
    if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        report(ViolationKind::RowSum { sum });
    }
}

/// Checks every trace invariant; an empty result means the trace is valid.
pub fn validate_trace(trace: &AttentionTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = trace.input_len;

    if trace.num_layers == 0 || trace.num_heads == 0 {
        out.push(Violation::structural(ViolationKind::Shape("trace needs at least one layer and one head".into())));
        return out;
    }

    // tokens
    let expected_tokens = n + trace.steps.len();
    if trace.tokens.len() != expected_tokens {
        out.push(Violation::structural(ViolationKind::Tokens(format!(
            "expected {expected_tokens} tokens (N + steps), found {}",
            trace.tokens.len()
        ))));
    }
    for (i, tok) in trace.tokens.iter().enumerate() {
        if tok.position != i {
            out.push(Violation::structural(ViolationKind::Tokens(format!(
                "token {i} has position {}, positions must be contiguous from 0",
                tok.position
            ))));
            break;
        }
    }
    for (i, tok) in trace.tokens.iter().enumerate() {
        let generated = tok.segment == Segment::Generated;
        if generated != (i >= n) {
            out.push(Violation::structural(ViolationKind::Tokens(format!(
                "token {i} segment {:?} inconsistent with prompt length {n}",
                tok.segment
            ))));
            break;
        }
    }
    let context = trace.context_positions();
    match (context.first(), context.last()) {
        (Some(&first), Some(&last)) => {
            if last - first + 1 != context.len() {
                out.push(Violation::structural(ViolationKind::Tokens("context span is not contiguous".into())));
            }
        }
        _ => out.push(Violation::structural(ViolationKind::Tokens("trace has no context span".into()))),
    }
    for (a, span) in trace.answers.iter().enumerate() {
        if let Some(&p) = span.iter().find(|p| !context.contains(p)) {
            out.push(Violation::structural(ViolationKind::Answer(format!(
                "answer {a} references position {p} outside the context"
            ))));
        }
    }

    // step rows
    for (idx, step) in trace.steps.iter().enumerate() {
        let k = idx + 1;
        let shape_ok = step.step == k
            && step.num_layers == trace.num_layers
            && step.num_heads == trace.num_heads
            && step.key_len == n + k - 1;
        if !shape_ok {
            out.push(Violation {
                step: Some(k),
                layer: None,
                head: None,
                query: None,
                kind: ViolationKind::Shape(format!(
                    "step {k}: got k={} {}x{}x{}, expected {}x{}x{}",
                    step.step,
                    step.num_layers,
                    step.num_heads,
                    step.key_len,
                    trace.num_layers,
                    trace.num_heads,
                    n + k - 1
                )),
            });
            continue;
        }
        for layer in 0..step.num_layers {
            for head in 0..step.num_heads {
                check_row(step.row(layer, head), |kind| {
                    out.push(Violation { step: Some(k), layer: Some(layer), head: Some(head), query: None, kind })
                });
            }
        }
    }

    if let Some(prefill) = &trace.prefill {
        if prefill.num_layers != trace.num_layers || prefill.num_heads != trace.num_heads || prefill.len != n {
            out.push(Violation::structural(ViolationKind::Shape("prefill dimensions disagree with trace".into())));
        } else {
            for layer in 0..prefill.num_layers {
                for head in 0..prefill.num_heads {
                    for q in 0..prefill.len {
                        check_row(prefill.row(layer, head, q), |kind| {
                            out.push(Violation {
                                step: None,
                                layer: Some(layer),
                                head: Some(head),
                                query: Some(q),
                                kind,
                            })
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct StepRef {
    k: usize,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(rename = "L")]
    last_layer: usize,
    #[serde(rename = "H")]
    num_heads: usize,
    #[serde(rename = "N")]
    input_len: usize,
    full_matrices: bool,
    tokens: Vec<TokenMeta>,
    answers: Vec<Vec<usize>>,
    steps: Vec<StepRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prefill: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

fn checked_u32(value: usize, what: &str) -> Result<()> {
    if value > u32::MAX as usize {
        return Err(Error::Overflow(format!("{what} = {value} exceeds the 32-bit index space")));
    }
    Ok(())
}

/// Serialises `trace` into `sink`, returning the number of bytes written.
pub fn write_trace<W: Write>(trace: &AttentionTrace, mut sink: W) -> Result<u64> {
    if trace.num_layers == 0 {
        return Err(Error::Dimension("trace has no layers".into()));
    }
    checked_u32(trace.num_layers, "layers")?;
    checked_u32(trace.num_heads, "heads")?;
    checked_u32(trace.input_len, "N")?;

    let mut steps = Vec::with_capacity(trace.steps.len());
    let mut offset = 0u64;
    for step in &trace.steps {
        if step.num_layers != trace.num_layers || step.num_heads != trace.num_heads {
            return Err(Error::Dimension(format!("step {} layer/head counts disagree with trace", step.step)));
        }
        checked_u32(step.key_len, "key length")?;
        checked_u32(step.weights.len(), "step blob elements")?;
        let length = 4 * step.weights.len() as u64;
        steps.push(StepRef { k: step.step, offset, length });
        offset += length;
    }
    let prefill = match &trace.prefill {
        Some(p) => {
            checked_u32(p.weights.len(), "prefill blob elements")?;
            let length = 4 * p.weights.len() as u64;
            Some(BlobRef { offset, length })
        }
        None => None,
    };

    let manifest = Manifest {
        version: FORMAT_VERSION,
        last_layer: trace.last_layer(),
        num_heads: trace.num_heads,
        input_len: trace.input_len,
        full_matrices: trace.full_matrices(),
        tokens: trace.tokens.clone(),
        answers: trace.answers.clone(),
        steps,
        prefill,
        provenance: trace.provenance.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    checked_u32(json.len(), "manifest length")?;

    sink.write_all(&MAGIC)?;
    sink.write_all(&(json.len() as u32).to_le_bytes())?;
    sink.write_all(&json)?;
    let mut written = (MAGIC.len() + 4 + json.len()) as u64;

    let mut buf = Vec::new();
    let blobs = trace.steps.iter().map(|s| s.weights.as_slice()).chain(trace.prefill.iter().map(|p| p.weights.as_slice()));
    for blob in blobs {
        buf.clear();
        buf.reserve(blob.len() * 4);
        for v in blob {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Parses an `.attrc` container. Row sums are not checked here; call
/// [`validate_trace`] when needed.
pub fn read_trace<R: Read>(mut source: R) -> Result<AttentionTrace> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;

    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing ATTRC magic".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::Format("missing manifest length".into()));
    }
    let manifest_len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
    let rest = &rest[4..];
    if rest.len() < manifest_len {
        return Err(Error::Format(format!(
            "manifest declares {manifest_len} bytes but only {} remain",
            rest.len()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&rest[..manifest_len])
        .map_err(|e| Error::Format(format!("manifest is not valid JSON: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", manifest.version)));
    }
    let blobs = &rest[manifest_len..];

    let num_layers = manifest.last_layer + 1;
    let num_heads = manifest.num_heads;
    let n = manifest.input_len;

    let mut expected_offset = 0u64;
    let mut steps = Vec::with_capacity(manifest.steps.len());
    for (idx, s) in manifest.steps.iter().enumerate() {
        let k = idx + 1;
        if s.k != k {
            return Err(Error::Dimension(format!("manifest step {idx} has k={}, expected {k}", s.k)));
        }
        let key_len = n + k - 1;
        let expected_len = 4 * (num_layers * num_heads * key_len) as u64;
        if s.length != expected_len || s.offset != expected_offset {
            return Err(Error::Dimension(format!(
                "step {k}: manifest says offset {} length {}, layout requires offset {expected_offset} length {expected_len}",
                s.offset, s.length
            )));
        }
        let end = (s.offset + s.length) as usize;
        if end > blobs.len() {
            return Err(Error::TruncatedStep { step: k });
        }
        let weights = decode_f32(&blobs[s.offset as usize..end]);
        steps.push(StepAttention::new(k, num_layers, num_heads, key_len, weights)?);
        expected_offset += s.length;
    }

    let prefill = match (&manifest.prefill, manifest.full_matrices) {
        (Some(p), true) => {
            let expected_len = 4 * (num_layers * num_heads * triangle(n)) as u64;
            if p.length != expected_len || p.offset != expected_offset {
                return Err(Error::Dimension(format!(
                    "prefill: manifest says offset {} length {}, layout requires offset {expected_offset} length {expected_len}",
                    p.offset, p.length
                )));
            }
            let end = (p.offset + p.length) as usize;
            if end > blobs.len() {
                return Err(Error::TruncatedPrefill);
            }
            expected_offset += p.length;
            Some(PrefillAttention::new(num_layers, num_heads, n, decode_f32(&blobs[p.offset as usize..end]))?)
        }
        (None, false) => None,
        _ => return Err(Error::Dimension("full_matrices flag disagrees with prefill blob".into())),
    };
    if blobs.len() as u64 != expected_offset {
        return Err(Error::Dimension(format!(
            "{} trailing bytes after the last blob",
            blobs.len() as u64 - expected_offset
        )));
    }

    Ok(AttentionTrace {
        num_layers,
        num_heads,
        input_len: n,
        tokens: manifest.tokens,
        steps,
        answers: manifest.answers,
        prefill,
        provenance: manifest.provenance,
    })
}

/// Writes a trace to `path` via a temporary file and rename.
pub fn write_trace_file(trace: &AttentionTrace, path: &std::path::Path) -> Result<u64> {
    let tmp = path.with_extension("attrc.tmp");
    let file = std::fs::File::create(&tmp)?;
    let n = write_trace(trace, std::io::BufWriter::new(file))?;
    std::fs::rename(&tmp, path)?;
    Ok(n)
}

pub fn read_trace_file(path: &std::path::Path) -> Result<AttentionTrace> {
    read_trace(std::io::BufReader::new(std::fs::File::open(path)?))
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small deterministic decoder-only transformer.
//!
//! Pre-norm blocks (RMSNorm, multi-head causal attention, GELU MLP) with
//! residual connections, learned absolute position embeddings and greedy
//! decoding over a per-generation KV cache. Attention to any prompt position
//! can be masked: its pre-softmax score is set to `-inf` in every layer, head
//! and step, so its post-softmax weight is exactly zero and the remaining
//! weights renormalise.
//!
//! Weights come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! [`ModelConfig::seed`]. Two modes exist:
//!
//! - [`ModelMode::RandomInit`]: scaled normal weights.
//! - [`ModelMode::CopyTask`]: a hand-built one-layer model. Every token carries
//!   a salience value (ids below `vocab_size / 4` are highly salient, the rest
//!   draw a low salience from the PRNG); head 0 attends by salience, the value
//!   path copies the attended token's one-hot embedding and the unembedding is
//!   the transposed embedding, so greedy decoding repeats the most-attended
//!   prior token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AttentionTrace, PrefillAttention, Segment, StepAttention, TokenMeta};

const NORM_EPS: f64 = 1e-5;

/// Salience of the copy-task source class.
pub const COPY_SOURCE_SALIENCE: f64 = 3.0;
const COPY_EMBED_SCALE: f64 = 4.0;
const COPY_QUERY_GAIN: f64 = 6.0;
const COPY_VALUE_GAIN: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    RandomInit,
    CopyTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq: usize,
    pub seed: u64,
    pub mode: ModelMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 32,
            num_layers: 2,
            num_heads: 4,
            max_seq: 256,
            seed: 0,
            mode: ModelMode::RandomInit,
        }
    }
}

impl ModelConfig {
    /// A copy-task configuration: one layer, head width large enough to
    /// carry a one-hot token code plus salience and bias channels.
    pub fn copy_task(vocab_size: usize, num_heads: usize, max_seq: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            d_model: num_heads * (vocab_size + 2),
            num_layers: 1,
            num_heads,
            max_seq,
            seed,
            mode: ModelMode::CopyTask,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be >= 2, got {}", self.vocab_size)));
        }
        if self.num_heads == 0 || self.num_layers == 0 || self.d_model == 0 || self.max_seq == 0 {
            return Err(Error::Config("d_model, num_layers, num_heads and max_seq must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.mode == ModelMode::CopyTask {
            if self.num_layers != 1 {
                return Err(Error::Config("copy-task model has exactly one layer".into()));
            }
            if self.head_dim() < self.vocab_size + 2 {
                return Err(Error::Config(format!(
                    "copy-task model needs head_dim >= vocab_size + 2 ({}), got {}",
                    self.vocab_size + 2,
                    self.head_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Dense row-major matrix applied as `y = W x`.
#[derive(Clone, Debug)]
struct Linear {
    in_dim: usize,
    w: Vec<f64>,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { in_dim, w: vec![0.0; out_dim * in_dim] }
    }

    fn random(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize, std: f64) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Self { in_dim, w: (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect() }
    }

    fn set(&mut self, out: usize, input: usize, value: f64) {
        self.w[out * self.in_dim + input] = value;
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w.chunks_exact(self.in_dim).map(|row| dot(row, x)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + NORM_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[derive(Clone, Debug)]
struct Block {
    attn_norm: Vec<f64>,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    mlp_norm: Vec<f64>,
    w_up: Linear,
    w_down: Linear,
}

impl Block {
    fn mlp(&self, x: &[f64]) -> Vec<f64> {
        let h = rms_norm(x, &self.mlp_norm);
        let up: Vec<f64> = self.w_up.apply(&h).into_iter().map(gelu).collect();
        self.w_down.apply(&up)
    }
}

/// Immutable model weights. Each generation owns its own KV cache, so one
/// model can serve concurrent generations.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    token_embed: Vec<f64>,
    pos_embed: Vec<f64>,
    blocks: Vec<Block>,
    final_norm: Vec<f64>,
    unembed: Vec<f64>,
}

/// Output of a greedy generation together with its attention trace.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub prompt_tokens: Vec<u32>,
    pub generated_tokens: Vec<u32>,
    /// Logits that produced each generated token, `[step][vocab]`.
    pub per_step_logits: Vec<Vec<f64>>,
    pub trace: AttentionTrace,
}

/// Output of a greedy generation without a stored trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub prompt_tokens: Vec<u32>,
    pub generated_tokens: Vec<u32>,
    pub per_step_logits: Vec<Vec<f64>>,
}

/// Result of the no-cache reference forward pass.
#[derive(Clone, Debug)]
pub struct FullForward {
    /// Logits at every position, `[position][vocab]`.
    pub logits: Vec<Vec<f64>>,
    /// Attention rows `[layer][head][query]`, each of length `query + 1`.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
}

struct KvCache {
    d_model: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl KvCache {
    fn new(num_layers: usize, d_model: usize, capacity: usize) -> Self {
        Self {
            d_model,
            keys: (0..num_layers).map(|_| Vec::with_capacity(capacity * d_model)).collect(),
            values: (0..num_layers).map(|_| Vec::with_capacity(capacity * d_model)).collect(),
        }
    }

    fn key(&self, layer: usize, pos: usize) -> &[f64] {
        &self.keys[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }

    fn value(&self, layer: usize, pos: usize) -> &[f64] {
        &self.values[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }
}

/// Boolean key mask over prompt positions.
struct KeyMask(Vec<bool>);

impl KeyMask {
    fn new(prompt_len: usize, masked: &[usize]) -> Result<Self> {
        let mut mask = vec![false; prompt_len];
        for &p in masked {
            if p >= prompt_len {
                return Err(Error::MaskOutOfRange { position: p, prompt_len });
            }
            mask[p] = true;
        }
        Ok(Self(mask))
    }

    fn is_masked(&self, pos: usize) -> bool {
        self.0.get(pos).copied().unwrap_or(false)
    }
}

/// Where the attention rows of one forward step go.
enum Capture<'a> {
    None,
    Row(&'a mut [f32]),
}

pub fn init_model(config: ModelConfig) -> Result<Model> {
    Model::new(config)
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(match config.mode {
            ModelMode::RandomInit => Self::random_init(config, &mut rng),
            ModelMode::CopyTask => Self::copy_task(config, &mut rng),
        })
    }

    fn random_init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_model;
        let v = config.vocab_size;
        let hidden = 4 * d;
        let embed_dist = Normal::new(0.0, 1.0).expect("finite");
        let pos_dist = Normal::new(0.0, 0.5).expect("finite");
        let token_embed = (0..v * d).map(|_| embed_dist.sample(rng)).collect();
        let pos_embed = (0..config.max_seq * d).map(|_| pos_dist.sample(rng)).collect();
        let in_std = 1.0 / (d as f64).sqrt();
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                attn_norm: vec![1.0; d],
                wq: Linear::random(rng, d, d, 1.5 * in_std),
                wk: Linear::random(rng, d, d, 1.5 * in_std),
                wv: Linear::random(rng, d, d, in_std),
                wo: Linear::random(rng, d, d, in_std),
                mlp_norm: vec![1.0; d],
                w_up: Linear::random(rng, hidden, d, in_std),
                w_down: Linear::random(rng, d, hidden, 1.0 / (hidden as f64).sqrt()),
            })
            .collect();
        let unembed = (0..v * d).map(|_| embed_dist.sample(rng) * 2.0 * in_std).collect();
        Self { config, token_embed, pos_embed, blocks, final_norm: vec![1.0; d], unembed }
    }

    fn copy_task(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_model;
        let v = config.vocab_size;
        let h = config.num_heads;
        let hd = config.head_dim();
        let salience_dim = v;
        let bias_dim = v + 1;

        let mut token_embed = vec![0.0; v * d];
        for t in 0..v {
            let salience = if t < Self::copy_source_bound(v) { COPY_SOURCE_SALIENCE } else { rng.random::<f64>() };
            let row = &mut token_embed[t * d..(t + 1) * d];
            row[t] = COPY_EMBED_SCALE;
            row[salience_dim] = salience;
            row[bias_dim] = 1.0;
        }

        let mut wq = Linear::zeros(d, d);
        let mut wk = Linear::zeros(d, d);
        let mut wv = Linear::zeros(d, d);
        let mut wo = Linear::zeros(d, d);
        for head in 0..h {
            let base = head * hd;
            // head 0 is the sharp copy head; later heads attend more softly
            let gain = COPY_QUERY_GAIN / (1 + 3 * head) as f64;
            wq.set(base, bias_dim, gain * (hd as f64).sqrt());
            wk.set(base, salience_dim, 1.0);
            for i in 0..v {
                wv.set(base + i, i, 1.0);
            }
        }
        for i in 0..v {
            wo.set(i, i, COPY_VALUE_GAIN);
        }
        let hidden = 4 * d;
        let block = Block {
            attn_norm: vec![1.0; d],
            wq,
            wk,
            wv,
            wo,
            mlp_norm: vec![1.0; d],
            w_up: Linear::zeros(hidden, d),
            w_down: Linear::zeros(d, hidden),
        };
        let unembed = token_embed.clone();
        let pos_embed = vec![0.0; config.max_seq * d];
        Self {
            config,
            token_embed,
            pos_embed,
            blocks: vec![block],
            final_norm: vec![1.0; d],
            unembed,
        }
    }

    /// Token ids below this bound form the highly salient copy-task class.
    pub fn copy_source_bound(vocab_size: usize) -> usize {
        (vocab_size / 4).max(1)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Config(format!(
                "token id {t} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_lengths(&self, prompt_len: usize, extra: usize) -> Result<()> {
        if prompt_len == 0 {
            return Err(Error::Empty("prompt"));
        }
        let needed = prompt_len + extra;
        if needed > self.config.max_seq {
            return Err(Error::SequenceOverflow { needed, max_seq: self.config.max_seq });
        }
        Ok(())
    }

    fn embed(&self, token: u32, pos: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let t = token as usize;
        self.token_embed[t * d..(t + 1) * d]
            .iter()
            .zip(&self.pos_embed[pos * d..(pos + 1) * d])
            .map(|(a, b)| a + b)
            .collect()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let h = rms_norm(x, &self.final_norm);
        self.unembed.chunks_exact(self.config.d_model).map(|row| dot(row, &h)).collect()
    }

    /// One incremental forward step: appends keys/values for `pos` and returns
    /// the logits at `pos`.
    fn forward_token(&self, token: u32, pos: usize, cache: &mut KvCache, mask: &KeyMask, mut capture: Capture<'_>) -> Vec<f64> {
        let d = self.config.d_model;
        let heads = self.config.num_heads;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let keys = pos + 1;
        let mut x = self.embed(token, pos);
        let mut scores = vec![0.0; keys];

        for (layer, block) in self.blocks.iter().enumerate() {
            let h = rms_norm(&x, &block.attn_norm);
            let q = block.wq.apply(&h);
            cache.keys[layer].extend(block.wk.apply(&h));
            cache.values[layer].extend(block.wv.apply(&h));

            let mut attn = vec![0.0; d];
            for head in 0..heads {
                let span = head * hd..(head + 1) * hd;
                let qh = &q[span.clone()];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = if mask.is_masked(j) {
                        f64::NEG_INFINITY
                    } else {
                        dot(qh, &cache.key(layer, j)[span.clone()]) * scale
                    };
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = if max.is_finite() && s.is_finite() { (*s - max).exp() } else { 0.0 };
                    total += *s;
                }
                let out = &mut attn[span.clone()];
                for (j, s) in scores.iter_mut().enumerate() {
                    if total > 0.0 {
                        *s /= total;
                    }
                    if *s != 0.0 {
                        for (o, vv) in out.iter_mut().zip(&cache.value(layer, j)[span.clone()]) {
                            *o += *s * vv;
                        }
                    }
                }
                if let Capture::Row(buf) = &mut capture {
                    let start = (layer * heads + head) * keys;
                    for (dst, s) in buf[start..start + keys].iter_mut().zip(&scores) {
                        *dst = *s as f32;
                    }
                }
            }
            for (xi, oi) in x.iter_mut().zip(block.wo.apply(&attn)) {
                *xi += oi;
            }
            let mlp = block.mlp(&x);
            for (xi, mi) in x.iter_mut().zip(mlp) {
                *xi += mi;
            }
        }
        self.logits(&x)
    }

    fn decode(
        &self,
        prompt: &[u32],
        max_new: usize,
        masked_keys: &[usize],
        capture_steps: bool,
        mut prefill: Option<&mut PrefillAttention>,
        hook: &mut dyn FnMut(StepAttention),
    ) -> Result<Generation> {
        self.check_tokens(prompt)?;
        self.check_lengths(prompt.len(), max_new)?;
        let mask = KeyMask::new(prompt.len(), masked_keys)?;
        let layers = self.config.num_layers;
        let heads = self.config.num_heads;
        let n = prompt.len();
        let mut cache = KvCache::new(layers, self.config.d_model, n + max_new);
        let mut generated = Vec::with_capacity(max_new);
        let mut per_step_logits = Vec::with_capacity(max_new);
        if max_new == 0 {
            return Ok(Generation { prompt_tokens: prompt.to_vec(), generated_tokens: generated, per_step_logits });
        }

        let mut row_buf = Vec::new();
        let mut logits = Vec::new();
        for (pos, &tok) in prompt.iter().enumerate() {
            let last = pos + 1 == n;
            let want_row = (last && capture_steps) || prefill.is_some();
            if want_row {
                row_buf.clear();
                row_buf.resize(layers * heads * (pos + 1), 0.0f32);
            }
            let capture = if want_row { Capture::Row(&mut row_buf) } else { Capture::None };
            logits = self.forward_token(tok, pos, &mut cache, &mask, capture);
            if let Some(p) = prefill.as_deref_mut() {
                for l in 0..layers {
                    for h in 0..heads {
                        let start = (l * heads + h) * (pos + 1);
                        p.row_mut(l, h, pos).copy_from_slice(&row_buf[start..start + pos + 1]);
                    }
                }
            }
        }

        for k in 1..=max_new {
            let next = argmax(&logits);
            generated.push(next);
            if capture_steps {
                let weights = std::mem::take(&mut row_buf);
                hook(StepAttention::new(k, layers, heads, n + k - 1, weights)?);
            }
            per_step_logits.push(std::mem::take(&mut logits));
            if k == max_new {
                break;
            }
            let pos = n + k - 1;
            let capture = if capture_steps {
                row_buf = vec![0.0f32; layers * heads * (pos + 1)];
                Capture::Row(&mut row_buf)
            } else {
                Capture::None
            };
            logits = self.forward_token(next, pos, &mut cache, &mask, capture);
        }
        Ok(Generation { prompt_tokens: prompt.to_vec(), generated_tokens: generated, per_step_logits })
    }

    /// Greedy KV-cached generation recording every step's attention rows.
    pub fn generate(&self, prompt: &[u32], max_new: usize, masked_keys: &[usize]) -> Result<GenerationRecord> {
        self.generate_with_capture(prompt, max_new, masked_keys, false)
    }

    /// Like [`Model::generate`]; with `full_matrices` the trace also carries the
    /// prefill attention needed by rollout.
    pub fn generate_with_capture(
        &self,
        prompt: &[u32],
        max_new: usize,
        masked_keys: &[usize],
        full_matrices: bool,
    ) -> Result<GenerationRecord> {
        let mut prefill = full_matrices.then(|| PrefillAttention::zeros(self.config.num_layers, self.config.num_heads, prompt.len()));
        let mut steps = Vec::with_capacity(max_new);
        let generation = self.decode(prompt, max_new, masked_keys, true, prefill.as_mut(), &mut |s| steps.push(s))?;
        let n = prompt.len();
        let tokens = prompt
            .iter()
            .chain(&generation.generated_tokens)
            .enumerate()
            .map(|(i, &t)| TokenMeta {
                token_id: t,
                position: i,
                segment: if i < n { Segment::Context } else { Segment::Generated },
                text: format!("t{t}"),
            })
            .collect();
        let trace = AttentionTrace {
            num_layers: self.config.num_layers,
            num_heads: self.config.num_heads,
            input_len: n,
            tokens,
            steps,
            answers: Vec::new(),
            prefill,
            provenance: None,
        };
        Ok(GenerationRecord {
            prompt_tokens: generation.prompt_tokens,
            generated_tokens: generation.generated_tokens,
            per_step_logits: generation.per_step_logits,
            trace,
        })
    }

    /// Greedy generation that hands each step's attention rows to `hook` as
    /// soon as they exist instead of storing them.
    pub fn generate_streaming<F: FnMut(StepAttention)>(
        &self,
        prompt: &[u32],
        max_new: usize,
        masked_keys: &[usize],
        mut hook: F,
    ) -> Result<Generation> {
        self.decode(prompt, max_new, masked_keys, true, None, &mut hook)
    }

    /// Greedy generation without any attention capture.
    pub fn generate_tokens(&self, prompt: &[u32], max_new: usize, masked_keys: &[usize]) -> Result<Generation> {
        self.decode(prompt, max_new, masked_keys, false, None, &mut |_| {})
    }

    /// Teacher-forced logits: entry `i` holds the logits that predict
    /// `continuation[i]` given the prompt and `continuation[..i]`.
    pub fn score_continuation(&self, prompt: &[u32], continuation: &[u32], masked_keys: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(prompt)?;
        self.check_tokens(continuation)?;
        self.check_lengths(prompt.len(), continuation.len())?;
        let mask = KeyMask::new(prompt.len(), masked_keys)?;
        if continuation.is_empty() {
            return Ok(Vec::new());
        }
        let mut cache = KvCache::new(self.config.num_layers, self.config.d_model, prompt.len() + continuation.len());
        let inputs = prompt.iter().chain(&continuation[..continuation.len() - 1]);
        let mut out = Vec::with_capacity(continuation.len());
        for (pos, &tok) in inputs.enumerate() {
            let logits = self.forward_token(tok, pos, &mut cache, &mask, Capture::None);
            if pos + 1 >= prompt.len() {
                out.push(logits);
            }
        }
        Ok(out)
    }

    /// Reference forward pass over a whole sequence without any cache.
    ///
    /// Recomputes every position from scratch with explicit causal and key
    /// masks; used to check the incremental path.
    pub fn forward_full(&self, tokens: &[u32], masked_keys: &[usize]) -> Result<FullForward> {
        self.check_tokens(tokens)?;
        self.check_lengths(tokens.len(), 0)?;
        let seq = tokens.len();
        let d = self.config.d_model;
        let heads = self.config.num_heads;
        let hd = self.config.head_dim();
        let visible: Vec<bool> = (0..seq).map(|j| !masked_keys.contains(&j)).collect();

        let mut xs: Vec<Vec<f64>> = tokens.iter().enumerate().map(|(p, &t)| self.embed(t, p)).collect();
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let normed: Vec<Vec<f64>> = xs.iter().map(|x| rms_norm(x, &block.attn_norm)).collect();
            let qs: Vec<Vec<f64>> = normed.iter().map(|h| block.wq.apply(h)).collect();
            let ks: Vec<Vec<f64>> = normed.iter().map(|h| block.wk.apply(h)).collect();
            let vs: Vec<Vec<f64>> = normed.iter().map(|h| block.wv.apply(h)).collect();

            let mut layer_attn = vec![Vec::with_capacity(seq); heads];
            let mut outs = vec![vec![0.0; d]; seq];
            for (head, head_attn) in layer_attn.iter_mut().enumerate() {
                let lo = head * hd;
                let hi = lo + hd;
                for q in 0..seq {
                    // full score row with causal and key masking
                    let raw: Vec<Option<f64>> = (0..=q)
                        .map(|j| visible[j].then(|| dot(&qs[q][lo..hi], &ks[j][lo..hi]) / (hd as f64).sqrt()))
                        .collect();
                    let peak = raw.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = raw.iter().map(|s| s.map_or(0.0, |s| (s - peak).exp())).collect();
                    let z: f64 = exps.iter().sum();
                    let row: Vec<f64> = exps.iter().map(|e| if z > 0.0 { e / z } else { 0.0 }).collect();
                    for (j, w) in row.iter().enumerate() {
                        for c in lo..hi {
                            outs[q][c] += w * vs[j][c];
                        }
                    }
                    head_attn.push(row);
                }
            }
            for (x, o) in xs.iter_mut().zip(&outs) {
                let proj = block.wo.apply(o);
                for (xi, pi) in x.iter_mut().zip(proj) {
                    *xi += pi;
                }
                let m = block.mlp(x);
                for (xi, mi) in x.iter_mut().zip(m) {
                    *xi += mi;
                }
            }
            attention.push(layer_attn);
        }
        let logits = xs.iter().map(|x| self.logits(x)).collect();
        Ok(FullForward { logits, attention })
    }

    /// Greedy generation that recomputes the whole sequence at every step.
    pub fn generate_uncached(&self, prompt: &[u32], max_new: usize, masked_keys: &[usize]) -> Result<Generation> {
        self.check_lengths(prompt.len(), max_new)?;
        KeyMask::new(prompt.len(), masked_keys)?;
        let mut seq = prompt.to_vec();
        let mut per_step_logits = Vec::with_capacity(max_new);
        for _ in 0..max_new {
            let full = self.forward_full(&seq, masked_keys)?;
            let logits = full.logits.last().expect("non-empty sequence").clone();
            seq.push(argmax(&logits));
            per_step_logits.push(logits);
        }
        Ok(Generation {
            prompt_tokens: prompt.to_vec(),
            generated_tokens: seq[prompt.len()..].to_vec(),
            per_step_logits,
        })
    }
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

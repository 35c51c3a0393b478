//! Causal multi-head self-attention decoder with a KV cache and greedy decoding.
//!
//! Each layer is a pre-norm residual block:
//!
//! ```text
//! h   = x + Attn(RmsNorm(x))
//! out = h + W_down( silu(RmsNorm(h) W_gate) * (RmsNorm(h) W_up) )
//! ```
//!
//! Inside attention, for every head, the engine computes raw scores
//! `Q K^T / sqrt(d_head)` (RoPE on `Q` and `K`), applies the causal mask, then
//! hands the masked score matrix to the [`ScoreHook`] exactly once before the
//! softmax. After the softmax the [`AttentionRecorder`] receives the weight
//! row of the last query position.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::intervention::{InterventionSpec, MataHook};
use crate::model::ModelWeights;
use crate::sequence::TokenSequence;
use crate::tensor::{self, Matrix, MASK};

/// Where a score matrix handed to a hook came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreContext {
    pub layer: usize,
    pub head: usize,
    /// Absolute position of the first query row.
    pub query_offset: usize,
}

/// Called between causal masking and softmax, once per (layer, head).
///
/// `scores` is `queries × keys`; row `r` belongs to absolute position
/// `ctx.query_offset + r` and there are `scores.cols()` keys in context.
pub trait ScoreHook {
    fn on_scores(&mut self, ctx: &ScoreContext, scores: &mut Matrix) -> Result<()>;
}

/// Leaves scores untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl ScoreHook for NoHook {
    fn on_scores(&mut self, _ctx: &ScoreContext, _scores: &mut Matrix) -> Result<()> {
        Ok(())
    }
}

/// Receives the post-softmax weights of the last query row of every head.
pub trait AttentionRecorder {
    /// Marks the start of a forward pass that predicts generated token `step`.
    fn begin_step(&mut self, _step: usize) {}
    fn record(&mut self, layer: usize, head: usize, weights: &[f64]);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoRecorder;

impl AttentionRecorder for NoRecorder {
    fn record(&mut self, _layer: usize, _head: usize, _weights: &[f64]) {}
}

/// Raw and hooked scores of one (layer, head) call.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedScores {
    pub ctx: ScoreContext,
    /// Post-mask scores as handed to the hook.
    pub before: Matrix,
    /// Scores after the inner hook ran, i.e. the softmax input.
    pub after: Matrix,
}

/// Wraps a hook and keeps a copy of every score matrix it sees.
#[derive(Debug, Default)]
pub struct CapturingHook<H> {
    pub inner: H,
    pub captured: Vec<CapturedScores>,
}

impl<H: ScoreHook> CapturingHook<H> {
    pub fn new(inner: H) -> Self {
        Self { inner, captured: Vec::new() }
    }
}

impl<H: ScoreHook> ScoreHook for CapturingHook<H> {
    fn on_scores(&mut self, ctx: &ScoreContext, scores: &mut Matrix) -> Result<()> {
        let before = scores.clone();
        self.inner.on_scores(ctx, scores)?;
        self.captured.push(CapturedScores { ctx: *ctx, before, after: scores.clone() });
        Ok(())
    }
}

/// `Q K^T / sqrt(d_k)` without masking.
pub fn attention_scores(q: &Matrix, k: &Matrix, d_k: usize) -> Result<Matrix> {
    if q.cols() != d_k || k.cols() != d_k {
        return Err(Error::Shape {
            op: "attention_scores",
            detail: format!("Q is {}x{}, K is {}x{}, d_k = {d_k}", q.rows(), q.cols(), k.rows(), k.cols()),
        });
    }
    let scale = 1.0 / libm::sqrt(d_k as f64);
    let mut s = Matrix::zeros(q.rows(), k.rows());
    for i in 0..q.rows() {
        let qi = q.row(i);
        for j in 0..k.rows() {
            let dot: f64 = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
            s.set(i, j, dot * scale);
        }
    }
    Ok(s)
}

/// Masks keys that lie after each query's absolute position.
pub fn apply_causal_mask(scores: &mut Matrix, query_offset: usize) -> Result<()> {
    if query_offset + scores.rows() != scores.cols() {
        return Err(Error::Shape {
            op: "apply_causal_mask",
            detail: format!(
                "query offset {query_offset} + {} rows does not align with {} keys",
                scores.rows(),
                scores.cols()
            ),
        });
    }
    for r in 0..scores.rows() {
        let pos = query_offset + r;
        for s in &mut scores.row_mut(r)[pos + 1..] {
            *s = MASK;
        }
    }
    Ok(())
}

/// Per-layer, per-head key and value rows of every position processed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KVCache {
    d_head: usize,
    max_len: usize,
    len: usize,
    // [layer][head] -> len x d_head, row-major
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl KVCache {
    pub fn new(n_layers: usize, n_heads: usize, d_head: usize, max_len: usize) -> Self {
        Self {
            d_head,
            max_len,
            len: 0,
            keys: vec![vec![Vec::new(); n_heads]; n_layers],
            values: vec![vec![Vec::new(); n_heads]; n_layers],
        }
    }

    pub fn for_model(weights: &ModelWeights) -> Self {
        let c = &weights.config;
        Self::new(c.n_layers, c.n_heads, c.d_head, c.max_seq_len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.max_len
    }

    pub fn keys(&self, layer: usize, head: usize) -> &[f64] {
        &self.keys[layer][head]
    }

    pub fn values(&self, layer: usize, head: usize) -> &[f64] {
        &self.values[layer][head]
    }

    /// Number of positions stored for `(layer, head)`, including any not yet committed.
    pub fn stored(&self, layer: usize, head: usize) -> usize {
        self.keys[layer][head].len() / self.d_head
    }

    fn append(&mut self, layer: usize, head: usize, k: &Matrix, v: &Matrix) {
        self.keys[layer][head].extend_from_slice(k.data());
        self.values[layer][head].extend_from_slice(v.data());
    }

    fn commit(&mut self, n: usize) {
        self.len += n;
    }

    /// Drops everything past `len` positions.
    pub fn truncate(&mut self, len: usize) {
        let keep = len.min(self.len) * self.d_head;
        for (ks, vs) in self.keys.iter_mut().zip(&mut self.values) {
            for (k, v) in ks.iter_mut().zip(vs.iter_mut()) {
                k.truncate(keep);
                v.truncate(keep);
            }
        }
        self.len = self.len.min(len);
    }
}

fn head_block(m: &Matrix, head: usize, d_head: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), d_head);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[head * d_head..(head + 1) * d_head]);
    }
    out
}

fn rms_norm_rows(x: &Matrix, gain: &[f64], eps: f64) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&tensor::rms_norm(x.row(r), gain, eps)?);
    }
    Ok(out)
}

fn add_in_place(acc: &mut Matrix, other: &Matrix) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

/// Multi-head causal self-attention for one layer over already-normalised rows.
///
/// `x` holds the queries at absolute positions `cache.len() ..`; their keys
/// and values are appended to the cache for this layer.
pub fn attention_forward(
    weights: &ModelWeights,
    layer: usize,
    x: &Matrix,
    cache: &mut KVCache,
    hook: &mut dyn ScoreHook,
    recorder: &mut dyn AttentionRecorder,
) -> Result<Matrix> {
    let cfg = &weights.config;
    let lw = &weights.layers[layer];
    let start = cache.len();
    let (n, dh) = (x.rows(), cfg.d_head);

    let q = tensor::matmul(x, &lw.wq)?;
    let k = tensor::matmul(x, &lw.wk)?;
    let v = tensor::matmul(x, &lw.wv)?;

    let mut concat = Matrix::zeros(n, cfg.d_model);
    for head in 0..cfg.n_heads {
        let qh = tensor::rope_apply(&head_block(&q, head, dh), start)?;
        let kh = tensor::rope_apply(&head_block(&k, head, dh), start)?;
        let vh = head_block(&v, head, dh);
        if cache.stored(layer, head) != start {
            return Err(Error::Shape {
                op: "attention_forward",
                detail: format!(
                    "layer {layer} head {head} holds {} positions, cache length is {start}",
                    cache.stored(layer, head)
                ),
            });
        }
        cache.append(layer, head, &kh, &vh);
        let total = start + n;
        let keys = Matrix::new(total, dh, cache.keys(layer, head).to_vec())?;
        let values = Matrix::new(total, dh, cache.values(layer, head).to_vec())?;

        let mut scores = attention_scores(&qh, &keys, dh)?;
        apply_causal_mask(&mut scores, start)?;
        hook.on_scores(&ScoreContext { layer, head, query_offset: start }, &mut scores)?;

        let mut probs = Matrix::zeros(n, total);
        for r in 0..n {
            probs.row_mut(r).copy_from_slice(&tensor::softmax_row(scores.row(r))?);
        }
        recorder.record(layer, head, probs.row(n - 1));

        let out_h = tensor::matmul(&probs, &values)?;
        for r in 0..n {
            concat.row_mut(r)[head * dh..(head + 1) * dh].copy_from_slice(out_h.row(r));
        }
    }
    tensor::matmul(&concat, &lw.wo)
}

/// One pre-norm residual decoder block.
pub fn layer_forward(
    weights: &ModelWeights,
    layer: usize,
    x: &Matrix,
    cache: &mut KVCache,
    hook: &mut dyn ScoreHook,
    recorder: &mut dyn AttentionRecorder,
) -> Result<Matrix> {
    let cfg = &weights.config;
    let lw = &weights.layers[layer];
    let normed = rms_norm_rows(x, &lw.attn_norm_gain, cfg.norm_eps)?;
    let mut h = attention_forward(weights, layer, &normed, cache, hook, recorder)?;
    add_in_place(&mut h, x);

    let normed = rms_norm_rows(&h, &lw.mlp_norm_gain, cfg.norm_eps)?;
    let mut gate = tensor::matmul(&normed, &lw.w_gate)?;
    let up = tensor::matmul(&normed, &lw.w_up)?;
    for (g, u) in gate.data_mut().iter_mut().zip(up.data()) {
        *g = tensor::silu(*g) * u;
    }
    let mut out = tensor::matmul(&gate, &lw.w_down)?;
    add_in_place(&mut out, &h);
    Ok(out)
}

fn embed(weights: &ModelWeights, tokens: &[u32]) -> Result<Matrix> {
    let cfg = &weights.config;
    let mut x = Matrix::zeros(tokens.len(), cfg.d_model);
    for (r, &t) in tokens.iter().enumerate() {
        if t as usize >= cfg.vocab_size {
            return Err(Error::Token { token: t, vocab_size: cfg.vocab_size });
        }
        x.row_mut(r).copy_from_slice(weights.token_embedding.row(t as usize));
    }
    Ok(x)
}

/// Runs `tokens` through every layer starting at position `cache.len()` and
/// returns the final hidden rows. The cache is rolled back on error.
fn forward_hidden(
    weights: &ModelWeights,
    tokens: &[u32],
    cache: &mut KVCache,
    hook: &mut dyn ScoreHook,
    recorder: &mut dyn AttentionRecorder,
) -> Result<Matrix> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("token sequence"));
    }
    let start = cache.len();
    let requested = start + tokens.len();
    if requested > weights.config.max_seq_len || requested > cache.capacity() {
        return Err(Error::Capacity { requested, max: weights.config.max_seq_len.min(cache.capacity()) });
    }
    let run = |cache: &mut KVCache, hook: &mut dyn ScoreHook, recorder: &mut dyn AttentionRecorder| {
        let mut x = embed(weights, tokens)?;
        for layer in 0..weights.config.n_layers {
            x = layer_forward(weights, layer, &x, cache, hook, recorder)?;
        }
        Ok(x)
    };
    match run(cache, hook, recorder) {
        Ok(x) => {
            cache.commit(tokens.len());
            Ok(x)
        }
        Err(e) => {
            cache.truncate(start);
            Err(e)
        }
    }
}

fn logits_for_row(weights: &ModelWeights, hidden: &[f64]) -> Result<Vec<f64>> {
    let normed = tensor::rms_norm(hidden, &weights.final_norm_gain, weights.config.norm_eps)?;
    tensor::vecmat(&normed, &weights.lm_head)
}

/// Uncached forward over the whole sequence; returns logits for every position.
pub fn full_forward(
    weights: &ModelWeights,
    tokens: &[u32],
    hook: &mut dyn ScoreHook,
    recorder: &mut dyn AttentionRecorder,
) -> Result<Matrix> {
    let mut cache = KVCache::for_model(weights);
    let hidden = forward_hidden(weights, tokens, &mut cache, hook, recorder)?;
    let mut rows = Vec::with_capacity(hidden.rows());
    for r in 0..hidden.rows() {
        rows.push(logits_for_row(weights, hidden.row(r))?);
    }
    Matrix::from_rows(&rows)
}

/// Prompt forward pass with an arbitrary hook. Returns next-token logits and the filled cache.
pub fn prefill_with_hook(
    weights: &ModelWeights,
    tokens: &[u32],
    hook: &mut dyn ScoreHook,
    recorder: &mut dyn AttentionRecorder,
) -> Result<(Vec<f64>, KVCache)> {
    let mut cache = KVCache::for_model(weights);
    let hidden = forward_hidden(weights, tokens, &mut cache, hook, recorder)?;
    let logits = logits_for_row(weights, hidden.row(hidden.rows() - 1))?;
    Ok((logits, cache))
}

/// Prompt forward pass with the intervention described by `spec`.
///
/// Only the final prompt row satisfies `i == L - 1`, so it is the only row
/// the intervention can touch.
pub fn prefill(
    weights: &ModelWeights,
    seq: &TokenSequence,
    spec: &InterventionSpec,
    recorder: &mut dyn AttentionRecorder,
) -> Result<(Vec<f64>, KVCache)> {
    if spec.enabled {
        spec.validate(weights.config.n_layers)?;
    }
    let mut hook = MataHook::for_sequence(*spec, seq);
    prefill_with_hook(weights, seq.tokens(), &mut hook, recorder)
}

/// Feeds one token at `absolute_pos` (which must equal the cache length)
/// and returns the logits for the following position.
pub fn decode_step(
    weights: &ModelWeights,
    cache: &mut KVCache,
    last_token: u32,
    absolute_pos: usize,
    hook: &mut dyn ScoreHook,
    recorder: &mut dyn AttentionRecorder,
) -> Result<Vec<f64>> {
    if absolute_pos != cache.len() {
        return Err(Error::Shape {
            op: "decode_step",
            detail: format!("absolute position {absolute_pos} != cache length {}", cache.len()),
        });
    }
    let hidden = forward_hidden(weights, &[last_token], cache, hook, recorder)?;
    logits_for_row(weights, hidden.row(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Prompt plus generated tokens, with the generated ones in the `Generated` region.
    pub sequence: TokenSequence,
    pub generated: Vec<u32>,
    /// Logits each generated token was chosen from.
    pub step_logits: Vec<Vec<f64>>,
    pub stopped: bool,
}

/// Greedy decoding with lowest-index tie-breaking.
///
/// Generation ends after `max_new_tokens` tokens or once `stop_token` is
/// produced; the stop token is included in the output. The recorder sees
/// one step per generated token: step 0 is the prompt pass.
pub fn decode_greedy(
    weights: &ModelWeights,
    prompt: &TokenSequence,
    spec: &InterventionSpec,
    recorder: &mut dyn AttentionRecorder,
    max_new_tokens: usize,
    stop_token: Option<u32>,
) -> Result<DecodeResult> {
    if max_new_tokens == 0 {
        return Err(Error::EmptyInput("max_new_tokens must be >= 1"));
    }
    if spec.enabled {
        spec.validate(weights.config.n_layers)?;
    }
    let mut hook = MataHook::for_sequence(*spec, prompt);
    let mut seq = prompt.clone();
    let mut generated = Vec::with_capacity(max_new_tokens);
    let mut step_logits = Vec::with_capacity(max_new_tokens);

    recorder.begin_step(0);
    let (mut logits, mut cache) = prefill_with_hook(weights, prompt.tokens(), &mut hook, recorder)?;
    let mut stopped = false;
    for step in 0..max_new_tokens {
        let next = tensor::argmax_tie_low(&logits)? as u32;
        seq.push_generated(next);
        generated.push(next);
        step_logits.push(logits);
        if stop_token == Some(next) {
            stopped = true;
            break;
        }
        if step + 1 == max_new_tokens {
            break;
        }
        recorder.begin_step(step + 1);
        logits = decode_step(weights, &mut cache, next, seq.len() - 1, &mut hook, recorder)?;
    }
    Ok(DecodeResult { sequence: seq, generated, step_logits, stopped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_synthetic_weights, ModelConfig};

    struct Counter(usize);
    impl AttentionRecorder for Counter {
        fn record(&mut self, _l: usize, _h: usize, w: &[f64]) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            self.0 += 1;
        }
    }

    #[test]
    fn score_examples() {
        let q = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = attention_scores(&q, &k, 2).unwrap();
        assert_eq!(s.data(), &[1.0 / libm::sqrt(2.0), 0.0]);

        let z = Matrix::zeros(3, 4);
        assert!(attention_scores(&z, &z, 4).unwrap().data().iter().all(|&x| x == 0.0));

        let q = Matrix::from_rows(&[[2.0]]).unwrap();
        let k = Matrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(attention_scores(&q, &k, 1).unwrap().data(), &[6.0]);

        assert!(attention_scores(&Matrix::zeros(1, 3), &Matrix::zeros(2, 2), 2).is_err());
    }

    #[test]
    fn causal_mask_examples() {
        let mut one = Matrix::zeros(1, 5);
        apply_causal_mask(&mut one, 4).unwrap();
        assert!(one.data().iter().all(|&x| x == 0.0));

        let mut sq = Matrix::zeros(3, 3);
        apply_causal_mask(&mut sq, 0).unwrap();
        assert_eq!(sq.data().iter().filter(|&&x| x == MASK).count(), 3);
        assert_eq!(sq.get(0, 1), MASK);
        assert_eq!(sq.get(1, 0), 0.0);

        let mut m = Matrix::zeros(2, 5);
        apply_causal_mask(&mut m, 3).unwrap();
        assert_eq!(m.get(0, 4), MASK);
        assert_eq!(m.get(1, 4), 0.0);
        assert_eq!(m.get(0, 3), 0.0);

        assert!(apply_causal_mask(&mut Matrix::zeros(2, 5), 2).is_err());
    }

    #[test]
    fn recorder_called_once_per_head_per_layer() {
        let cfg = ModelConfig::tiny(3);
        let w = gen_synthetic_weights(&cfg, 1).unwrap();
        let mut rec = Counter(0);
        let (_, cache) = prefill_with_hook(&w, &[1, 2, 3, 4], &mut NoHook, &mut rec).unwrap();
        assert_eq!(rec.0, cfg.n_layers * cfg.n_heads);
        assert_eq!(cache.len(), 4);
    }

    #[test]
    fn zero_mlp_leaves_residual_unchanged() {
        let cfg = ModelConfig::tiny(1);
        let mut w = gen_synthetic_weights(&cfg, 2).unwrap();
        w.layers[0].w_down = Matrix::zeros(cfg.d_ff, cfg.d_model);
        // zero the attention output too, so the whole block is the identity
        w.layers[0].wo = Matrix::zeros(cfg.d_model, cfg.d_model);
        let x = embed(&w, &[3, 5]).unwrap();
        let mut cache = KVCache::for_model(&w);
        let out = layer_forward(&w, 0, &x, &mut cache, &mut NoHook, &mut NoRecorder).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn capacity_and_token_errors() {
        let mut cfg = ModelConfig::tiny(1);
        cfg.max_seq_len = 4;
        let w = gen_synthetic_weights(&cfg, 3).unwrap();
        assert!(matches!(
            prefill_with_hook(&w, &[1; 5], &mut NoHook, &mut NoRecorder),
            Err(Error::Capacity { requested: 5, max: 4 })
        ));
        let (_, mut cache) = prefill_with_hook(&w, &[1; 4], &mut NoHook, &mut NoRecorder).unwrap();
        assert!(matches!(
            decode_step(&w, &mut cache, 1, 4, &mut NoHook, &mut NoRecorder),
            Err(Error::Capacity { .. })
        ));
        assert_eq!(cache.len(), 4);
        assert!(matches!(
            prefill_with_hook(&w, &[99], &mut NoHook, &mut NoRecorder),
            Err(Error::Token { token: 99, .. })
        ));
    }

    #[test]
    fn decode_step_checks_position() {
        let w = gen_synthetic_weights(&ModelConfig::tiny(1), 3).unwrap();
        let (_, mut cache) = prefill_with_hook(&w, &[1, 2], &mut NoHook, &mut NoRecorder).unwrap();
        assert!(decode_step(&w, &mut cache, 1, 3, &mut NoHook, &mut NoRecorder).is_err());
        decode_step(&w, &mut cache, 1, 2, &mut NoHook, &mut NoRecorder).unwrap();
        assert_eq!(cache.len(), 3);
    }

    #[test]
    fn failed_forward_rolls_back_cache() {
        let w = gen_synthetic_weights(&ModelConfig::tiny(2), 3).unwrap();
        let seq = TokenSequence::from_regions(&[1], &[], &[2]);
        let spec = InterventionSpec::new(0.1, 1, 2);
        // no audio span, active spec -> span error at layer 1
        assert!(matches!(prefill(&w, &seq, &spec, &mut NoRecorder), Err(Error::Span(_))));
        let (_, mut cache) = prefill_with_hook(&w, &[1, 2], &mut NoHook, &mut NoRecorder).unwrap();
        let mut hook = MataHook::new(spec, None);
        assert!(decode_step(&w, &mut cache, 1, 2, &mut hook, &mut NoRecorder).is_err());
        assert_eq!(cache.len(), 2);
        for l in 0..2 {
            for h in 0..2 {
                assert_eq!(cache.stored(l, h), 2);
            }
        }
    }

    #[test]
    fn greedy_budget_and_stop_token() {
        let w = gen_synthetic_weights(&ModelConfig::tiny(2), 11).unwrap();
        let prompt = TokenSequence::from_regions(&[1, 2], &[3, 4, 5], &[6]);
        let spec = crate::intervention::make_noop();
        let one = decode_greedy(&w, &prompt, &spec, &mut NoRecorder, 1, None).unwrap();
        assert_eq!(one.generated.len(), 1);

        let first = one.generated[0];
        let stopped = decode_greedy(&w, &prompt, &spec, &mut NoRecorder, 8, Some(first)).unwrap();
        assert_eq!(stopped.generated, vec![first]);
        assert!(stopped.stopped);

        let a = decode_greedy(&w, &prompt, &spec, &mut NoRecorder, 6, None).unwrap();
        let b = decode_greedy(&w, &prompt, &spec, &mut NoRecorder, 6, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sequence.generated(), a.generated.as_slice());
        assert!(decode_greedy(&w, &prompt, &spec, &mut NoRecorder, 0, None).is_err());
    }
}

//! Architecture configuration and deterministic synthetic weights.
//!
//! # Weight generation
//!
//! Weights are a pure function of `(ModelConfig, seed)`. The generator is
//! xorshift64* seeded through one round of splitmix64:
//!
//! ```text
//! seed_state(seed):
//!     z = seed + 0x9E3779B97F4A7C15            (wrapping)
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 (wrapping)
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB (wrapping)
//!     z = z ^ (z >> 31)
//!     state = if z == 0 { 0x9E3779B97F4A7C15 } else { z }
//!
//! next_u64():
//!     state ^= state >> 12
//!     state ^= state << 25
//!     state ^= state >> 27
//!     return state * 0x2545F4914F6CDD1D        (wrapping)
//!
//! next_uniform(bound):
//!     u = (next_u64() >> 11) as f64 * 2^-53    in [0, 1)
//!     return (2u - 1) * bound                  in [-bound, bound)
//! ```
//!
//! with `bound = 1 / sqrt(d_model)`. One generator is drawn from in the
//! canonical tensor order (see [`ModelWeights::tensors`]), row-major within
//! each tensor. Every parameter, norm gains included, comes from this stream.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Hyperparameters of the decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Per-head key/query width; the `d_k` of the score scaling.
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    /// 28 layers so that layer ranges 0-10, 10-20 and 20-28 partition the stack.
    fn default() -> Self {
        Self {
            n_layers: 28,
            n_heads: 4,
            d_model: 64,
            d_head: 16,
            d_ff: 128,
            vocab_size: 512,
            max_seq_len: 512,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Small config used throughout the tests.
    pub fn tiny(n_layers: usize) -> Self {
        Self {
            n_layers,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ff: 16,
            vocab_size: 32,
            max_seq_len: 64,
            norm_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::Config(format!(
                "d_model ({}) must equal n_heads ({}) * d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_head must be even for rotary embedding, got {}",
                self.d_head
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size must be >= 4, got {}",
                self.vocab_size
            )));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::Config(format!("vocab_size {} exceeds u32 range", self.vocab_size)));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(Error::Config(format!(
                "norm_eps must be finite and > 0, got {}",
                self.norm_eps
            )));
        }
        Ok(())
    }

    /// Total number of `f64` parameters.
    pub fn n_params(&self) -> usize {
        let per_layer = 4 * self.d_model * self.d_model + 2 * self.d_model + 3 * self.d_model * self.d_ff;
        2 * self.vocab_size * self.d_model + self.n_layers * per_layer + self.d_model
    }
}

/// Portable xorshift64* generator; see the module docs for the exact algorithm.
#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Self { state: if z == 0 { 0x9E37_79B9_7F4A_7C15 } else { z } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn next_uniform(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_unit() - 1.0) * bound
    }
}

/// Parameters of one decoder layer. Projections act on row vectors: `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm_gain: Vec<f64>,
    /// `d_model × d_model`, heads laid out as consecutive `d_head` column blocks.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm_gain: Vec<f64>,
    /// `d_model × d_ff`, SiLU-gated branch of the feed-forward.
    pub w_gate: Matrix,
    /// `d_model × d_ff`
    pub w_up: Matrix,
    /// `d_ff × d_model`
    pub w_down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `vocab_size × d_model`
    pub token_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm_gain: Vec<f64>,
    /// `d_model × vocab_size`
    pub lm_head: Matrix,
}

/// Shapes of every tensor in canonical order. Vectors are reported as `1 × n`.
pub fn tensor_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let mut shapes = Vec::with_capacity(3 + 9 * config.n_layers);
    shapes.push((v, d));
    for _ in 0..config.n_layers {
        shapes.extend_from_slice(&[(1, d), (d, d), (d, d), (d, d), (d, d), (1, d), (d, f), (d, f), (f, d)]);
    }
    shapes.push((1, d));
    shapes.push((d, v));
    shapes
}

impl ModelWeights {
    /// Flat views of every tensor in canonical order:
    /// `token_embedding`, then per layer `attn_norm_gain, wq, wk, wv, wo,
    /// mlp_norm_gain, w_gate, w_up, w_down`, then `final_norm_gain`, `lm_head`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 + 9 * self.layers.len());
        out.push(self.token_embedding.data());
        for l in &self.layers {
            out.push(&l.attn_norm_gain);
            out.push(l.wq.data());
            out.push(l.wk.data());
            out.push(l.wv.data());
            out.push(l.wo.data());
            out.push(&l.mlp_norm_gain);
            out.push(l.w_gate.data());
            out.push(l.w_up.data());
            out.push(l.w_down.data());
        }
        out.push(&self.final_norm_gain);
        out.push(self.lm_head.data());
        out
    }

    /// Rebuilds weights from a flat parameter stream in canonical order.
    pub fn from_flat(config: ModelConfig, params: &[f64]) -> Result<Self> {
        config.validate()?;
        if params.len() != config.n_params() {
            return Err(Error::Shape {
                op: "ModelWeights::from_flat",
                detail: format!("expected {} parameters, got {}", config.n_params(), params.len()),
            });
        }
        let mut it = params.iter().copied();
        Self::build(config, || it.next().unwrap_or(0.0))
    }

    fn build(config: ModelConfig, mut next: impl FnMut() -> f64) -> Result<Self> {
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut mat = |rows: usize, cols: usize| -> Result<Matrix> {
            Matrix::new(rows, cols, (0..rows * cols).map(|_| next()).collect())
        };
        let token_embedding = mat(v, d)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let attn_norm_gain = mat(1, d)?.into_data();
            let wq = mat(d, d)?;
            let wk = mat(d, d)?;
            let wv = mat(d, d)?;
            let wo = mat(d, d)?;
            let mlp_norm_gain = mat(1, d)?.into_data();
            let w_gate = mat(d, f)?;
            let w_up = mat(d, f)?;
            let w_down = mat(f, d)?;
            layers.push(LayerWeights { attn_norm_gain, wq, wk, wv, wo, mlp_norm_gain, w_gate, w_up, w_down });
        }
        let final_norm_gain = mat(1, d)?.into_data();
        let lm_head = mat(d, v)?;
        Ok(Self { config, token_embedding, layers, final_norm_gain, lm_head })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::Config(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        let shapes = tensor_shapes(&self.config);
        for (i, (t, (r, c))) in self.tensors().into_iter().zip(shapes).enumerate() {
            if t.len() != r * c {
                return Err(Error::Shape {
                    op: "ModelWeights::validate",
                    detail: format!("tensor {i} has {} values, expected {r}x{c}", t.len()),
                });
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("tensor {i} contains a non-finite value")));
            }
        }
        Ok(())
    }
}

/// Synthetic weights, uniform in `[-1/sqrt(d_model), 1/sqrt(d_model))`.
pub fn gen_synthetic_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let bound = 1.0 / libm::sqrt(config.d_model as f64);
    let mut rng = XorShift64Star::new(seed);
    ModelWeights::build(*config, || rng.next_uniform(bound))
}

//! Deterministic decoder-only transformer inference with a pre-softmax
//! attention intervention hook and attention-mass telemetry.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the
//! command-line driver live in the `mata` crate.
//!
//! Modules:
//! - [`tensor`]: dense `f64` kernels (matmul, stable softmax, RMS norm, RoPE).
//! - [`model`]: [`ModelConfig`], [`ModelWeights`] and seeded synthetic weights.
//! - [`sequence`]: token ids with System / Audio / Instruction / Generated regions.
//! - [`engine`]: causal attention, KV cache, prefill and greedy decoding.
//! - [`intervention`]: the last-row target-span score boost and its spec.
//! - [`telemetry`]: per-step attention capture and per-layer region averages.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod engine;
pub mod error;
pub mod intervention;
pub mod model;
pub mod sequence;
pub mod telemetry;
pub mod tensor;

pub use engine::{
    decode_greedy, decode_step, full_forward, prefill, prefill_with_hook, AttentionRecorder, CapturingHook,
    DecodeResult, KVCache, NoHook, NoRecorder, ScoreContext, ScoreHook,
};
pub use error::{Error, Result};
pub use intervention::{make_noop, InterventionSpec, MataHook};
pub use model::{gen_synthetic_weights, ModelConfig, ModelWeights};
pub use sequence::{Region, Segment, Span, TokenSequence};
pub use telemetry::{aggregate, region_mass, AttentionLog, AttentionRecord, LayerRegionSummary, RegionMasses};
pub use tensor::Matrix;

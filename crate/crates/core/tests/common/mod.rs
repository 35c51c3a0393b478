#![allow(dead_code)]

use mata_core::model::XorShift64Star;
use mata_core::{Matrix, Result, ScoreContext, ScoreHook, Span, TokenSequence};

/// Random prompt with non-empty system, audio and instruction regions.
pub fn random_prompt(seed: u64, vocab_size: usize) -> TokenSequence {
    let mut rng = XorShift64Star::new(seed ^ 0xA5A5_5A5A);
    let mut ids = |n: u64| -> Vec<u32> {
        let len = 1 + (rng.next_u64() % n) as usize;
        (0..len).map(|_| (rng.next_u64() % vocab_size as u64) as u32).collect()
    };
    let system = ids(4);
    let audio = ids(8);
    let instruction = ids(5);
    TokenSequence::from_regions(&system, &audio, &instruction)
}

/// Full-recompute counterpart of per-step last-row intervention: every row
/// at or after `first_last_row` was the last token of its own decoding step,
/// so those rows get the target-span boost in the listed layers.
pub struct ReplayHook {
    pub factor: f64,
    pub layers: std::ops::Range<usize>,
    pub span: Span,
    pub first_last_row: usize,
}

impl ScoreHook for ReplayHook {
    fn on_scores(&mut self, ctx: &ScoreContext, scores: &mut Matrix) -> Result<()> {
        if !self.layers.contains(&ctx.layer) {
            return Ok(());
        }
        for r in 0..scores.rows() {
            if ctx.query_offset + r < self.first_last_row {
                continue;
            }
            for j in self.span.start..=self.span.end_inclusive {
                let v = scores.get(r, j);
                scores.set(r, j, v * self.factor);
            }
        }
        Ok(())
    }
}

/// Model whose residual stream never changes (zero attention output and
/// zero down-projection) and whose queries and keys live only in the
/// lowest-frequency rotary pair with equal components. Every raw score is
/// then `2 c^2 cos(delta * theta) / sqrt(d_head) > 0` for the short contexts used in tests.
pub fn positive_score_model(cfg: &mata_core::ModelConfig, seed: u64) -> mata_core::ModelWeights {
    let mut w = mata_core::gen_synthetic_weights(cfg, seed).unwrap();
    let d = cfg.d_model;
    let dh = cfg.d_head;
    for row in 0..cfg.vocab_size {
        w.token_embedding.row_mut(row).fill(1.0);
    }
    let entry = 1.4 / d as f64;
    for l in &mut w.layers {
        l.attn_norm_gain.fill(1.0);
        let mut proj = Matrix::zeros(d, d);
        for h in 0..cfg.n_heads {
            for c in [h * dh + dh - 2, h * dh + dh - 1] {
                for r in 0..d {
                    proj.set(r, c, entry);
                }
            }
        }
        l.wq = proj.clone();
        l.wk = proj;
        l.wo = Matrix::zeros(d, d);
        l.w_down = Matrix::zeros(cfg.d_ff, d);
    }
    w
}

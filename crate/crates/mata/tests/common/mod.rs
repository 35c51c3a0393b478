#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mata_core::model::XorShift64Star;
use mata_core::{Matrix, ModelConfig, ModelWeights, Result, ScoreContext, ScoreHook, Span, TokenSequence};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_mata"))
}

/// Runs the CLI in `dir` with no telemetry override from the environment.
pub fn mata(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("MATA_TELEMETRY_DIR")
        .output()
        .expect("spawn mata")
}

/// Random prompt; region lengths are drawn from `1..=max` for each region.
pub fn random_prompt_with(seed: u64, vocab_size: usize, max: [u64; 3]) -> TokenSequence {
    let mut rng = XorShift64Star::new(seed ^ 0x0000_5EED_0FC0_FFEE);
    let mut ids = |n: u64| -> Vec<u32> {
        let len = 1 + (rng.next_u64() % n) as usize;
        (0..len).map(|_| (rng.next_u64() % vocab_size as u64) as u32).collect()
    };
    let system = ids(max[0]);
    let audio = ids(max[1]);
    let instruction = ids(max[2]);
    TokenSequence::from_regions(&system, &audio, &instruction)
}

pub fn random_prompt(seed: u64, vocab_size: usize) -> TokenSequence {
    random_prompt_with(seed, vocab_size, [6, 12, 8])
}

/// Full-recompute counterpart of per-step last-row intervention: rows at or
/// after `first_last_row` were each the last token of their own step.
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

/// Frozen residual stream, queries and keys only in the lowest-frequency
/// rotary pair: every raw score is strictly positive for short contexts.
pub fn positive_score_model(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    let mut w = mata_core::gen_synthetic_weights(cfg, seed).unwrap();
    let (d, dh) = (cfg.d_model, cfg.d_head);
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

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Experiment text with the given model line, prompt and optional intervention table.
pub fn experiment(model_line: &str, intervention: Option<&str>, max_new: usize) -> String {
    let mut s = format!(
        "{model_line}\nmax_new_tokens = {max_new}\n\n[prompt]\nsystem = [1, 2, 3]\naudio = [100, 101, 102, 103, 104, 105]\ninstruction = [200, 201, 202]\n"
    );
    if let Some(t) = intervention {
        s.push_str("\n[intervention]\n");
        s.push_str(t);
        s.push('\n');
    }
    s
}

//! Decode, compare and sweep runs shared by the CLI and the tests.

use std::fmt::Write as _;
use std::ops::Range;

use mata_core::{
    aggregate, decode_greedy, make_noop, AttentionLog, DecodeResult, InterventionSpec, LayerRegionSummary,
    ModelWeights, Region,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::experiment::ExperimentSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub result: DecodeResult,
    pub log: AttentionLog,
    pub summaries: Vec<LayerRegionSummary>,
}

pub fn run_decode(weights: &ModelWeights, exp: &ExperimentSpec, spec: &InterventionSpec) -> Result<RunOutput> {
    let mut log = AttentionLog::new();
    let result = decode_greedy(weights, &exp.prompt, spec, &mut log, exp.max_new_tokens, exp.stop_token)?;
    let summaries = aggregate(&log.records, result.sequence.segments())?;
    Ok(RunOutput { result, log, summaries })
}

/// First step at which the two generations differ; a strict prefix diverges
/// where the shorter one ends.
pub fn first_divergence(a: &[u32], b: &[u32]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

/// First 16 hex digits of SHA-256 over the token ids as little-endian `u32`s.
pub fn token_hash(tokens: &[u32]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn audio_mass(summaries: &[LayerRegionSummary], layers: Range<usize>) -> f64 {
    let picked: Vec<f64> = summaries
        .iter()
        .filter(|s| layers.contains(&s.layer))
        .map(|s| s.masses.get(Region::Audio))
        .collect();
    if picked.is_empty() {
        0.0
    } else {
        picked.iter().sum::<f64>() / picked.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer: usize,
    pub active: bool,
    pub baseline_audio_mass: f64,
    pub intervened_audio_mass: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub n_active_layers: usize,
    pub mean_delta_active: f64,
    pub mean_delta_inactive: f64,
    pub max_abs_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub alpha: f64,
    pub layer_start: usize,
    pub layer_end: usize,
    pub enabled: bool,
    pub baseline_tokens: Vec<u32>,
    pub intervened_tokens: Vec<u32>,
    pub first_divergence: Option<usize>,
    pub layers: Vec<LayerDelta>,
    pub summary: CompareSummary,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Baseline (no intervention) versus the experiment's intervention on the same inputs.
pub fn compare(weights: &ModelWeights, exp: &ExperimentSpec) -> Result<CompareReport> {
    let spec = exp.intervention;
    let base = run_decode(weights, exp, &make_noop())?;
    let hooked = run_decode(weights, exp, &spec)?;
    let layers: Vec<LayerDelta> = base
        .summaries
        .iter()
        .zip(&hooked.summaries)
        .map(|(b, h)| {
            let (ba, ha) = (b.masses.get(Region::Audio), h.masses.get(Region::Audio));
            LayerDelta {
                layer: b.layer,
                active: spec.is_active(b.layer),
                baseline_audio_mass: ba,
                intervened_audio_mass: ha,
                delta: ha - ba,
            }
        })
        .collect();
    let summary = CompareSummary {
        n_active_layers: layers.iter().filter(|l| l.active).count(),
        mean_delta_active: mean(layers.iter().filter(|l| l.active).map(|l| l.delta)),
        mean_delta_inactive: mean(layers.iter().filter(|l| !l.active).map(|l| l.delta)),
        max_abs_delta: layers.iter().map(|l| l.delta.abs()).fold(0.0, f64::max),
    };
    Ok(CompareReport {
        alpha: spec.alpha,
        layer_start: spec.layer_start,
        layer_end: spec.layer_end,
        enabled: spec.enabled,
        first_divergence: first_divergence(&base.result.generated, &hooked.result.generated),
        baseline_tokens: base.result.generated,
        intervened_tokens: hooked.result.generated,
        layers,
        summary,
    })
}

fn join_tokens(tokens: &[u32]) -> String {
    tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

impl CompareReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "intervention: alpha={} layers=[{}, {}) enabled={}",
            self.alpha, self.layer_start, self.layer_end, self.enabled
        );
        let _ = writeln!(s, "baseline:   {}", join_tokens(&self.baseline_tokens));
        let _ = writeln!(s, "intervened: {}", join_tokens(&self.intervened_tokens));
        match self.first_divergence {
            Some(step) => {
                let _ = writeln!(s, "first divergence: step {step}");
            }
            None => {
                let _ = writeln!(s, "first divergence: none");
            }
        }
        let _ = writeln!(s, "layer  active  baseline_audio  intervened_audio  delta");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>5}  {:>6}  {:>14.6}  {:>16.6}  {:+.6e}",
                l.layer,
                if l.active { "yes" } else { "no" },
                l.baseline_audio_mass,
                l.intervened_audio_mass,
                l.delta
            );
        }
        let _ = writeln!(
            s,
            "mean delta (active layers): {:+.6e}\nmean delta (other layers): {:+.6e}\nmax |delta|: {:.6e}",
            self.summary.mean_delta_active, self.summary.mean_delta_inactive, self.summary.max_abs_delta
        );
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// One (alpha, layer range) configuration of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub alpha: f64,
    pub layers: (usize, usize),
}

/// The ablation grid: alpha in {0.05, 0.10, 0.15} on layers [10, 20), plus
/// alpha = 0.10 on [0, 10), [20, 28) and [0, 28). With the baseline row a
/// sweep over this grid has seven configurations.
pub fn default_grid() -> Vec<GridCell> {
    let mut cells: Vec<GridCell> = [0.05, 0.10, 0.15].iter().map(|&alpha| GridCell { alpha, layers: (10, 20) }).collect();
    for layers in [(0, 10), (20, 28), (0, 28)] {
        cells.push(GridCell { alpha: 0.10, layers });
    }
    cells
}

/// Cartesian product, alphas outermost.
pub fn product_grid(alphas: &[f64], ranges: &[(usize, usize)]) -> Vec<GridCell> {
    alphas.iter().flat_map(|&alpha| ranges.iter().map(move |&layers| GridCell { alpha, layers })).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `baseline` or `alpha=<a>,layers=<s>-<e>`.
    pub config: String,
    pub alpha: Option<f64>,
    pub layer_start: Option<usize>,
    pub layer_end: Option<usize>,
    pub tokens_hash: String,
    pub n_generated: usize,
    /// Mean audio mass over the row's layer range (all layers for the baseline).
    pub mean_audio_mass: f64,
    /// Baseline mean audio mass over the same layers.
    pub baseline_audio_mass: f64,
    pub divergence_step: Option<usize>,
}

pub const SWEEP_CSV_HEADER: &str =
    "config,alpha,layer_start,layer_end,tokens_hash,n_generated,mean_audio_mass,baseline_audio_mass,divergence_step";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub baseline_hash: String,
    pub rows: Vec<SweepRow>,
}

pub fn sweep(weights: &ModelWeights, exp: &ExperimentSpec, grid: &[GridCell]) -> Result<SweepReport> {
    let n_layers = weights.config.n_layers;
    let specs: Vec<InterventionSpec> = grid.iter().map(|c| InterventionSpec::new(c.alpha, c.layers.0, c.layers.1)).collect();
    for s in &specs {
        s.validate(n_layers)?;
    }
    let base = run_decode(weights, exp, &make_noop())?;
    let base_hash = token_hash(&base.result.generated);
    let cells: Vec<RunOutput> = specs.par_iter().map(|s| run_decode(weights, exp, s)).collect::<Result<_>>()?;

    let mut rows = vec![SweepRow {
        config: "baseline".into(),
        alpha: None,
        layer_start: None,
        layer_end: None,
        tokens_hash: base_hash.clone(),
        n_generated: base.result.generated.len(),
        mean_audio_mass: audio_mass(&base.summaries, 0..n_layers),
        baseline_audio_mass: audio_mass(&base.summaries, 0..n_layers),
        divergence_step: None,
    }];
    for (spec, out) in specs.iter().zip(cells) {
        let range = spec.layer_start..spec.layer_end;
        rows.push(SweepRow {
            config: format!("alpha={},layers={}-{}", spec.alpha, spec.layer_start, spec.layer_end),
            alpha: Some(spec.alpha),
            layer_start: Some(spec.layer_start),
            layer_end: Some(spec.layer_end),
            tokens_hash: token_hash(&out.result.generated),
            n_generated: out.result.generated.len(),
            mean_audio_mass: audio_mass(&out.summaries, range.clone()),
            baseline_audio_mass: audio_mass(&base.summaries, range),
            divergence_step: first_divergence(&base.result.generated, &out.result.generated),
        });
    }
    Ok(SweepReport { baseline_hash: base_hash, rows })
}

impl SweepReport {
    pub fn render_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Vec<SweepRow>, String> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| e.to_string())?.iter().collect::<Vec<_>>().join(",");
        if header != SWEEP_CSV_HEADER {
            return Err(format!("unexpected header {header:?}"));
        }
        r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>().map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep serializes");
        s.push('\n');
        s
    }
}

//! Attention-mass telemetry.
//!
//! At every decoding step the engine hands the recorder the post-softmax row
//! of the last query position for each (layer, head). Those rows are split
//! into modality regions and averaged per layer, uniformly over steps and heads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::engine::AttentionRecorder;
use crate::error::{Error, Result};
use crate::sequence::{Region, Segment};

/// Attention weights of the last query row for one (step, layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub step: usize,
    pub layer: usize,
    pub head: usize,
    /// One weight per key in context at that step.
    pub row: Vec<f64>,
}

/// Recorder that keeps every row it is given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionLog {
    step: usize,
    pub records: Vec<AttentionRecord>,
}

impl AttentionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records_for(&self, step: usize, layer: usize) -> impl Iterator<Item = &AttentionRecord> {
        self.records.iter().filter(move |r| r.step == step && r.layer == layer)
    }
}

impl AttentionRecorder for AttentionLog {
    fn begin_step(&mut self, step: usize) {
        self.step = step;
    }

    fn record(&mut self, layer: usize, head: usize, weights: &[f64]) {
        self.records.push(AttentionRecord { step: self.step, layer, head, row: weights.to_vec() });
    }
}

/// Attention mass per region, indexed by [`Region::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegionMasses(pub [f64; 4]);

impl RegionMasses {
    pub fn get(&self, region: Region) -> f64 {
        self.0[region.index()]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Region, f64)> + '_ {
        Region::ALL.into_iter().map(|r| (r, self.get(r)))
    }
}

/// Sums `row` over each region. Segments must cover `[0, current_length)`;
/// any part of them beyond `current_length` is ignored.
pub fn region_mass(row: &[f64], segments: &[Segment], current_length: usize) -> Result<RegionMasses> {
    if row.len() != current_length {
        return Err(Error::Shape {
            op: "region_mass",
            detail: format!("row has {} weights, context length is {current_length}", row.len()),
        });
    }
    let mut masses = [0.0; 4];
    let mut covered = 0;
    for seg in segments {
        if seg.start != covered {
            return Err(Error::Segmentation(format!(
                "segment {} starts at {}, expected {covered}",
                seg.region, seg.start
            )));
        }
        if seg.start >= current_length {
            break;
        }
        let end = (seg.end_inclusive + 1).min(current_length);
        masses[seg.region.index()] += row[seg.start..end].iter().sum::<f64>();
        covered = seg.end_inclusive + 1;
    }
    if covered < current_length {
        return Err(Error::Segmentation(format!(
            "segments cover {covered} positions, row has {current_length}"
        )));
    }
    Ok(RegionMasses(masses))
}

/// Mean region mass of one layer over all captured steps and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRegionSummary {
    pub layer: usize,
    pub masses: RegionMasses,
    /// Distinct decoding steps contributing to the mean.
    pub n_steps: usize,
}

/// Per-layer mean of [`region_mass`] over every record, sorted by layer.
pub fn aggregate(records: &[AttentionRecord], segments: &[Segment]) -> Result<Vec<LayerRegionSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("attention records"));
    }
    let n_layers = records.iter().map(|r| r.layer).max().unwrap_or(0) + 1;
    let mut sums = vec![[0.0f64; 4]; n_layers];
    let mut counts = vec![0usize; n_layers];
    let mut steps: Vec<Vec<usize>> = vec![Vec::new(); n_layers];
    for rec in records {
        let m = region_mass(&rec.row, segments, rec.row.len())?;
        for (acc, v) in sums[rec.layer].iter_mut().zip(m.0) {
            *acc += v;
        }
        counts[rec.layer] += 1;
        if let Err(pos) = steps[rec.layer].binary_search(&rec.step) {
            steps[rec.layer].insert(pos, rec.step);
        }
    }
    Ok((0..n_layers)
        .filter(|&l| counts[l] > 0)
        .map(|l| {
            let n = counts[l] as f64;
            LayerRegionSummary {
                layer: l,
                masses: RegionMasses(sums[l].map(|s| s / n)),
                n_steps: steps[l].len(),
            }
        })
        .collect())
}

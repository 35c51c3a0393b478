//! Multiplicative boost of target-region attention scores for the last query.
//!
//! For a query row `i` in a sequence of length `L`, with target span
//! `[a_s, a_e]` (inclusive on both ends):
//!
//! ```text
//! A'[h, i, j] = (1 + alpha) * A[h, i, j]   if i == L - 1 and a_s <= j <= a_e
//! A'[h, i, j] = A[h, i, j]                 otherwise
//! ```
//!
//! applied to raw, post-mask, pre-softmax scores of every head in layers
//! `layer_start <= l < layer_end`. Scores are scaled as signed values, so a
//! negative raw score becomes more negative and loses weight after softmax.

use alloc::format;
use alloc::vec::Vec;

use crate::engine::{ScoreContext, ScoreHook};
use crate::error::{Error, Result};
use crate::sequence::{Region, Span, TokenSequence};
use crate::tensor::Matrix;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAYER_START: usize = 10;
pub const DEFAULT_LAYER_END: usize = 20;

/// Free parameters of the intervention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionSpec {
    /// Enhancement strength; scores are multiplied by `1 + alpha`.
    pub alpha: f64,
    /// First intervened layer, inclusive.
    pub layer_start: usize,
    /// End of the intervened band, exclusive.
    pub layer_end: usize,
    pub target_region: Region,
    pub enabled: bool,
}

impl Default for InterventionSpec {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            layer_start: DEFAULT_LAYER_START,
            layer_end: DEFAULT_LAYER_END,
            target_region: Region::Audio,
            enabled: true,
        }
    }
}

impl InterventionSpec {
    pub fn new(alpha: f64, layer_start: usize, layer_end: usize) -> Self {
        Self { alpha, layer_start, layer_end, ..Self::default() }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.layer_start >= self.layer_end || self.layer_end > n_layers {
            return Err(Error::Span(format!(
                "layer range [{}, {}) invalid for {n_layers} layers",
                self.layer_start, self.layer_end
            )));
        }
        Ok(())
    }

    pub fn is_active(&self, layer: usize) -> bool {
        self.enabled && self.layer_start <= layer && layer < self.layer_end
    }

    pub fn factor(&self) -> f64 {
        1.0 + self.alpha
    }
}

/// Disabled spec: the engine behaves exactly as with no hook installed.
pub fn make_noop() -> InterventionSpec {
    InterventionSpec { enabled: false, ..InterventionSpec::default() }
}

fn check_span(span: Span, seq_len: usize) -> Result<()> {
    if span.start > span.end_inclusive || span.end_inclusive >= seq_len {
        return Err(Error::Span(format!(
            "target span [{}, {}] outside sequence of length {seq_len}",
            span.start, span.end_inclusive
        )));
    }
    Ok(())
}

/// Applies the transform to one raw score row in place.
///
/// `query_pos` is the absolute position of the row and `seq_len` the number
/// of keys (the current sequence length). Returns whether the row was targeted.
pub fn mata_transform_in_place(
    row: &mut [f64],
    spec: &InterventionSpec,
    layer: usize,
    query_pos: usize,
    seq_len: usize,
    span: Span,
) -> Result<bool> {
    if row.len() != seq_len {
        return Err(Error::Shape {
            op: "mata_transform",
            detail: format!("row has {} scores, sequence length is {seq_len}", row.len()),
        });
    }
    check_span(span, seq_len)?;
    if !spec.is_active(layer) || query_pos + 1 != seq_len {
        return Ok(false);
    }
    let factor = spec.factor();
    for s in &mut row[span.start..=span.end_inclusive] {
        *s *= factor;
    }
    Ok(true)
}

pub fn mata_transform(
    row: &[f64],
    spec: &InterventionSpec,
    layer: usize,
    query_pos: usize,
    seq_len: usize,
    span: Span,
) -> Result<Vec<f64>> {
    let mut out = row.to_vec();
    mata_transform_in_place(&mut out, spec, layer, query_pos, seq_len, span)?;
    Ok(out)
}

/// Engine hook applying an [`InterventionSpec`] to a fixed target span.
#[derive(Debug, Clone, Copy)]
pub struct MataHook {
    spec: InterventionSpec,
    span: Option<Span>,
}

impl MataHook {
    pub fn new(spec: InterventionSpec, span: Option<Span>) -> Self {
        Self { spec, span }
    }

    /// Resolves the target region of `spec` within `seq`.
    pub fn for_sequence(spec: InterventionSpec, seq: &TokenSequence) -> Self {
        Self::new(spec, seq.region_span(spec.target_region))
    }

    pub fn spec(&self) -> &InterventionSpec {
        &self.spec
    }
}

impl ScoreHook for MataHook {
    fn on_scores(&mut self, ctx: &ScoreContext, scores: &mut Matrix) -> Result<()> {
        if !self.spec.is_active(ctx.layer) {
            return Ok(());
        }
        let span = self.span.ok_or_else(|| {
            Error::Span(format!("intervention targets region {} but the sequence has none", self.spec.target_region))
        })?;
        let seq_len = scores.cols();
        for r in 0..scores.rows() {
            mata_transform_in_place(scores.row_mut(r), &self.spec, ctx.layer, ctx.query_offset + r, seq_len, span)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const SPAN: Span = Span { start: 1, end_inclusive: 2 };

    #[test]
    fn defaults() {
        let s = InterventionSpec::default();
        assert_eq!((s.alpha, s.layer_start, s.layer_end), (0.1, 10, 20));
        assert_eq!(s.target_region, Region::Audio);
        assert!(s.enabled);
    }

    #[test]
    fn layer_gating_is_half_open() {
        let s = InterventionSpec::default();
        assert!(!s.is_active(9));
        assert!(s.is_active(10));
        assert!(s.is_active(19));
        assert!(!s.is_active(20));
        let off = make_noop();
        assert!((0..28).all(|l| !off.is_active(l)));
    }

    #[test]
    fn transform_scales_span_of_last_row() {
        let spec = InterventionSpec::new(0.1, 0, 1);
        let out = mata_transform(&[2.0, -1.0, 0.5, 3.0], &spec, 0, 3, 4, SPAN).unwrap();
        assert_eq!(out, vec![2.0, -1.1, 0.5 * 1.1, 3.0]);
        assert!((out[1] - -1.1).abs() < 1e-15 && (out[2] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_and_other_rows_untouched() {
        let row = [2.0, -1.0, 0.5, 3.0];
        let zero = InterventionSpec::new(0.0, 0, 1);
        let out = mata_transform(&row, &zero, 0, 3, 4, SPAN).unwrap();
        assert!(out.iter().zip(&row).all(|(a, b)| a.to_bits() == b.to_bits()));

        let spec = InterventionSpec::new(0.1, 0, 1);
        assert_eq!(mata_transform(&row, &spec, 0, 2, 4, SPAN).unwrap(), row);
        // inactive layer
        assert_eq!(mata_transform(&row, &spec, 1, 3, 4, SPAN).unwrap(), row);
    }

    #[test]
    fn mask_sentinel_stays_masked() {
        let spec = InterventionSpec::new(0.5, 0, 1);
        let out = mata_transform(&[1.0, f64::NEG_INFINITY], &spec, 0, 1, 2, Span { start: 0, end_inclusive: 1 }).unwrap();
        assert_eq!(out, vec![1.5, f64::NEG_INFINITY]);
    }

    #[test]
    fn span_out_of_bounds_is_an_error() {
        let spec = InterventionSpec::new(0.1, 0, 1);
        let bad = Span { start: 2, end_inclusive: 4 };
        assert!(matches!(mata_transform(&[0.0; 4], &spec, 0, 3, 4, bad), Err(Error::Span(_))));
        let inverted = Span { start: 2, end_inclusive: 1 };
        assert!(matches!(mata_transform(&[0.0; 4], &spec, 0, 3, 4, inverted), Err(Error::Span(_))));
        // bounds are checked even when the row is not targeted
        assert!(matches!(mata_transform(&[0.0; 4], &spec, 5, 3, 4, bad), Err(Error::Span(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(InterventionSpec::default().validate(28).is_ok());
        assert!(InterventionSpec::new(0.1, 20, 29).validate(28).is_err());
        assert!(InterventionSpec::new(0.1, 10, 10).validate(28).is_err());
        assert!(InterventionSpec::new(-0.1, 0, 28).validate(28).is_err());
        assert!(InterventionSpec::new(f64::NAN, 0, 28).validate(28).is_err());
    }
}

//! Telemetry export.
//!
//! CSV header (exact): `layer,region,mean_mass,n_steps`, one row per
//! (layer, region) with regions in the order system, audio, instruction,
//! generated. The JSON file is an array of objects with the same four keys.
//! Floats are written in shortest round-trip form.

use std::fs;
use std::path::Path;

use mata_core::{LayerRegionSummary, Region, RegionMasses};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CSV_HEADER: &str = "layer,region,mean_mass,n_steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub layer: usize,
    pub region: String,
    pub mean_mass: f64,
    pub n_steps: usize,
}

pub fn to_rows(summaries: &[LayerRegionSummary]) -> Vec<SummaryRow> {
    summaries
        .iter()
        .flat_map(|s| {
            s.masses.iter().map(move |(region, mass)| SummaryRow {
                layer: s.layer,
                region: region.name().to_string(),
                mean_mass: mass,
                n_steps: s.n_steps,
            })
        })
        .collect()
}

/// Regroups rows into per-layer summaries.
pub fn from_rows(rows: &[SummaryRow]) -> std::result::Result<Vec<LayerRegionSummary>, String> {
    let mut out: Vec<LayerRegionSummary> = Vec::new();
    for row in rows {
        let region: Region = row.region.parse().map_err(|e: mata_core::Error| e.to_string())?;
        match out.last_mut() {
            Some(s) if s.layer == row.layer => s.masses.0[region.index()] = row.mean_mass,
            _ => {
                let mut masses = RegionMasses::default();
                masses.0[region.index()] = row.mean_mass;
                out.push(LayerRegionSummary { layer: row.layer, masses, n_steps: row.n_steps });
            }
        }
    }
    Ok(out)
}

pub fn render_csv(summaries: &[LayerRegionSummary]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for row in to_rows(summaries) {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn render_json(summaries: &[LayerRegionSummary]) -> String {
    let mut s = serde_json::to_string_pretty(&to_rows(summaries)).expect("rows serialize");
    s.push('\n');
    s
}

pub fn parse_csv(text: &str) -> std::result::Result<Vec<LayerRegionSummary>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| e.to_string())?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>().map_err(|e| e.to_string())?;
    from_rows(&rows)
}

pub fn parse_json(text: &str) -> std::result::Result<Vec<LayerRegionSummary>, String> {
    let rows: Vec<SummaryRow> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    from_rows(&rows)
}

pub fn export(summaries: &[LayerRegionSummary], format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => render_csv(summaries),
        Format::Json => render_json(summaries),
    };
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

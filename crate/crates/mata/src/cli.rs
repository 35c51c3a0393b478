use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mata_core::gen_synthetic_weights;

use crate::error::{CliError, Result};
use crate::experiment::{load_config, ExperimentSpec};
use crate::export::{export, Format};
use crate::runs::{self, GridCell};
use crate::weights_file::save_weights;

/// Overrides the default telemetry directory.
pub const TELEMETRY_DIR_ENV: &str = "MATA_TELEMETRY_DIR";
pub const DEFAULT_TELEMETRY_DIR: &str = "telemetry";

#[derive(Debug, Parser)]
#[command(name = "mata", version, about = "Toy decoder inference with last-token audio attention boosting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic weights and write a weight file.
    GenModel {
        /// TOML model config; defaults to the 28-layer desk-scale config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy decode; prints generated ids and writes attention telemetry.
    Decode {
        #[arg(long)]
        experiment: PathBuf,
        /// Directory for attention_summary.{csv,json}.
        #[arg(long)]
        telemetry_dir: Option<PathBuf>,
    },
    /// Baseline versus intervened decode on identical inputs.
    Compare {
        #[arg(long)]
        experiment: PathBuf,
        /// JSON report path; defaults to <telemetry dir>/compare.json.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Decode over a grid of (alpha, layer range) configurations.
    Sweep {
        #[arg(long)]
        experiment: PathBuf,
        /// Comma-separated alphas, e.g. 0.05,0.1,0.15.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        /// Comma-separated half-open layer ranges, e.g. 0-10,10-20.
        #[arg(long, value_delimiter = ',', value_parser = parse_range)]
        ranges: Vec<(usize, usize)>,
        /// Grid CSV path; a JSON copy is written next to it. Defaults to <telemetry dir>/sweep.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("expected START-END, got {s:?}"))?;
    let start = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
    let end = b.trim().parse().map_err(|_| format!("bad range end in {s:?}"))?;
    Ok((start, end))
}

fn telemetry_dir(arg: Option<&Path>) -> PathBuf {
    arg.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(TELEMETRY_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_TELEMETRY_DIR))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            return emit(out, &e.to_string());
        }
        Err(e) => {
            let msg = e.to_string();
            return Err(CliError::Usage(msg.strip_prefix("error: ").unwrap_or(&msg).trim_end().to_string()));
        }
    };
    match cli.command {
        Command::GenModel { config, seed, out: path } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => mata_core::ModelConfig::default(),
            };
            let weights = gen_synthetic_weights(&cfg, seed)?;
            ensure_parent(&path)?;
            save_weights(&weights, &path)?;
            emit(out, &format!("wrote {} ({} parameters)\n", path.display(), cfg.n_params()))
        }
        Command::Decode { experiment, telemetry_dir: dir } => {
            let exp = ExperimentSpec::load(&experiment)?;
            let weights = exp.weights()?;
            let run = runs::run_decode(&weights, &exp, &exp.intervention)?;
            let dir = telemetry_dir(dir.as_deref());
            ensure_dir(&dir)?;
            export(&run.summaries, Format::Csv, &dir.join("attention_summary.csv"))?;
            export(&run.summaries, Format::Json, &dir.join("attention_summary.json"))?;
            let ids: Vec<String> = run.result.generated.iter().map(u32::to_string).collect();
            emit(out, &format!("{}\n", ids.join(" ")))
        }
        Command::Compare { experiment, json } => {
            let exp = ExperimentSpec::load(&experiment)?;
            let weights = exp.weights()?;
            let report = runs::compare(&weights, &exp)?;
            let path = json.unwrap_or_else(|| telemetry_dir(None).join("compare.json"));
            write_file(&path, &report.to_json())?;
            emit(out, &report.render_text())
        }
        Command::Sweep { experiment, alphas, ranges, out: csv_path } => {
            let exp = ExperimentSpec::load(&experiment)?;
            let weights = exp.weights()?;
            let grid: Vec<GridCell> = match (alphas.is_empty(), ranges.is_empty()) {
                (true, true) => runs::default_grid(),
                (false, true) => runs::product_grid(&alphas, &[(10, 20)]),
                (true, false) => runs::product_grid(&[0.10], &ranges),
                (false, false) => runs::product_grid(&alphas, &ranges),
            };
            let report = runs::sweep(&weights, &exp, &grid)?;
            let csv_path = csv_path.unwrap_or_else(|| telemetry_dir(None).join("sweep.csv"));
            write_file(&csv_path, &report.render_csv())?;
            write_file(&csv_path.with_extension("json"), &report.to_json())?;
            let mut text = String::new();
            for row in &report.rows {
                let div = row.divergence_step.map_or_else(|| "-".to_string(), |d| d.to_string());
                text.push_str(&format!(
                    "{:<28} hash={} audio_mass={:.6} diverges_at={}\n",
                    row.config, row.tokens_hash, row.mean_audio_mass, div
                ));
            }
            emit(out, &text)
        }
    }
}

//! Human-readable TOML inputs: model config files and experiment files.
//!
//! A model config file lists any subset of the [`ModelConfig`] fields;
//! missing fields take the default desk-scale values:
//!
//! ```toml
//! n_layers = 28
//! n_heads = 4
//! d_model = 64
//! # d_head defaults to d_model / n_heads
//! d_ff = 128
//! vocab_size = 512
//! max_seq_len = 512
//! norm_eps = 1e-6
//! ```
//!
//! An experiment file names the model (a weight file, or a seed for inline
//! generation), the prompt regions and the intervention:
//!
//! ```toml
//! model = "model.bin"        # relative to the experiment file
//! # seed = 7                 # instead of `model`: generate weights inline
//! # [config]                 # optional inline config when generating
//! max_new_tokens = 16
//! stop_token = 2             # optional
//!
//! [prompt]                   # regions are concatenated in this order
//! system = [1, 2, 3]
//! audio = [10, 11, 12, 13]
//! instruction = [20, 21]
//!
//! [intervention]             # every field optional
//! alpha = 0.1
//! layer_start = 10
//! layer_end = 20
//! enabled = true
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use mata_core::intervention::{DEFAULT_ALPHA, DEFAULT_LAYER_END, DEFAULT_LAYER_START};
use mata_core::{gen_synthetic_weights, InterventionSpec, ModelConfig, ModelWeights, Region, TokenSequence};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::weights_file::load_weights;

pub const DEFAULT_MAX_NEW_TOKENS: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_head: Option<usize>,
    pub d_ff: Option<usize>,
    pub vocab_size: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub norm_eps: Option<f64>,
}

impl ConfigFile {
    pub fn resolve(&self) -> ModelConfig {
        let d = ModelConfig::default();
        let n_heads = self.n_heads.unwrap_or(d.n_heads);
        let d_model = self.d_model.unwrap_or(d.d_model);
        ModelConfig {
            n_layers: self.n_layers.unwrap_or(d.n_layers),
            n_heads,
            d_model,
            d_head: self.d_head.unwrap_or(d_model.checked_div(n_heads).unwrap_or(0)),
            d_ff: self.d_ff.unwrap_or(d.d_ff),
            vocab_size: self.vocab_size.unwrap_or(d.vocab_size),
            max_seq_len: self.max_seq_len.unwrap_or(d.max_seq_len),
            norm_eps: self.norm_eps.unwrap_or(d.norm_eps),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Reads a config file; the resulting config is validated.
pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let file: ConfigFile = parse_toml(&read_text(path)?, path)?;
    let config = file.resolve();
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptFile {
    #[serde(default)]
    pub system: Vec<u32>,
    #[serde(default)]
    pub audio: Vec<u32>,
    #[serde(default)]
    pub instruction: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionFile {
    pub alpha: Option<f64>,
    pub layer_start: Option<usize>,
    pub layer_end: Option<usize>,
    pub enabled: Option<bool>,
}

impl InterventionFile {
    pub fn resolve(&self) -> InterventionSpec {
        InterventionSpec {
            alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
            layer_start: self.layer_start.unwrap_or(DEFAULT_LAYER_START),
            layer_end: self.layer_end.unwrap_or(DEFAULT_LAYER_END),
            target_region: Region::Audio,
            enabled: self.enabled.unwrap_or(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub config: Option<ConfigFile>,
    pub max_new_tokens: Option<usize>,
    pub stop_token: Option<u32>,
    pub prompt: PromptFile,
    #[serde(default)]
    pub intervention: InterventionFile,
}

/// Where the experiment's weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    File(PathBuf),
    Inline { config: ModelConfig, seed: u64 },
}

/// A parsed experiment with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: ModelSource,
    pub prompt: TokenSequence,
    pub intervention: InterventionSpec,
    pub max_new_tokens: usize,
    pub stop_token: Option<u32>,
}

impl ExperimentSpec {
    /// Parses experiment text; relative model paths resolve against `base_dir`.
    pub fn parse(text: &str, path: &Path, base_dir: &Path) -> Result<Self> {
        let file: ExperimentFile = parse_toml(text, path)?;
        let parse_err = |message: String| CliError::Parse { path: path.to_path_buf(), message };
        let model = match (&file.model, file.seed) {
            (Some(p), None) => {
                if file.config.is_some() {
                    return Err(parse_err("field `config` only applies when generating from `seed`".into()));
                }
                ModelSource::File(base_dir.join(p))
            }
            (None, Some(seed)) => ModelSource::Inline {
                config: file.config.clone().unwrap_or_default().resolve(),
                seed,
            },
            (Some(_), Some(_)) => return Err(parse_err("set either `model` or `seed`, not both".into())),
            (None, None) => return Err(parse_err("missing field `model` (or `seed` for inline generation)".into())),
        };
        let max_new_tokens = file.max_new_tokens.unwrap_or(DEFAULT_MAX_NEW_TOKENS);
        if max_new_tokens == 0 {
            return Err(parse_err("field `max_new_tokens` must be >= 1".into()));
        }
        let p = &file.prompt;
        let prompt = TokenSequence::from_regions(&p.system, &p.audio, &p.instruction);
        if prompt.is_empty() {
            return Err(parse_err("field `prompt` has no tokens".into()));
        }
        Ok(Self {
            model,
            prompt,
            intervention: file.intervention.resolve(),
            max_new_tokens,
            stop_token: file.stop_token,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Loads or generates the weights and checks the prompt against them.
    pub fn weights(&self) -> Result<ModelWeights> {
        let weights = match &self.model {
            ModelSource::File(p) => load_weights(p)?,
            ModelSource::Inline { config, seed } => gen_synthetic_weights(config, *seed)?,
        };
        let vocab = weights.config.vocab_size;
        let bad = self.prompt.tokens().iter().chain(self.stop_token.as_ref()).find(|&&t| t as usize >= vocab);
        if let Some(&token) = bad {
            return Err(mata_core::Error::Token { token, vocab_size: vocab }.into());
        }
        if self.intervention.enabled {
            self.intervention.validate(weights.config.n_layers)?;
        }
        Ok(weights)
    }
}

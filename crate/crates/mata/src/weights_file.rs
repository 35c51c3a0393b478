//! Binary weight file.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `b"MATA"`                         |
//! | 4      | 4    | format version (`u32`, currently 1)     |
//! | 8      | 8    | `n_layers` (`u64`)                      |
//! | 16     | 8    | `n_heads`                               |
//! | 24     | 8    | `d_model`                               |
//! | 32     | 8    | `d_head`                                |
//! | 40     | 8    | `d_ff`                                  |
//! | 48     | 8    | `vocab_size`                            |
//! | 56     | 8    | `max_seq_len`                           |
//! | 64     | 8    | `norm_eps` (`f64`)                      |
//! | 72     | 8    | parameter count (`u64`)                 |
//! | 80     | 8·n  | parameters (`f64`), canonical order     |
//!
//! The canonical order is that of `ModelWeights::tensors`: `token_embedding`,
//! then per layer `attn_norm_gain, wq, wk, wv, wo, mlp_norm_gain, w_gate,
//! w_up, w_down`, then `final_norm_gain`, `lm_head`; row-major inside each
//! tensor.

use std::fs;
use std::path::Path;

use mata_core::{ModelConfig, ModelWeights};

use crate::error::{CliError, FormatError};

pub const MAGIC: &[u8; 4] = b"MATA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 80;

pub fn encode(weights: &ModelWeights) -> Vec<u8> {
    let c = &weights.config;
    let n_params = c.n_params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n_params);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.n_layers, c.n_heads, c.d_model, c.d_head, c.d_ff, c.vocab_size, c.max_seq_len] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.norm_eps.to_le_bytes());
    out.extend_from_slice(&(n_params as u64).to_le_bytes());
    for t in weights.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], FormatError> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| FormatError {
            offset: self.bytes.len(),
            message: format!("truncated while reading {what} (needs bytes {}..{end})", self.pos),
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }

    fn usize(&mut self, what: &str) -> Result<usize, FormatError> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| FormatError { offset: at, message: format!("{what} = {v} does not fit usize") })
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelWeights, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take("magic")?;
    if &magic != MAGIC {
        return Err(FormatError {
            offset: 0,
            message: format!("bad magic {:?}, expected \"MATA\"", String::from_utf8_lossy(&magic)),
        });
    }
    let version = u32::from_le_bytes(r.take("version")?);
    if version != VERSION {
        return Err(FormatError { offset: 4, message: format!("unsupported version {version}, expected {VERSION}") });
    }
    let config = ModelConfig {
        n_layers: r.usize("n_layers")?,
        n_heads: r.usize("n_heads")?,
        d_model: r.usize("d_model")?,
        d_head: r.usize("d_head")?,
        d_ff: r.usize("d_ff")?,
        vocab_size: r.usize("vocab_size")?,
        max_seq_len: r.usize("max_seq_len")?,
        norm_eps: f64::from_le_bytes(r.take("norm_eps")?),
    };
    config.validate().map_err(|e| FormatError { offset: 8, message: e.to_string() })?;
    let n_params = r.usize("parameter count")?;
    if n_params != config.n_params() {
        return Err(FormatError {
            offset: 72,
            message: format!("parameter count {n_params} does not match config ({})", config.n_params()),
        });
    }
    let expected_len = HEADER_LEN + 8 * n_params;
    if bytes.len() < expected_len {
        return Err(FormatError {
            offset: bytes.len(),
            message: format!("truncated payload: file has {} bytes, expected {expected_len}", bytes.len()),
        });
    }
    if bytes.len() > expected_len {
        return Err(FormatError {
            offset: expected_len,
            message: format!("{} trailing bytes after payload", bytes.len() - expected_len),
        });
    }
    let params: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(i) = params.iter().position(|x| !x.is_finite()) {
        return Err(FormatError { offset: HEADER_LEN + 8 * i, message: "non-finite parameter".into() });
    }
    ModelWeights::from_flat(config, &params).map_err(|e| FormatError { offset: HEADER_LEN, message: e.to_string() })
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<(), CliError> {
    fs::write(path, encode(weights)).map_err(|e| CliError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|source| CliError::Format { path: path.to_path_buf(), source })
}

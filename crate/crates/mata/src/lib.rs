//! Weight files, experiment files, telemetry export and the `mata`
//! command-line driver built on [`mata_core`].
//!
//! Exit codes: 0 on success, 1 for usage, parse, IO and file-format
//! errors, 2 for engine and numeric errors.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod export;
pub mod runs;
pub mod weights_file;

pub use error::{CliError, FormatError};

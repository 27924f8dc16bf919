//! Option defaults read from a TOML file.
//!
//! Keys mirror the long flag names with `_` for `-`. Any key may be left
//! out; flags given on the command line win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::{Absent, Mode};

/// Bad invocation that clap cannot detect on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub chains: Option<PathBuf>,
    pub d: Option<usize>,
    pub heads: Option<usize>,
    pub decoder_heads: Option<usize>,
    pub layers: Option<usize>,
    pub context: Option<usize>,
    pub dropout: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub clip_norm: Option<f64>,
    pub ratio: Option<f64>,
    pub eval_every: Option<usize>,
    pub max_len: Option<usize>,
    pub no_chains: Option<bool>,
    pub cases_per_charge: Option<usize>,
    pub charges: Option<Vec<String>>,
    pub distractors: Option<usize>,
    pub mode: Option<Mode>,
    pub top_k: Option<usize>,
    pub absent: Option<Absent>,
    pub bleu_smoothing: Option<bool>,
    pub bleu_order: Option<usize>,
    pub eps: Option<f64>,
    pub llm_endpoint: Option<String>,
    /// Name of the environment variable holding a bearer token.
    pub llm_api_key_env: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))
            .map_err(Into::into)
    }
}

pub mod diagnose;
pub mod eval;
pub mod report;
pub mod synth;
pub mod train;
pub mod whiten;

use std::path::Path;

use anyhow::{Context, Result};
use whitenseq::data::{cold_start_split, leave_one_out, load_embeddings, load_sequences, InteractionDataset};
use whitenseq::Matrix;

use crate::config::Settings;
use crate::UsageError;

/// Name of the resolved-config echo inside a run directory.
pub const CONFIG_ECHO: &str = "config.txt";

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn echo_config(dir: &Path, settings: &Settings) -> Result<()> {
    write(&dir.join(CONFIG_ECHO), &settings.to_text())
}

pub struct LoadedData {
    pub dataset: InteractionDataset,
    /// Text features of the surviving items, one column per dense index.
    pub text: Matrix,
}

/// Loads embeddings and sequences, filters them and applies the warm or cold split.
pub fn load_dataset(s: &Settings) -> Result<LoadedData> {
    let embeddings = load_embeddings(s.raw("embeddings")?)?;
    let seqs = load_sequences(s.raw("sequences")?, &embeddings.tokens, s.get("min_interactions")?)?;
    let dataset = match s.raw("setting")? {
        "warm" => leave_one_out(&seqs)?,
        "cold" => cold_start_split(&seqs, s.get("cold_fraction")?, s.get("seed")?)?,
        other => return Err(UsageError(format!("unknown setting {other:?} (expected warm or cold)")).into()),
    };
    let text = embeddings.matrix.select_columns(&seqs.source_index);
    Ok(LoadedData { dataset, text })
}

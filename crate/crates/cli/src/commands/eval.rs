use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use whitenseq::data::Split;
use whitenseq::eval::{evaluate, evaluate_popularity, representation_uniformity, THREADS_ENV};
use whitenseq::model::load_checkpoint;

use super::train::{self, CHECKPOINT_FILE};
use super::{create_dir, load_dataset, write, CONFIG_ECHO};
use crate::config::{parse_ks, KeySpec, Settings};
use crate::{Common, UsageError};

pub const TIMING_FILE: &str = "timing.txt";
pub const EVAL_CONFIG_FILE: &str = "eval_config.txt";

const KEYS: &[KeySpec] = &[
    ("run_dir", None),
    ("checkpoint", Some("")),
    ("split", Some("test")),
    ("k", Some("5,10,20")),
    ("out_dir", Some("")),
    ("baseline", Some("")),
    ("uniformity", Some("true")),
];

/// `eval_<split>.txt`.
pub fn report_file(split: Split) -> String {
    format!("eval_{split}.txt")
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory written by `train`; its config locates the dataset.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Defaults to the run's checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// validation or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated cutoffs, e.g. 5,10,20.
    #[arg(long)]
    pub k: Option<String>,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Evaluate a baseline instead of the checkpoint (`popularity`).
    #[arg(long)]
    pub baseline: Option<String>,
}

pub fn run(a: EvalArgs) -> Result<()> {
    let mut s = Settings::resolve("eval", KEYS, a.common.config.as_deref(), &a.common.set)?;
    s.set_opt("run_dir", a.run_dir.map(|p| p.display().to_string()))?;
    s.set_opt("checkpoint", a.checkpoint.map(|p| p.display().to_string()))?;
    s.set_opt("split", a.split)?;
    s.set_opt("k", a.k)?;
    s.set_opt("out_dir", a.out_dir.map(|p| p.display().to_string()))?;
    s.set_opt("baseline", a.baseline)?;
    s.check_required()?;

    let run_dir = PathBuf::from(s.raw("run_dir")?);
    let split: Split = s.get("split")?;
    let ks = parse_ks(s.raw("k")?)?;
    let out = s.optional("out_dir").map_or_else(|| run_dir.clone(), PathBuf::from);
    let run_config = Settings::resolve("train", train::KEYS, Some(&run_dir.join(CONFIG_ECHO)), &[])?;
    let data = load_dataset(&run_config)?;

    let start = Instant::now();
    let report = match s.optional("baseline") {
        Some("popularity") => evaluate_popularity(&data.dataset, split, &ks)?,
        Some(other) => return Err(UsageError(format!("unknown baseline {other:?} (expected popularity)")).into()),
        None => {
            let ckpt = s
                .optional("checkpoint")
                .map_or_else(|| run_dir.join(CHECKPOINT_FILE), PathBuf::from);
            let params = load_checkpoint(&ckpt)?;
            if params.dims.item_count != data.dataset.item_count {
                bail!(
                    "{} has {} items but the run's dataset has {}",
                    ckpt.display(),
                    params.dims.item_count,
                    data.dataset.item_count
                );
            }
            let mut report = evaluate(&params, &data.dataset, split, &ks)?;
            if s.get::<bool>("uniformity")? {
                report.uniformity = Some(representation_uniformity(&params, &data.dataset, split)?);
            }
            report
        }
    };
    let seconds = start.elapsed().as_secs_f64();

    create_dir(&out)?;
    write(&out.join(EVAL_CONFIG_FILE), &s.to_text())?;
    write(&out.join(report_file(split)), &report.to_text())?;
    let threads = std::env::var(THREADS_ENV).unwrap_or_else(|_| "1".into());
    write(
        &out.join(TIMING_FILE),
        &format!(
            "seconds = {seconds}\nranking_seconds = {}\nthreads = {threads}\n",
            report.seconds
        ),
    )?;
    print!("{}", report.to_text());
    Ok(())
}

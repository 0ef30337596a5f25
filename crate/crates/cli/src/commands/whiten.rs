use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use whitenseq::data::{load_embeddings, EmbeddingFile};
use whitenseq::diagnostics::format_key_values;
use whitenseq::whitening::{fit, verify, WhiteningMethod};

use super::write;
use crate::config::{KeySpec, Settings};
use crate::Common;

/// Tolerance reported alongside the measured deviations.
pub const VERIFY_TOLERANCE: f64 = 1e-8;

const KEYS: &[KeySpec] = &[
    ("embeddings", None),
    ("out", None),
    ("method", Some("zca")),
    ("groups", Some("1")),
    ("epsilon", Some("1e-5")),
];

#[derive(Args, Debug)]
pub struct WhitenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// zca, pca, cd or bn.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output embedding file; `<out>.stats.txt` and `<out>.config.txt` are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

pub fn run(a: WhitenArgs) -> Result<()> {
    let mut s = Settings::resolve("whiten", KEYS, a.common.config.as_deref(), &a.common.set)?;
    s.set_opt("embeddings", a.embeddings.map(|p| p.display().to_string()))?;
    s.set_opt("out", a.out.map(|p| p.display().to_string()))?;
    s.set_opt("method", a.method)?;
    s.set_opt("groups", a.groups)?;
    s.set_opt("epsilon", a.epsilon)?;
    s.check_required()?;
    let method: WhiteningMethod = s.get("method")?;
    let groups: usize = s.get("groups")?;
    let epsilon: f64 = s.get("epsilon")?;
    let out = PathBuf::from(s.raw("out")?);

    let file = load_embeddings(s.raw("embeddings")?)?;
    let transform = fit(&file.matrix, method, groups, epsilon)?;
    let z = transform.apply(&file.matrix)?;
    let report = verify(&transform, &z, VERIFY_TOLERANCE);

    let mut pairs = vec![
        ("method", method.to_string()),
        ("groups", groups.to_string()),
        ("epsilon", epsilon.to_string()),
        ("items", file.item_count().to_string()),
        ("dim", file.dim().to_string()),
    ];
    let per_group: Vec<(String, String)> = report
        .group_deviation
        .iter()
        .enumerate()
        .map(|(g, d)| (format!("group_{g}_deviation"), format!("{d:e}")))
        .collect();
    pairs.extend(per_group.iter().map(|(k, v)| (k.as_str(), v.clone())));
    pairs.push(("max_deviation", format!("{:e}", report.max_deviation())));
    pairs.push(("max_cross_group", format!("{:e}", report.max_cross_group())));
    pairs.push(("tolerance", format!("{VERIFY_TOLERANCE:e}")));
    pairs.push(("passed", report.passed.to_string()));

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::create_dir(parent)?;
    }
    let whitened = EmbeddingFile {
        tokens: file.tokens,
        matrix: z.matrix,
    };
    write(&out, &whitened.to_text())?;
    write(&sidecar(&out, ".stats.txt"), &format_key_values(&pairs))?;
    write(&sidecar(&out, ".config.txt"), &s.to_text())?;
    println!(
        "{method} with {groups} group(s): max deviation {:.3e}; wrote {}",
        report.max_deviation(),
        out.display()
    );
    Ok(())
}

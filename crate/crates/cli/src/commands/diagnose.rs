use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use whitenseq::data::load_embeddings;
use whitenseq::diagnostics::{
    cdf_to_csv, condition_number, cosine_cdf, default_cdf_grid, format_key_values, mean_pairwise_cosine,
    singular_spectrum,
};

use super::{create_dir, echo_config, write};
use crate::config::{KeySpec, Settings};
use crate::svg::{line_chart, Series};
use crate::{Common, UsageError};

pub const REPORT_FILE: &str = "diagnostics.txt";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const CDF_FILE: &str = "cdf.csv";

const KEYS: &[KeySpec] = &[
    ("embeddings", None),
    ("out_dir", None),
    ("cdf_points", Some("201")),
    ("svg", Some("false")),
];

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Embedding file to measure.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also render spectrum and CDF plots.
    #[arg(long)]
    pub svg: bool,
}

pub fn run(a: DiagnoseArgs) -> Result<()> {
    let mut s = Settings::resolve("diagnose", KEYS, a.common.config.as_deref(), &a.common.set)?;
    s.set_opt("embeddings", a.embeddings.map(|p| p.display().to_string()))?;
    s.set_opt("out_dir", a.out_dir.map(|p| p.display().to_string()))?;
    if a.svg {
        s.set("svg", "true".into())?;
    }
    s.check_required()?;
    let points: usize = s.get("cdf_points")?;
    if points < 2 {
        return Err(UsageError("cdf_points must be at least 2".into()).into());
    }
    let out = PathBuf::from(s.raw("out_dir")?);

    let file = load_embeddings(s.raw("embeddings")?)?;
    let x = &file.matrix;
    let mean_cosine = mean_pairwise_cosine(x)?;
    let spectrum = singular_spectrum(x)?;
    let cdf = cosine_cdf(x, &default_cdf_grid(points))?;

    create_dir(&out)?;
    echo_config(&out, &s)?;
    let mut pairs = vec![
        ("items", file.item_count().to_string()),
        ("dim", file.dim().to_string()),
        ("mean_cosine", mean_cosine.to_string()),
    ];
    match condition_number(x) {
        Ok(c) => pairs.extend(c.key_values()),
        Err(e) => pairs.push(("condition_number", format!("unavailable ({e})"))),
    }
    write(&out.join(REPORT_FILE), &format_key_values(&pairs))?;
    write(&out.join(SPECTRUM_FILE), &spectrum.to_csv())?;
    write(&out.join(CDF_FILE), &cdf_to_csv(&cdf))?;
    if s.get::<bool>("svg")? {
        let sv = &spectrum.normalized_singular_values;
        let points = sv.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect();
        let chart = line_chart(
            "Normalized singular values",
            "index",
            "singular value / largest",
            &[Series {
                label: "embeddings",
                points,
            }],
        );
        write(&out.join("spectrum.svg"), &chart)?;
        let chart = line_chart(
            "Cosine similarity CDF",
            "cosine similarity",
            "fraction of pairs",
            &[Series {
                label: "embeddings",
                points: cdf,
            }],
        );
        write(&out.join("cdf.svg"), &chart)?;
    }
    println!("mean cosine {mean_cosine:.4}; wrote {}", out.display());
    Ok(())
}

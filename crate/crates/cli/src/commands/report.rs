use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use whitenseq::data::Split;

use super::eval::report_file;
use super::{read, write};
use crate::config::{parse_config, KeySpec, Settings};
use crate::Common;

/// Marker appended to the best value of each metric column.
pub const BEST_MARK: char = '*';

/// Optional per-run attachments, in column order.
const ATTACHMENTS: [&str; 4] = ["l_align", "l_uniform_user", "l_uniform_item", "condition_number"];

const KEYS: &[KeySpec] = &[("runs", None), ("split", Some("test")), ("out", None)];

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run directories holding evaluation reports.
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Output CSV; the resolved config goes to `<out>.config.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Run {
    name: String,
    values: BTreeMap<String, String>,
}

fn load_run(dir: &Path, split: Split) -> Result<Run> {
    let path = dir.join(report_file(split));
    let pairs = parse_config(&read(&path)?, &path)?;
    let name = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Run {
        name,
        values: pairs.into_iter().collect(),
    })
}

/// Cutoffs present in every run, ascending.
fn shared_ks(runs: &[Run]) -> Vec<usize> {
    let ks_of = |r: &Run| -> Vec<usize> {
        r.values
            .keys()
            .filter_map(|k| k.strip_prefix("recall@")?.parse().ok())
            .collect()
    };
    let mut ks = ks_of(&runs[0]);
    ks.retain(|k| runs.iter().all(|r| r.values.contains_key(&format!("recall@{k}"))));
    ks.sort_unstable();
    ks
}

/// CSV with one row per run; the best value of each metric column carries [`BEST_MARK`].
fn table(runs: &[Run]) -> Result<String> {
    let ks = shared_ks(runs);
    if ks.is_empty() {
        bail!("the runs share no recall@k cutoff");
    }
    let mut metrics: Vec<(String, String)> = Vec::new();
    for k in &ks {
        metrics.push((format!("R@{k}"), format!("recall@{k}")));
    }
    for k in &ks {
        metrics.push((format!("N@{k}"), format!("ndcg@{k}")));
    }
    let attachments: Vec<&str> = ATTACHMENTS
        .into_iter()
        .filter(|a| runs.iter().any(|r| r.values.contains_key(*a)))
        .collect();

    let parse = |r: &Run, key: &str| -> Result<f64> {
        let raw = r
            .values
            .get(key)
            .with_context(|| format!("run {} lacks {key}", r.name))?;
        raw.parse()
            .with_context(|| format!("run {}: bad {key} value {raw:?}", r.name))
    };
    let mut best = Vec::with_capacity(metrics.len());
    for (_, key) in &metrics {
        let mut m = f64::NEG_INFINITY;
        for r in runs {
            m = m.max(parse(r, key)?);
        }
        best.push(m);
    }

    let mut out = String::from("run,variant,split,users,parameters");
    for (col, _) in &metrics {
        out.push(',');
        out.push_str(col);
    }
    for a in &attachments {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for r in runs {
        let field = |k: &str| r.values.get(k).cloned().unwrap_or_default();
        let mut row = vec![
            r.name.clone(),
            field("variant"),
            field("split"),
            field("users"),
            field("parameters"),
        ];
        for ((_, key), b) in metrics.iter().zip(&best) {
            let mut cell = field(key);
            if parse(r, key)? == *b {
                cell.push(BEST_MARK);
            }
            row.push(cell);
        }
        row.extend(attachments.iter().map(|a| field(a)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn run(a: ReportArgs) -> Result<()> {
    let mut s = Settings::resolve("report", KEYS, a.common.config.as_deref(), &a.common.set)?;
    if !a.runs.is_empty() {
        let joined: Vec<String> = a.runs.iter().map(|p| p.display().to_string()).collect();
        s.set("runs", joined.join(","))?;
    }
    s.set_opt("split", a.split)?;
    s.set_opt("out", a.out.map(|p| p.display().to_string()))?;
    s.check_required()?;
    let split: Split = s.get("split")?;
    let out = PathBuf::from(s.raw("out")?);
    let runs = s
        .raw("runs")?
        .split(',')
        .filter(|r| !r.trim().is_empty())
        .map(|r| load_run(Path::new(r.trim()), split))
        .collect::<Result<Vec<_>>>()?;
    if runs.is_empty() {
        return Err(crate::UsageError("report needs at least one run directory".into()).into());
    }
    let csv = table(&runs)?;
    write(&out, &csv)?;
    let mut echo = out.file_name().unwrap_or_default().to_os_string();
    echo.push(".config.txt");
    write(&out.with_file_name(echo), &s.to_text())?;
    print!("{csv}");
    Ok(())
}

//! Full-ranking evaluation with Recall@K and NDCG@K.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{EvalCase, InteractionDataset, Split};
use crate::diagnostics::{
    alignment_uniformity, condition_number, format_key_values, ConditioningReport, UniformityReport,
};
use crate::error::{Error, Result};
use crate::model::{encode_items, encode_sequence, ItemVectors, ModelParams};
use crate::Matrix;

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "WHITENSEQ_THREADS";

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// 1-based rank; equal scores are ordered by ascending item index.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::Shape(format!(
            "target {target} out of range for {} items",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score for item {i}")));
    }
    let t = scores[target];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < target))
        .count();
    Ok(ahead + 1)
}

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Averaged metrics for an ascending cutoff list.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
}

impl Metrics {
    /// Averages in rank order, so equal rank lists give bit-equal metrics.
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Result<Self> {
        let ks = normalize_ks(ks)?;
        if ranks.is_empty() {
            return Err(Error::Degenerate("no evaluation users".into()));
        }
        let n = ranks.len() as f64;
        let mean = |f: fn(usize, usize) -> f64, k: usize| ranks.iter().map(|&r| f(r, k)).sum::<f64>() / n;
        Ok(Self {
            recall: ks.iter().map(|&k| mean(recall_at_k, k)).collect(),
            ndcg: ks.iter().map(|&k| mean(ndcg_at_k, k)).collect(),
            ks,
            users: ranks.len(),
        })
    }

    fn index(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.index(k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.index(k).map(|i| self.ndcg[i])
    }
}

/// Sorts, deduplicates and checks a cutoff list.
pub fn normalize_ks(ks: &[usize]) -> Result<Vec<usize>> {
    let mut out = ks.to_vec();
    out.sort_unstable();
    out.dedup();
    if out.is_empty() || out[0] == 0 {
        return Err(Error::Config(format!(
            "cutoffs must be positive and non-empty, got {ks:?}"
        )));
    }
    Ok(out)
}

/// Threads allowed by [`THREADS_ENV`]; 1 when unset or invalid.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Ranks every case's target under `scorer`, in case order.
pub fn rank_cases<F>(cases: &[EvalCase], threads: usize, scorer: F) -> Result<Vec<usize>>
where
    F: Fn(&EvalCase) -> Result<Vec<f64>> + Sync,
{
    let rank = |c: &EvalCase| scorer(c).and_then(|s| rank_of_target(&s, c.target));
    let threads = threads.clamp(1, cases.len().max(1));
    if threads == 1 {
        return cases.iter().map(rank).collect();
    }
    let chunk = cases.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = cases
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(rank).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(cases.len());
        for h in handles {
            out.extend(h.join().expect("evaluation thread panicked")?);
        }
        Ok(out)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub split: Split,
    pub metrics: Metrics,
    pub seconds: f64,
    pub parameter_count: usize,
    pub uniformity: Option<UniformityReport>,
    pub conditioning: Option<ConditioningReport>,
}

impl EvalReport {
    /// `key = value` text. Wall-clock time is left out so reruns compare equal.
    pub fn to_text(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("variant", self.variant.clone()),
            ("split", self.split.to_string()),
            ("users", self.metrics.users.to_string()),
            ("parameters", self.parameter_count.to_string()),
        ];
        let mut owned = Vec::new();
        for (i, k) in self.metrics.ks.iter().enumerate() {
            owned.push((format!("recall@{k}"), format!("{:.17e}", self.metrics.recall[i])));
            owned.push((format!("ndcg@{k}"), format!("{:.17e}", self.metrics.ndcg[i])));
        }
        pairs.extend(owned.iter().map(|(k, v)| (k.as_str(), v.clone())));
        if let Some(u) = &self.uniformity {
            pairs.extend(u.key_values());
        }
        if let Some(c) = &self.conditioning {
            pairs.extend(c.key_values());
        }
        format_key_values(&pairs)
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("variant,split,users,parameters");
        for k in &self.metrics.ks {
            let _ = write!(h, ",R@{k}");
        }
        for k in &self.metrics.ks {
            let _ = write!(h, ",N@{k}");
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{}",
            self.variant, self.split, self.metrics.users, self.parameter_count
        );
        for v in self.metrics.recall.iter().chain(&self.metrics.ndcg) {
            let _ = write!(row, ",{v:.6}");
        }
        row
    }
}

fn non_empty_cases(dataset: &InteractionDataset, split: Split) -> Result<Vec<EvalCase>> {
    let cases = dataset.eval_cases(split);
    if cases.is_empty() {
        return Err(Error::Degenerate(format!("the {split} split has no evaluation users")));
    }
    Ok(cases)
}

/// Ranks every item for each user of `split` and averages the metrics.
/// Previously seen items stay in the candidate set.
pub fn evaluate(params: &ModelParams, dataset: &InteractionDataset, split: Split, ks: &[usize]) -> Result<EvalReport> {
    evaluate_with_threads(params, dataset, split, ks, thread_count())
}

pub fn evaluate_with_threads(
    params: &ModelParams,
    dataset: &InteractionDataset,
    split: Split,
    ks: &[usize],
    threads: usize,
) -> Result<EvalReport> {
    let start = Instant::now();
    let ks = normalize_ks(ks)?;
    let cases = non_empty_cases(dataset, split)?;
    let v = encode_items(params)?;
    let items = ItemVectors::from_matrix(&v);
    let ranks = rank_cases(&cases, threads, |c| {
        Ok(items.scores(&encode_sequence(params, &items, &c.prefix)?))
    })?;
    Ok(EvalReport {
        variant: params.variant.kind.to_string(),
        split,
        metrics: Metrics::from_ranks(&ranks, &ks)?,
        seconds: start.elapsed().as_secs_f64(),
        parameter_count: params.parameter_count(),
        uniformity: None,
        conditioning: condition_number(&v).ok(),
    })
}

/// Alignment and uniformity of the user representations and item vectors of `split`.
pub fn representation_uniformity(
    params: &ModelParams,
    dataset: &InteractionDataset,
    split: Split,
) -> Result<UniformityReport> {
    let cases = non_empty_cases(dataset, split)?;
    let v = encode_items(params)?;
    let items = ItemVectors::from_matrix(&v);
    let users: Vec<Vec<f64>> = cases
        .iter()
        .map(|c| encode_sequence(params, &items, &c.prefix))
        .collect::<Result<_>>()?;
    let positives: Vec<(usize, usize)> = cases.iter().enumerate().map(|(u, c)| (u, c.target)).collect();
    alignment_uniformity(&Matrix::from_columns(&users)?, &v, &positives)
}

/// Training-interaction counts as scores.
pub fn popularity_scores(dataset: &InteractionDataset) -> Vec<f64> {
    dataset.train_item_counts().into_iter().map(|c| c as f64).collect()
}

/// The same protocol with every user ranked by item popularity.
pub fn evaluate_popularity(dataset: &InteractionDataset, split: Split, ks: &[usize]) -> Result<EvalReport> {
    let start = Instant::now();
    let ks = normalize_ks(ks)?;
    let cases = non_empty_cases(dataset, split)?;
    let scores = popularity_scores(dataset);
    let ranks = rank_cases(&cases, 1, |_| Ok(scores.clone()))?;
    Ok(EvalReport {
        variant: "POPULARITY".into(),
        split,
        metrics: Metrics::from_ranks(&ranks, &ks)?,
        seconds: start.elapsed().as_secs_f64(),
        parameter_count: 0,
        uniformity: None,
        conditioning: None,
    })
}

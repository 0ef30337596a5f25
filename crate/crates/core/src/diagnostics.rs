//! Geometry of an embedding space: pairwise cosine statistics, singular
//! spectrum, covariance conditioning, and alignment/uniformity.
//!
//! Pair statistics run over all unordered distinct column pairs (self-pairs
//! excluded) when there are at most [`EXACT_PAIR_LIMIT`] columns; above that
//! a fixed-seed sample of [`SAMPLED_PAIRS`] pairs is used.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{covariance, dot, sym_eigendecompose, Mat};
use crate::scalar::Real;

pub const EXACT_PAIR_LIMIT: usize = 4096;
pub const SAMPLED_PAIRS: usize = 1_000_000;
const PAIR_SAMPLE_SEED: u64 = 0x005e_ed0f_9a17;
/// `λ_min` is clamped below at this fraction of `λ_max`.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    /// Descending, first entry exactly 1.
    pub normalized_singular_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningReport {
    pub condition_number: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// Whether `lambda_min` was raised to the floor.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniformityReport {
    pub l_align: f64,
    pub l_uniform_user: f64,
    pub l_uniform_item: f64,
    pub user_pairs: usize,
    pub item_pairs: usize,
}

impl UniformityReport {
    pub fn pair_count_used(&self) -> usize {
        self.user_pairs + self.item_pairs
    }
}

/// Unordered distinct pairs over `n` indices: all of them, or a fixed-seed sample.
fn for_each_pair(n: usize, mut f: impl FnMut(usize, usize)) -> usize {
    if n <= EXACT_PAIR_LIMIT {
        for i in 0..n {
            for j in (i + 1)..n {
                f(i, j);
            }
        }
        n * (n - 1) / 2
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(PAIR_SAMPLE_SEED);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            f(i, j);
        }
        SAMPLED_PAIRS
    }
}

/// Columns of `x` scaled to unit length, returned item-major (one row per column).
fn unit_columns<T: Real>(x: &Mat<T>, what: &str) -> Result<Mat<T>> {
    let mut t = x.transpose();
    for j in 0..t.rows() {
        let row = t.row_mut(j);
        let n = dot(row, row).sqrt();
        if n == T::zero() {
            return Err(Error::Degenerate(format!("{what} column {j} has zero norm")));
        }
        row.iter_mut().for_each(|v| *v = *v / n);
    }
    Ok(t)
}

fn require_pairs(n: usize, what: &str) -> Result<()> {
    if n < 2 {
        return Err(Error::Degenerate(format!("{what}: need at least 2 columns, got {n}")));
    }
    Ok(())
}

/// Mean cosine similarity over column pairs of `x` (`d×n`).
pub fn mean_pairwise_cosine<T: Real>(x: &Mat<T>) -> Result<f64> {
    require_pairs(x.cols(), "mean_pairwise_cosine")?;
    let u = unit_columns(x, "embedding")?;
    let mut sum = 0.0f64;
    let count = for_each_pair(u.rows(), |i, j| sum += dot(u.row(i), u.row(j)).to_f64_lossy());
    Ok(sum / count as f64)
}

/// Empirical CDF of pairwise cosine similarity: for each threshold, the
/// fraction of pairs with similarity `≤` it. `grid` must be ascending.
pub fn cosine_cdf<T: Real>(x: &Mat<T>, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    require_pairs(x.cols(), "cosine_cdf")?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("CDF grid must be ascending".into()));
    }
    let u = unit_columns(x, "embedding")?;
    let mut sims = Vec::new();
    for_each_pair(u.rows(), |i, j| sims.push(dot(u.row(i), u.row(j)).to_f64_lossy()));
    sims.sort_by(f64::total_cmp);
    let total = sims.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| {
            // Rounding can put a self-similar pair a hair above 1.
            let t_eff = if t >= 1.0 { f64::INFINITY } else { t };
            let below = sims.partition_point(|&s| s <= t_eff);
            (t, below as f64 / total)
        })
        .collect())
}

/// Evenly spaced thresholds covering `[-1, 1]`.
pub fn default_cdf_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    (0..points)
        .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
        .collect()
}

/// Singular values of the column-centered `x`, normalized by the largest.
pub fn singular_spectrum<T: Real>(x: &Mat<T>) -> Result<SpectrumReport> {
    let cov = covariance(x, T::zero())?;
    let eig = sym_eigendecompose(&cov)?;
    let n = x.cols() as f64;
    let sv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|l| (l.to_f64_lossy().max(0.0) * n).sqrt())
        .collect();
    let top = sv[0];
    if !(top > 0.0) {
        return Err(Error::Degenerate(
            "all columns identical: zero singular spectrum".into(),
        ));
    }
    Ok(SpectrumReport {
        normalized_singular_values: sv.iter().map(|s| s / top).collect(),
    })
}

/// Condition number `λ_max / λ_min` of the covariance of `v`'s columns.
pub fn condition_number<T: Real>(v: &Mat<T>) -> Result<ConditioningReport> {
    let cov = covariance(v, T::zero())?;
    let eig = sym_eigendecompose(&cov)?;
    let lambda_max = eig.eigenvalues[0].to_f64_lossy();
    if !(lambda_max > 0.0) {
        return Err(Error::Degenerate(format!(
            "covariance has no positive eigenvalue (λ_max = {lambda_max})"
        )));
    }
    let raw_min = eig.eigenvalues.last().expect("non-empty").to_f64_lossy();
    let floor = LAMBDA_FLOOR * lambda_max;
    let clamped = raw_min < floor;
    let lambda_min = if clamped { floor } else { raw_min };
    Ok(ConditioningReport {
        condition_number: lambda_max / lambda_min,
        lambda_max,
        lambda_min,
        clamped,
    })
}

/// `log E[exp(−2‖a − b‖²)]` over distinct pairs of unit rows.
fn uniformity_of<T: Real>(unit: &Mat<T>) -> (f64, usize) {
    let mut sum = 0.0f64;
    let count = for_each_pair(unit.rows(), |i, j| {
        let sq = squared_distance(unit.row(i), unit.row(j));
        sum += (-2.0 * sq).exp();
    });
    ((sum / count as f64).ln(), count)
}

fn squared_distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64_lossy();
            d * d
        })
        .sum()
}

/// Alignment of positive (user, item) pairs and uniformity of users and of
/// items, all on L2-normalized vectors.
pub fn alignment_uniformity<T: Real>(
    users: &Mat<T>,
    items: &Mat<T>,
    positives: &[(usize, usize)],
) -> Result<UniformityReport> {
    if positives.is_empty() {
        return Err(Error::Degenerate("no positive pairs".into()));
    }
    if users.rows() != items.rows() {
        return Err(Error::Shape(format!(
            "user dimension {} differs from item dimension {}",
            users.rows(),
            items.rows()
        )));
    }
    require_pairs(users.cols(), "user uniformity")?;
    require_pairs(items.cols(), "item uniformity")?;
    if let Some(&(u, i)) = positives.iter().find(|&&(u, i)| u >= users.cols() || i >= items.cols()) {
        return Err(Error::Shape(format!("positive pair ({u}, {i}) out of range")));
    }
    let un = unit_columns(users, "user")?;
    let it = unit_columns(items, "item")?;
    let l_align = positives
        .iter()
        .map(|&(u, i)| squared_distance(un.row(u), it.row(i)))
        .sum::<f64>()
        / positives.len() as f64;
    let (l_uniform_user, user_pairs) = uniformity_of(&un);
    let (l_uniform_item, item_pairs) = uniformity_of(&it);
    Ok(UniformityReport {
        l_align,
        l_uniform_user,
        l_uniform_item,
        user_pairs,
        item_pairs,
    })
}

/// `key = value` lines.
pub fn format_key_values(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

impl SpectrumReport {
    /// `index,normalized_singular_value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,normalized_singular_value\n");
        for (i, v) in self.normalized_singular_values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v:e}");
        }
        out
    }
}

impl ConditioningReport {
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("condition_number", format!("{:e}", self.condition_number)),
            ("lambda_max", format!("{:e}", self.lambda_max)),
            ("lambda_min", format!("{:e}", self.lambda_min)),
            ("lambda_min_clamped", self.clamped.to_string()),
        ]
    }
}

impl UniformityReport {
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("l_align", format!("{:e}", self.l_align)),
            ("l_uniform_user", format!("{:e}", self.l_uniform_user)),
            ("l_uniform_item", format!("{:e}", self.l_uniform_item)),
            ("uniformity_pairs", self.pair_count_used().to_string()),
        ]
    }
}

/// `threshold,fraction` CSV for a cosine CDF.
pub fn cdf_to_csv(cdf: &[(f64, f64)]) -> String {
    let mut out = String::from("threshold,fraction\n");
    for (t, f) in cdf {
        let _ = writeln!(out, "{t:e},{f:e}");
    }
    out
}

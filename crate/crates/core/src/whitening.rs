//! Non-parametric whitening (ZCA, PCA, Cholesky, per-dimension) with
//! contiguous dimension groups.
//!
//! A transform is fitted on a `d×n` matrix whose columns are samples. The
//! feature dimensions are split into `G` contiguous blocks of `d/G` rows and
//! each block is whitened independently:
//!
//! ```text
//! Z_g = Φ_g (X_g − μ_g 1ᵀ),   Φ_g Σ_g Φ_gᵀ = I,   Σ_g = cov(X_g) + εI
//! ```
//!
//! With `G = 1` this is full whitening. Larger `G` leaves the correlation
//! between blocks untouched.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, column_mean, covariance_about, invert_lower_triangular, sym_eigendecompose, Mat};
use crate::scalar::Real;

/// Default covariance regularizer.
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WhiteningMethod {
    /// `Φ = DΛ^(−1/2)Dᵀ`
    Zca,
    /// `Φ = Λ^(−1/2)Dᵀ`
    Pca,
    /// `Φ = L⁻¹` where `LLᵀ = Σ`
    Cholesky,
    /// `Φ = diag(Σ)^(−1/2)`; standardizes each dimension, no decorrelation.
    BatchNorm,
}

impl WhiteningMethod {
    pub const ALL: [WhiteningMethod; 4] = [Self::Zca, Self::Pca, Self::Cholesky, Self::BatchNorm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zca => "zca",
            Self::Pca => "pca",
            Self::Cholesky => "cd",
            Self::BatchNorm => "bn",
        }
    }
}

impl fmt::Display for WhiteningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WhiteningMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zca" => Ok(Self::Zca),
            "pca" => Ok(Self::Pca),
            "cd" | "cholesky" => Ok(Self::Cholesky),
            "bn" | "batchnorm" => Ok(Self::BatchNorm),
            other => Err(Error::Config(format!(
                "unknown whitening method {other:?} (expected zca, pca, cd or bn)"
            ))),
        }
    }
}

/// Fitted statistics of one dimension group.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningBlock<T> {
    pub mean: Vec<T>,
    pub phi: Mat<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform<T> {
    method: WhiteningMethod,
    epsilon: T,
    dim: usize,
    blocks: Vec<WhiteningBlock<T>>,
}

/// Whitened output together with the transform that produced it.
#[derive(Clone, Debug)]
pub struct WhitenedEmbeddings<T> {
    pub matrix: Mat<T>,
    pub transform: WhiteningTransform<T>,
}

impl<T: Real> WhiteningTransform<T> {
    /// Assembles a transform from explicit blocks (all of equal width).
    pub fn from_blocks(method: WhiteningMethod, epsilon: T, blocks: Vec<WhiteningBlock<T>>) -> Result<Self> {
        let width = blocks.first().map(|b| b.mean.len()).unwrap_or(0);
        if width == 0 {
            return Err(Error::Shape("transform needs at least one non-empty block".into()));
        }
        for b in &blocks {
            if b.mean.len() != width || b.phi.shape() != (width, width) {
                return Err(Error::Shape("all blocks must share the same width".into()));
            }
        }
        Ok(Self {
            method,
            epsilon,
            dim: width * blocks.len(),
            blocks,
        })
    }

    /// Zero-mean, `Φ = I` transform on `dim` dimensions.
    pub fn identity(dim: usize) -> Self {
        Self {
            method: WhiteningMethod::Zca,
            epsilon: T::zero(),
            dim,
            blocks: vec![WhiteningBlock {
                mean: vec![T::zero(); dim],
                phi: Mat::identity(dim),
            }],
        }
    }

    pub fn method(&self) -> WhiteningMethod {
        self.method
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> usize {
        self.blocks.len()
    }

    pub fn group_width(&self) -> usize {
        self.dim / self.blocks.len()
    }

    pub fn blocks(&self) -> &[WhiteningBlock<T>] {
        &self.blocks
    }

    /// Whitens the columns of `x` (`dim×m`); `x` is left untouched.
    pub fn apply(&self, x: &Mat<T>) -> Result<WhitenedEmbeddings<T>> {
        if x.rows() != self.dim {
            return Err(Error::Shape(format!(
                "input has {} rows, transform expects {}",
                x.rows(),
                self.dim
            )));
        }
        let w = self.group_width();
        let mut out = Mat::zeros(self.dim, x.cols());
        for (g, block) in self.blocks.iter().enumerate() {
            let mut centered = x.row_block(g * w, (g + 1) * w);
            for (i, &m) in block.mean.iter().enumerate() {
                centered.row_mut(i).iter_mut().for_each(|v| *v = *v - m);
            }
            out.set_row_block(g * w, &block.phi.matmul(&centered));
        }
        Ok(WhitenedEmbeddings {
            matrix: out,
            transform: self.clone(),
        })
    }
}

/// Fits a whitening transform on the columns of `x` (`d×n`).
///
/// Dimensions are split into `groups` contiguous blocks. Fails when `groups`
/// does not divide `d` or when a regularized block covariance is not
/// positive definite; there is no pseudo-inverse fallback.
pub fn fit<T: Real>(x: &Mat<T>, method: WhiteningMethod, groups: usize, epsilon: T) -> Result<WhiteningTransform<T>> {
    let (d, n) = x.shape();
    if groups == 0 || d % groups != 0 {
        return Err(Error::Shape(format!(
            "{groups} groups do not divide dimension {d} (valid: {})",
            divisors(d).iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        )));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "whitening needs at least 2 samples, got {n}"
        )));
    }
    if !(epsilon >= T::zero()) || !epsilon.is_finite() {
        return Err(Error::Config(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    let w = d / groups;
    let blocks = (0..groups)
        .map(|g| fit_block(&x.row_block(g * w, (g + 1) * w), method, epsilon, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(WhiteningTransform {
        method,
        epsilon,
        dim: d,
        blocks,
    })
}

/// Fit followed by apply on the same data.
pub fn whiten<T: Real>(
    x: &Mat<T>,
    method: WhiteningMethod,
    groups: usize,
    epsilon: T,
) -> Result<WhitenedEmbeddings<T>> {
    fit(x, method, groups, epsilon)?.apply(x)
}

fn not_positive_definite(group: usize, detail: impl fmt::Display) -> Error {
    Error::Numeric(format!(
        "covariance of group {group} is not positive definite ({detail}); increase epsilon"
    ))
}

fn fit_block<T: Real>(x: &Mat<T>, method: WhiteningMethod, epsilon: T, group: usize) -> Result<WhiteningBlock<T>> {
    let mean = column_mean(x);
    let sigma = covariance_about(x, &mean, epsilon)?;
    let phi = match method {
        WhiteningMethod::Zca | WhiteningMethod::Pca => {
            let eig = sym_eigendecompose(&sigma)?;
            let smallest = *eig.eigenvalues.last().expect("non-empty spectrum");
            if !(smallest > T::zero()) {
                return Err(not_positive_definite(
                    group,
                    format_args!("smallest eigenvalue {smallest}"),
                ));
            }
            if method == WhiteningMethod::Zca {
                eig.reconstruct_with(|l| T::one() / l.sqrt())
            } else {
                let dt = eig.eigenvectors.transpose();
                let mut phi = dt;
                for (i, &l) in eig.eigenvalues.iter().enumerate() {
                    let s = T::one() / l.sqrt();
                    phi.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                }
                phi
            }
        }
        WhiteningMethod::Cholesky => {
            let l = cholesky(&sigma).map_err(|e| not_positive_definite(group, e))?;
            invert_lower_triangular(&l)?
        }
        WhiteningMethod::BatchNorm => {
            let diag = sigma.diagonal();
            if let Some((i, v)) = diag.iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
                return Err(not_positive_definite(
                    group,
                    format_args!("variance of dimension {i} is {v}"),
                ));
            }
            Mat::from_diagonal(&diag.iter().map(|&v| T::one() / v.sqrt()).collect::<Vec<_>>())
        }
    };
    Ok(WhiteningBlock { mean, phi })
}

pub fn divisors(d: usize) -> Vec<usize> {
    (1..=d).filter(|&g| d.is_multiple_of(g)).collect()
}

/// Result of checking a whitened output against its transform.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    /// Per group: max `|cov(Z_g) − (I − εΦΦᵀ)|` (diagonal only for BN).
    pub group_deviation: Vec<f64>,
    /// Max magnitude of each off-diagonal cross-covariance block `(g, h)`, `g < h`.
    pub cross_group: Vec<(usize, usize, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerificationReport {
    pub fn max_deviation(&self) -> f64 {
        self.group_deviation.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_cross_group(&self) -> f64 {
        self.cross_group.iter().map(|c| c.2).fold(0.0, f64::max)
    }
}

/// Measures how closely `z` meets the whitening identity of `transform`.
///
/// `z` must have been produced by `transform` from the data it was fitted on
/// (at least two columns). Since `Φ Σ_reg Φᵀ = I`, the unregularized output
/// covariance is `I − εΦΦᵀ`.
pub fn verify<T: Real>(
    transform: &WhiteningTransform<T>,
    z: &WhitenedEmbeddings<T>,
    tolerance: f64,
) -> VerificationReport {
    let m = &z.matrix;
    let w = transform.group_width();
    let eps = transform.epsilon();
    let ok_shape = m.rows() == transform.dim() && m.cols() >= 2;
    if !ok_shape {
        return VerificationReport {
            group_deviation: vec![f64::INFINITY; transform.groups()],
            cross_group: Vec::new(),
            tolerance,
            passed: false,
        };
    }
    let full = crate::linalg::covariance(m, T::zero()).expect("at least two columns");
    let mut group_deviation = Vec::with_capacity(transform.groups());
    for (g, block) in transform.blocks().iter().enumerate() {
        let expected = Mat::identity(w).sub(&block.phi.matmul_transposed(&block.phi).scale(eps));
        let mut dev = T::zero();
        for i in 0..w {
            for j in 0..w {
                if transform.method() == WhiteningMethod::BatchNorm && i != j {
                    continue;
                }
                dev = dev.max((full[(g * w + i, g * w + j)] - expected[(i, j)]).abs());
            }
        }
        group_deviation.push(dev.to_f64_lossy());
    }
    let mut cross_group = Vec::new();
    for g in 0..transform.groups() {
        for h in (g + 1)..transform.groups() {
            let mut worst = T::zero();
            for i in 0..w {
                for j in 0..w {
                    worst = worst.max(full[(g * w + i, h * w + j)].abs());
                }
            }
            cross_group.push((g, h, worst.to_f64_lossy()));
        }
    }
    let passed = group_deviation.iter().all(|&d| d <= tolerance);
    VerificationReport {
        group_deviation,
        cross_group,
        tolerance,
        passed,
    }
}

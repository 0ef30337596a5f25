//! Synthetic anisotropic embeddings and interaction sequences whose signal
//! lives in the isotropic residual of the embedding space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::data::{RawSequences, UserSequence};
use crate::diagnostics::mean_pairwise_cosine;
use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eigendecompose, Mat};
use crate::EmbeddingMatrix;

/// Spread of the per-item offset along the dominant direction, in units of
/// the residual noise scale.
pub const DOMINANT_SPREAD: f64 = 10.0;
const CALIBRATION_STEPS: usize = 50;
const CALIBRATION_TOLERANCE: f64 = 0.02;

/// Embeddings `x_i = (c + s·z_i)·u + σ·w_i` with a fixed random unit
/// direction `u`, `s = DOMINANT_SPREAD·σ`, `σ = 1`, and `z_i`, `w_i`
/// standard normal. The offset `c` is bisected until the mean pairwise
/// cosine is within 0.02 of `target_cosine`.
///
/// The spread term makes `u` the dominant covariance direction, so the
/// centered spectrum decays sharply after the first singular value.
pub fn gen_anisotropic_embeddings(n: usize, d: usize, target_cosine: f64, seed: u64) -> Result<EmbeddingMatrix> {
    if d < 4 || n < d {
        return Err(Error::Config(format!(
            "generator needs d >= 4 and n >= d, got n={n}, d={d}"
        )));
    }
    if !(-0.05..1.0).contains(&target_cosine) {
        return Err(Error::Config(format!(
            "target cosine {target_cosine} outside [-0.05, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let un = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= un);
    let spread: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    // x_i = b_i(c)·u + w⊥_i with b_i(c) = c + s·z_i + (w_i·u); the Gram matrix of
    // the orthogonal parts is shared by every candidate c.
    let parallel: Vec<f64> = noise.iter().map(|w| dot(w, &u)).collect();
    let ortho: Vec<Vec<f64>> = noise
        .iter()
        .zip(&parallel)
        .map(|(w, &p)| w.iter().zip(&u).map(|(wi, ui)| wi - p * ui).collect())
        .collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&ortho[i], &ortho[j]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let offsets: Vec<f64> = spread
        .iter()
        .zip(&parallel)
        .map(|(z, p)| DOMINANT_SPREAD * z + p)
        .collect();
    let fast_mean_cosine = |c: f64| {
        let b: Vec<f64> = offsets.iter().map(|o| c + o).collect();
        let norms: Vec<f64> = (0..n).map(|i| (b[i] * b[i] + gram[i * n + i]).sqrt()).collect();
        let mut sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += (b[i] * b[j] + gram[i * n + j]) / (norms[i] * norms[j]);
            }
        }
        sum / (n * (n - 1) / 2) as f64
    };

    let c = calibrate(target_cosine, fast_mean_cosine)?;
    let mut data = vec![0.0; d * n];
    for j in 0..n {
        let along = c + DOMINANT_SPREAD * spread[j];
        for i in 0..d {
            data[i * n + j] = along * u[i] + noise[j][i];
        }
    }
    let x = Mat::from_vec(d, n, data)?;
    let measured = mean_pairwise_cosine(&x)?;
    if (measured - target_cosine).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Numeric(format!(
            "generator calibration missed: mean cosine {measured:.4} vs target {target_cosine}"
        )));
    }
    Ok(x)
}

/// Bisects the offset `c ≥ 0`; mean cosine grows monotonically with it.
fn calibrate(target: f64, mean_cos: impl Fn(f64) -> f64) -> Result<f64> {
    let at_zero = mean_cos(0.0);
    if target <= at_zero {
        return if (at_zero - target).abs() <= CALIBRATION_TOLERANCE {
            Ok(0.0)
        } else {
            Err(Error::Numeric(format!(
                "target cosine {target} below the attainable {at_zero:.4}"
            )))
        };
    }
    let mut hi = 1.0;
    while mean_cos(hi) < target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Numeric(format!("cannot reach target cosine {target}")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let v = mean_cos(mid);
        if (v - target).abs() <= CALIBRATION_TOLERANCE / 10.0 {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (mean_cos(mid) - target).abs() <= CALIBRATION_TOLERANCE {
        Ok(mid)
    } else {
        Err(Error::Numeric(format!(
            "cosine calibration did not converge in {CALIBRATION_STEPS} bisection steps"
        )))
    }
}

/// Unit eigenvector of the largest eigenvalue of the uncentered second moment `XXᵀ/n`.
pub fn dominant_direction(x: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let n = x.cols() as f64;
    let second = x.matmul_transposed(x).scale(1.0 / n);
    Ok(sym_eigendecompose(&second)?.eigenvectors.column(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceGenConfig {
    pub users: usize,
    pub mean_len: f64,
    /// Inverse temperature of the item choice.
    pub beta: f64,
    /// Weight of the previous item's residual.
    pub gamma: f64,
    /// Norm of each user's latent preference vector.
    pub user_norm: f64,
    pub seed: u64,
}

impl Default for SequenceGenConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            mean_len: 12.0,
            beta: 4.0,
            gamma: 0.5,
            user_norm: 3.0,
            seed: 0,
        }
    }
}

pub const MIN_SEQUENCE_LEN: usize = 5;
pub const MAX_SEQUENCE_LEN: usize = 50;

/// Autoregressive user sequences over the columns of `embeddings`.
///
/// Item residuals are the centered embeddings with the dominant direction
/// projected out, scaled to unit length. Each user draws a latent vector in
/// that residual space; the next item is sampled, without repeats, with
/// probability `∝ exp(β⟨p_user + γ·r_prev, r_item⟩)`. Lengths are Poisson
/// around `mean_len`, clamped to `[5, 50]`.
pub fn gen_sequences(embeddings: &EmbeddingMatrix, cfg: &SequenceGenConfig) -> Result<RawSequences> {
    if cfg.mean_len < MIN_SEQUENCE_LEN as f64 {
        return Err(Error::Config(format!("mean_len must be at least {MIN_SEQUENCE_LEN}")));
    }
    let (d, n) = embeddings.shape();
    if n < MIN_SEQUENCE_LEN {
        return Err(Error::Config(format!(
            "need at least {MIN_SEQUENCE_LEN} items, got {n}"
        )));
    }
    let residuals = residual_directions(embeddings)?;
    let u = dominant_direction(embeddings)?;
    // Residual-space Gram matrix, item-major.
    let gram = residuals.matmul_transposed(&residuals);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poisson = Poisson::new(cfg.mean_len).map_err(|e| Error::Config(e.to_string()))?;
    let max_len = MAX_SEQUENCE_LEN.min(n);
    let mut users = Vec::with_capacity(cfg.users);
    let mut logits = vec![0.0; n];
    for k in 0..cfg.users {
        let mut p: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let along = dot(&p, &u);
        p.iter_mut().zip(&u).for_each(|(v, ui)| *v -= along * ui);
        let pn = dot(&p, &p).sqrt();
        p.iter_mut().for_each(|v| *v *= cfg.user_norm / pn);
        let affinity: Vec<f64> = (0..n).map(|i| dot(&p, residuals.row(i))).collect();

        let len = (poisson.sample(&mut rng) as usize).clamp(MIN_SEQUENCE_LEN, max_len);
        let mut used = vec![false; n];
        let mut items = Vec::with_capacity(len);
        for _ in 0..len {
            let prev = items.last().copied();
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                let mut s = affinity[i];
                if let Some(j) = prev {
                    s += cfg.gamma * gram[(j, i)];
                }
                logits[i] = cfg.beta * s;
                if !used[i] {
                    max = max.max(logits[i]);
                }
            }
            let total: f64 = (0..n).filter(|&i| !used[i]).map(|i| (logits[i] - max).exp()).sum();
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !used[i]) {
                pick = Some(i);
                r -= (logits[i] - max).exp();
                if r <= 0.0 {
                    break;
                }
            }
            let pick = pick.expect("an unused item remains");
            used[pick] = true;
            items.push(pick);
        }
        users.push(UserSequence {
            user: format!("user{k}"),
            items,
        });
    }
    Ok(RawSequences {
        item_tokens: (0..n).map(|i| format!("item{i}")).collect(),
        source_index: (0..n).collect(),
        users,
    })
}

/// Item-major unit residuals: centered columns with the dominant direction removed.
fn residual_directions(x: &EmbeddingMatrix) -> Result<Mat<f64>> {
    let u = dominant_direction(x)?;
    let mean = crate::linalg::column_mean(x);
    let mut r = x.transpose();
    for i in 0..r.rows() {
        let row = r.row_mut(i);
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        let along = dot(row, &u);
        row.iter_mut().zip(&u).for_each(|(v, ui)| *v -= along * ui);
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("item {i} has no residual component")));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::singular_spectrum;

    #[test]
    fn hits_target_cosine() {
        let x = gen_anisotropic_embeddings(500, 64, 0.8, 1).unwrap();
        let m = mean_pairwise_cosine(&x).unwrap();
        assert!((0.78..=0.82).contains(&m), "{m}");
        assert!(singular_spectrum(&x).unwrap().normalized_singular_values[1] < 0.2);
    }

    #[test]
    fn zero_target_is_isotropic_limit() {
        let x = gen_anisotropic_embeddings(300, 16, 0.0, 2).unwrap();
        let m = mean_pairwise_cosine(&x).unwrap();
        assert!((-0.05..=0.05).contains(&m), "{m}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_anisotropic_embeddings(100, 8, 0.7, 3).unwrap();
        let b = gen_anisotropic_embeddings(100, 8, 0.7, 3).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = gen_anisotropic_embeddings(100, 8, 0.7, 4).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(gen_anisotropic_embeddings(10, 3, 0.8, 0).is_err());
        assert!(gen_anisotropic_embeddings(10, 20, 0.8, 0).is_err());
    }

    fn small_embeddings() -> EmbeddingMatrix {
        gen_anisotropic_embeddings(120, 16, 0.8, 5).unwrap()
    }

    #[test]
    fn sequences_are_deterministic_and_well_formed() {
        let x = small_embeddings();
        let cfg = SequenceGenConfig {
            users: 50,
            seed: 6,
            ..Default::default()
        };
        let a = gen_sequences(&x, &cfg).unwrap();
        assert_eq!(a, gen_sequences(&x, &cfg).unwrap());
        for u in &a.users {
            assert!((MIN_SEQUENCE_LEN..=MAX_SEQUENCE_LEN).contains(&u.items.len()));
            let mut sorted = u.items.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), u.items.len(), "no repeats within a user");
        }
        assert!(gen_sequences(&x, &SequenceGenConfig { mean_len: 3.0, ..cfg }).is_err());
    }

    #[test]
    fn no_signal_limit_is_uniform() {
        let x = small_embeddings();
        let cfg = SequenceGenConfig {
            users: 400,
            beta: 0.0,
            seed: 7,
            ..Default::default()
        };
        let s = gen_sequences(&x, &cfg).unwrap();
        let total = s.interaction_count() as f64;
        let n = x.cols() as f64;
        let (p, mut counts) = (1.0 / n, vec![0usize; x.cols()]);
        s.users.iter().flat_map(|u| &u.items).for_each(|&i| counts[i] += 1);
        let sd = (total * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - total * p).abs() <= 3.0 * sd + 1.0,
                "count {c} vs {}",
                total * p
            );
        }
    }

    #[test]
    fn strong_transition_follows_residual_neighbors() {
        let x = small_embeddings();
        let cfg = SequenceGenConfig {
            users: 100,
            beta: 30.0,
            gamma: 10.0,
            seed: 8,
            ..Default::default()
        };
        let s = gen_sequences(&x, &cfg).unwrap();

        // Oracle: nearest neighbor by cosine after centering and removing the
        // top principal direction of the centered data.
        let centered = {
            let mean = crate::linalg::column_mean(&x);
            let mut c = x.clone();
            for (i, m) in mean.iter().enumerate() {
                c.row_mut(i).iter_mut().for_each(|v| *v -= m);
            }
            c
        };
        let top = sym_eigendecompose(&crate::linalg::covariance(&x, 0.0).unwrap())
            .unwrap()
            .eigenvectors
            .column(0);
        let feats: Vec<Vec<f64>> = (0..x.cols())
            .map(|j| {
                let col = centered.column(j);
                let a: f64 = col.iter().zip(&top).map(|(p, q)| p * q).sum();
                let r: Vec<f64> = col.iter().zip(&top).map(|(p, q)| p - a * q).collect();
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        let (mut hits, mut total) = (0, 0);
        for u in &s.users {
            for w in 1..u.items.len() {
                let prev = u.items[w - 1];
                let seen = &u.items[..w];
                let guess = (0..x.cols())
                    .filter(|i| !seen.contains(i))
                    .max_by(|&a, &b| {
                        let sa: f64 = feats[prev].iter().zip(&feats[a]).map(|(p, q)| p * q).sum();
                        let sb: f64 = feats[prev].iter().zip(&feats[b]).map(|(p, q)| p * q).sum();
                        sa.total_cmp(&sb)
                    })
                    .unwrap();
                hits += usize::from(guess == u.items[w]);
                total += 1;
            }
        }
        let acc = hits as f64 / total as f64;
        assert!(acc > 0.3, "nearest-neighbor accuracy {acc}");
    }
}

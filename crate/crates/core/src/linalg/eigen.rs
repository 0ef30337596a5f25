use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Sweep budget for the cyclic Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 100;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
///
/// Column `i` of `eigenvectors` pairs with `eigenvalues[i]`; each column has its
/// largest-magnitude component positive.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenResult<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Mat<T>,
}

impl<T: Real> EigenResult<T> {
    /// `D · diag(f(λ)) · Dᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Mat<T> {
        let d = &self.eigenvectors;
        let n = d.rows();
        let scaled: Vec<T> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = T::zero();
                for (k, &s) in scaled.iter().enumerate() {
                    acc = acc + d[(i, k)] * s * d[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Mat<T> {
        self.reconstruct_with(|l| l)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converges when the largest off-diagonal magnitude drops to
/// `1e-12 · ‖A‖_F`; gives up after [`JACOBI_MAX_SWEEPS`] sweeps.
pub fn sym_eigendecompose<T: Real>(a: &Mat<T>) -> Result<EigenResult<T>> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let asym = a.asymmetry();
    if asym > T::lit(SYMMETRY_TOLERANCE) {
        return Err(Error::Shape(format!("matrix is not symmetric (max asymmetry {asym})")));
    }

    let n = a.rows();
    // Work on the exactly symmetrized copy.
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * T::lit(0.5);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Mat::<T>::identity(n);
    let threshold = T::jacobi_tolerance() * a.frobenius_norm();

    let mut converged = false;
    let mut off = max_off_diagonal(&m);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        off = max_off_diagonal(&m);
    }
    if !converged && off > threshold {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps \
             (max off-diagonal residual {off}, threshold {threshold})"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in index order, so output is deterministic.
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));

    let eigenvalues: Vec<T> = order.iter().map(|&k| m[(k, k)]).collect();
    let mut eigenvectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        let mut lead = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < T::zero() {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

fn max_off_diagonal<T: Real>(m: &Mat<T>) -> T {
    let n = m.rows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

/// One Jacobi rotation zeroing `m[p][q]`, accumulated into `v`.
fn rotate<T: Real>(m: &mut Mat<T>, v: &mut Mat<T>, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == T::zero() {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (T::lit(2.0) * apq);
    let t = {
        let denom = theta.abs() + (theta * theta + T::one()).sqrt();
        let t = T::one() / denom;
        if theta < T::zero() {
            -t
        } else {
            t
        }
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;

    let n = m.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        let new_kp = c * mkp - s * mkq;
        let new_kq = s * mkp + c * mkq;
        m[(k, p)] = new_kp;
        m[(p, k)] = new_kp;
        m[(k, q)] = new_kq;
        m[(q, k)] = new_kq;
    }
    m[(p, p)] = app - t * apq;
    m[(q, q)] = aqq + t * apq;
    m[(p, q)] = T::zero();
    m[(q, p)] = T::zero();

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn orthonormality_error(d: &Mat<f64>) -> f64 {
        d.transpose().matmul(d).max_abs_diff(&Mat::identity(d.rows()))
    }

    /// Closed-form eigenpairs of a symmetric 2x2 matrix.
    fn closed_form_2x2(a: f64, b: f64, c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let mean = (a + c) / 2.0;
        let r = (((a - c) / 2.0).powi(2) + b * b).sqrt();
        let (l1, l2) = (mean + r, mean - r);
        let v = |l: f64| {
            let (x, y) = if b.abs() > 0.0 {
                (b, l - a)
            } else if (l - a).abs() < 1e-15 {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let n = (x * x + y * y).sqrt();
            let (x, y) = (x / n, y / n);
            if x.abs() >= y.abs() {
                if x < 0.0 {
                    [-x, -y]
                } else {
                    [x, y]
                }
            } else if y < 0.0 {
                [-x, -y]
            } else {
                [x, y]
            }
        };
        ([l1, l2], [v(l1), v(l2)])
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eigendecompose(&Mat::<f64>::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert_eq!(e.eigenvectors, Mat::identity(3));
    }

    #[test]
    fn diagonal_matrix() {
        let e = sym_eigendecompose(&Mat::from_diagonal(&[4.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(e.eigenvectors, Mat::identity(2));

        let e = sym_eigendecompose(&Mat::from_diagonal(&[1.0, 4.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(e.eigenvectors.column(0), vec![0.0, 1.0]);
    }

    #[test]
    fn two_by_two_matches_closed_form() {
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigendecompose(&a).unwrap();
        let (vals, vecs) = closed_form_2x2(2.0, 1.0, 2.0);
        assert!((e.eigenvalues[0] - vals[0]).abs() < 1e-12);
        assert!((e.eigenvalues[1] - vals[1]).abs() < 1e-12);
        assert!((vals[0] - 3.0).abs() < 1e-15 && (vals[1] - 1.0).abs() < 1e-15);
        for (k, v) in vecs.iter().enumerate() {
            let col = e.eigenvectors.column(k);
            assert!((col[0] - v[0]).abs() < 1e-12, "{col:?} vs {v:?}");
            assert!((col[1] - v[1]).abs() < 1e-12);
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvectors.column(0)[0] - h).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let rect = Mat::<f64>::zeros(2, 3);
        assert!(matches!(sym_eigendecompose(&rect), Err(Error::Shape(_))));
        let asym = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigendecompose(&asym), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_matrix_is_already_diagonal() {
        let e = sym_eigendecompose(&Mat::<f64>::zeros(3, 3)).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0; 3]);
    }

    #[test]
    fn deterministic() {
        let a = random_symmetric(17, 3);
        assert_eq!(sym_eigendecompose(&a).unwrap(), sym_eigendecompose(&a).unwrap());
    }

    #[test]
    fn large_reconstruction() {
        let a = random_symmetric(128, 11);
        let e = sym_eigendecompose(&a).unwrap();
        assert!(orthonormality_error(&e.eigenvectors) <= 1e-9);
        assert!(e.reconstruct().max_abs_diff(&a) <= 1e-8 * a.max_abs());
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn single_precision_converges() {
        let a: Mat<f32> = random_symmetric(12, 5).cast();
        let e = sym_eigendecompose(&a).unwrap();
        assert!(e.reconstruct().max_abs_diff(&a) <= 1e-4 * a.max_abs());
    }

    fn random_symmetric(n: usize, seed: u64) -> Mat<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn reconstruction_and_orthonormality(n in 1usize..24, seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let a = random_symmetric(n, seed).scale(scale);
            let e = sym_eigendecompose(&a).unwrap();
            prop_assert!(orthonormality_error(&e.eigenvectors) <= 1e-9);
            prop_assert!(e.reconstruct().max_abs_diff(&a) <= 1e-8 * a.max_abs());
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}

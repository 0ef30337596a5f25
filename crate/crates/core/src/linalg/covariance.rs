use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Row means of a `d×n` matrix, i.e. the mean column.
pub fn column_mean<T: Real>(x: &Mat<T>) -> Vec<T> {
    let n = T::from_usize(x.cols()).expect("column count fits scalar");
    (0..x.rows())
        .map(|i| x.row(i).iter().fold(T::zero(), |a, &v| a + v) / n)
        .collect()
}

/// `(1/n)(X − μ1ᵀ)(X − μ1ᵀ)ᵀ + εI` for a `d×n` matrix of `n` column samples.
pub fn covariance<T: Real>(x: &Mat<T>, epsilon: T) -> Result<Mat<T>> {
    let mean = column_mean(x);
    covariance_about(x, &mean, epsilon)
}

/// Covariance about a caller-supplied mean; same normalization as [`covariance`].
pub fn covariance_about<T: Real>(x: &Mat<T>, mean: &[T], epsilon: T) -> Result<Mat<T>> {
    let (d, n) = x.shape();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    if mean.len() != d {
        return Err(Error::Shape(format!("mean has length {}, expected {d}", mean.len())));
    }
    if epsilon < T::zero() || !epsilon.is_finite() {
        return Err(Error::Config(format!(
            "regularizer must be finite and non-negative, got {epsilon}"
        )));
    }
    let mut centered = x.clone();
    for (i, &m) in mean.iter().enumerate() {
        centered.row_mut(i).iter_mut().for_each(|v| *v = *v - m);
    }
    let inv_n = T::one() / T::from_usize(n).expect("sample count fits scalar");
    let mut cov = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s = super::dot(centered.row(i), centered.row(j)) * inv_n;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
        cov[(i, i)] = cov[(i, i)] + epsilon;
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigendecompose;
    use proptest::prelude::*;

    #[test]
    fn two_sample_hand_computation() {
        // columns (1,1) and (-1,-1): mean 0, cov = ½[(1,1)(1,1)ᵀ + (−1,−1)(−1,−1)ᵀ]
        let x = Mat::from_columns(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let c = covariance(&x, 0.0).unwrap();
        assert_eq!(c, Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap());
    }

    #[test]
    fn regularizer_is_additive() {
        let x = Mat::from_rows(&[vec![0.3, 1.7, -2.0, 0.1], vec![5.0, 4.0, 4.5, 3.9]]).unwrap();
        let c0 = covariance(&x, 0.0).unwrap();
        let c1 = covariance(&x, 0.5).unwrap();
        assert_eq!(c1.sub(&c0), Mat::from_diagonal(&[0.5, 0.5]));
    }

    #[test]
    fn identical_columns_have_zero_covariance() {
        let x = Mat::from_columns(&vec![vec![2.0, -1.0, 3.0]; 5]).unwrap();
        assert_eq!(covariance(&x, 0.0).unwrap(), Mat::zeros(3, 3));
    }

    #[test]
    fn needs_two_samples() {
        let x = Mat::from_columns(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(covariance(&x, 0.0), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn positive_semidefinite(vals in proptest::collection::vec(-10.0f64..10.0, 4 * 7), eps in 0.0f64..1.0) {
            let x = Mat::from_vec(4, 7, vals).unwrap();
            let c = covariance(&x, eps).unwrap();
            prop_assert!(c.asymmetry() <= 1e-12);
            let e = sym_eigendecompose(&c).unwrap();
            prop_assert!(e.eigenvalues.iter().all(|&l| l >= -1e-10));
        }
    }
}

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Lower-triangular `L` with positive diagonal such that `L·Lᵀ = A`.
///
/// Only the lower triangle of `a` is read. A non-positive pivot is reported
/// with its index.
pub fn cholesky<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "Cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut l = Mat::<T>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot = pivot - l[(j, k)] * l[(j, k)];
        }
        if !(pivot > T::zero()) {
            return Err(Error::Numeric(format!(
                "matrix is not positive definite: pivot {j} is {pivot}"
            )));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc = acc - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with non-zero diagonal, by forward substitution.
pub fn invert_lower_triangular<T: Real>(l: &Mat<T>) -> Result<Mat<T>> {
    if !l.is_square() {
        return Err(Error::Shape("triangular inverse needs a square matrix".into()));
    }
    let n = l.rows();
    if let Some(i) = (0..n).find(|&i| l[(i, i)] == T::zero()) {
        return Err(Error::Numeric(format!(
            "singular triangular matrix: zero diagonal at {i}"
        )));
    }
    let mut inv = Mat::<T>::zeros(n, n);
    for col in 0..n {
        // Solve L x = e_col; x is zero above `col`.
        inv[(col, col)] = T::one() / l[(col, col)];
        for i in (col + 1)..n {
            let mut acc = T::zero();
            for k in col..i {
                acc = acc + l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = -acc / l[(i, i)];
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(cholesky(&Mat::<f64>::identity(2)).unwrap(), Mat::identity(2));
        let l = cholesky(&Mat::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(l, Mat::from_diagonal(&[2.0, 3.0]));
    }

    #[test]
    fn two_by_two_reconstructs() {
        let a = Mat::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let expected = Mat::from_rows(&[vec![2.0, 0.0], vec![1.0, 2f64.sqrt()]]).unwrap();
        assert!(l.max_abs_diff(&expected) < 1e-15);
        // direct multiplication check
        let llt = l.matmul_transposed(&l);
        assert!(llt.max_abs_diff(&a) <= 1e-9 * a.max_abs());
    }

    #[test]
    fn reports_failing_pivot() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let msg = cholesky(&a).unwrap_err().to_string();
        assert!(msg.contains("pivot 1"), "{msg}");
        let z = Mat::<f64>::zeros(3, 3);
        assert!(cholesky(&z).unwrap_err().to_string().contains("pivot 0"));
    }

    #[test]
    fn triangular_inverse() {
        let l = Mat::from_rows(&[vec![2.0, 0.0, 0.0], vec![1.0, 3.0, 0.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let inv = invert_lower_triangular(&l).unwrap();
        assert!(inv.is_lower_triangular());
        assert!(l.matmul(&inv).max_abs_diff(&Mat::identity(3)) < 1e-15);
    }

    proptest! {
        #[test]
        fn recovers_factor(entries in proptest::collection::vec(-1.0f64..1.0, 36), diag in proptest::collection::vec(0.2f64..3.0, 6)) {
            let n = 6;
            let mut l = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    l[(i, j)] = entries[i * n + j];
                }
                l[(i, i)] = diag[i];
            }
            let a = l.matmul_transposed(&l);
            let got = cholesky(&a).unwrap();
            prop_assert!(got.max_abs_diff(&l) <= 1e-9);
            prop_assert!(got.matmul_transposed(&got).max_abs_diff(&a) <= 1e-9 * a.max_abs());
        }
    }
}

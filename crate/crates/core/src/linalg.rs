//! Small dense linear-algebra helpers: a rank-revealing Cholesky factor for
//! correlation matrices and a symmetric condition estimate.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Pivots at or below this magnitude are treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Maximum entrywise reconstruction error accepted for `C * C^T == R`.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-12;

/// Lower-triangular `C` with `C * C^T = A` for symmetric positive
/// semidefinite `A`. Columns whose pivot falls below [`PIVOT_TOLERANCE`] are
/// zeroed, which keeps singular matrices such as a perfect correlation
/// factorizable.
pub fn semidefinite_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            axis: "matrix columns",
            expected: n,
            found: a.ncols(),
        });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -PIVOT_TOLERANCE {
            return Err(Error::NotPositiveDefinite(format!(
                "negative pivot {pivot:.3e} at column {j}"
            )));
        }
        if pivot <= PIVOT_TOLERANCE {
            // Rank-deficient column: the remainder of the column must vanish,
            // which the reconstruction check below verifies.
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let err = max_abs(&(&l * l.transpose() - a));
    if err > RECONSTRUCTION_TOLERANCE * (1.0 + max_abs(a)) {
        return Err(Error::NotPositiveDefinite(format!(
            "factor reconstruction error {err:.3e}"
        )));
    }
    Ok(l)
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest eigenvalue is not positive.
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Validated correlation matrix together with its lower-triangular factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    r: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn new(r: DMatrix<f64>) -> Result<Self> {
        let m = r.nrows();
        if r.ncols() != m {
            return Err(Error::Dimension {
                axis: "correlation columns",
                expected: m,
                found: r.ncols(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("correlation matrix"));
        }
        for i in 0..m {
            if r[(i, i)] != 1.0 {
                return Err(Error::parameter(
                    "correlation",
                    format!("diagonal entry {i} is {} (must be 1)", r[(i, i)]),
                ));
            }
            for j in 0..i {
                if r[(i, j)] != r[(j, i)] {
                    return Err(Error::parameter(
                        "correlation",
                        format!("not symmetric at ({i}, {j})"),
                    ));
                }
                if r[(i, j)].abs() > 1.0 {
                    return Err(Error::parameter(
                        "correlation",
                        format!("entry ({i}, {j}) = {} outside [-1, 1]", r[(i, j)]),
                    ));
                }
            }
        }
        let c = semidefinite_cholesky(&r)?;
        Ok(CorrelationMatrix { r, c })
    }

    pub fn identity(m: usize) -> Self {
        CorrelationMatrix {
            r: DMatrix::identity(m, m),
            c: DMatrix::identity(m, m),
        }
    }

    /// Two drivers with instantaneous correlation `rho`.
    pub fn pair(rho: f64) -> Result<Self> {
        CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reconstructs() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0]);
        let corr = CorrelationMatrix::new(r.clone()).unwrap();
        let c = corr.factor();
        assert!(max_abs(&(c * c.transpose() - r)) <= 1e-12);
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert_eq!(c[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn perfect_correlation_is_accepted() {
        for rho in [1.0, -1.0] {
            let corr = CorrelationMatrix::pair(rho).unwrap();
            let c = corr.factor();
            assert!(max_abs(&(c * c.transpose() - corr.matrix())) <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(CorrelationMatrix::pair(1.2).is_err());
        let not_unit = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(CorrelationMatrix::new(not_unit).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(CorrelationMatrix::new(asym).is_err());
        // Valid entries but indefinite as a whole.
        let indef = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0],
        );
        assert!(matches!(
            CorrelationMatrix::new(indef),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn condition_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 0.5]));
        assert!((symmetric_condition(&a) - 8.0).abs() < 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(symmetric_condition(&singular) > 1e12);
    }
}

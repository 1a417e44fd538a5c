//! Small dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used for rank and PSD decisions.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Eigen-decomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order. Each eigenvector is oriented
/// so that its largest-magnitude component is positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: DVector<f64>,
    /// Eigenvectors stored as columns, in the same order as `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rebuilds `U diag(values) Uᵀ`.
    pub fn reconstruct_with(&self, values: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for (k, &w) in values.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let u = self.eigenvectors.column(k);
            for j in 0..n {
                let uj = w * u[j];
                for i in 0..n {
                    out[(i, j)] += u[i] * uj;
                }
            }
        }
        out
    }
}

pub fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{what} has non-finite entries")))
    }
}

/// Symmetric eigendecomposition with the descending/sign convention.
pub fn eigh(a: &DMatrix<f64>) -> Result<Spectrum> {
    let n = check_square(a, "eigendecomposition input")?;
    check_finite(a, "eigendecomposition input")?;
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("eigensolver produced non-finite eigenvalues"));
    }
    Ok(Spectrum {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Numerically stable softplus `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

//! Transformations between symmetric matrices, Gram matrices, Euclidean
//! distance matrices (EDMs) and coordinate embeddings.
//!
//! The Gram matrix convention puts the first point at the origin: for points
//! `x_1..x_n` the Gram matrix is `M_ij = <x_i - x_1, x_j - x_1>`, so its first
//! row and column vanish and the interesting part is the `(n-1)x(n-1)` lower
//! right block (the [`InnerBlock`]). Any symmetric PSD inner block yields a
//! valid EDM, which is what makes an unconstrained symmetric matrix a usable
//! parameterisation.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_finite, check_square, Spectrum, DEFAULT_TOL};
use crate::structure::PointSet;

/// Hollow, symmetric matrix of squared pairwise distances (Å²).
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistanceMatrix(DMatrix<f64>);

/// Gram matrix with vanishing first row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

/// Symmetric `(n-1)x(n-1)` block of a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerBlock(DMatrix<f64>);

/// How eigenvalues are mapped when projecting onto the PSD cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMap {
    /// Softplus applied to every eigenvalue.
    SoftplusAll,
    /// Softplus on the `d` largest eigenvalues, zero for the rest.
    SoftplusTopD(usize),
}

impl SquaredDistanceMatrix {
    /// Validates a user supplied matrix: square, exactly symmetric, zero
    /// diagonal, non-negative and finite.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&m, "distance matrix")?;
        check_finite(&m, "distance matrix")?;
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "distance matrix diagonal entry ({i},{i}) is {}",
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "distance matrix not symmetric at ({i},{j})"
                    )));
                }
                if m[(i, j)] < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "negative squared distance at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds a matrix from the upper triangle of `m`, mirroring it and
    /// zeroing the diagonal. No sign check.
    pub(crate) fn from_upper(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..j {
                out[(i, j)] = m[(i, j)];
                out[(j, i)] = m[(i, j)];
            }
        }
        Self(out)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Simultaneous row/column permutation: entry `(i, j)` of the result is
    /// entry `(order[i], order[j])` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.n();
        Self(DMatrix::from_fn(n, n, |i, j| self.0[(order[i], order[j])]))
    }

    /// Pairwise distances `sqrt(D_ij)` (negative round-off clamped to zero).
    pub fn distances(&self) -> DMatrix<f64> {
        self.0.map(|v| v.max(0.0).sqrt())
    }

    /// Mean squared distance of each point to all points (including itself).
    pub fn row_means(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.0.row_iter().map(|r| r.sum() / n).collect()
    }
}

impl GramMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&m, "Gram matrix")?;
        for k in 0..n {
            if m[(0, k)] != 0.0 || m[(k, 0)] != 0.0 {
                return Err(Error::InvalidInput(
                    "Gram matrix must have zero first row and column".into(),
                ));
            }
        }
        for i in 0..n {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "Gram matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn inner(&self) -> InnerBlock {
        let k = self.n().saturating_sub(1);
        InnerBlock(self.0.view((1, 1), (k, k)).into_owned())
    }
}

impl InnerBlock {
    /// Accepts an exactly symmetric square matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&m, "inner block")?;
        for i in 0..n {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "inner block not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(x: &DMatrix<f64>) -> Result<InnerBlock> {
    let n = check_square(x, "symmetrize input")?;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(InnerBlock(out))
}

static JITTER_WARNED: AtomicBool = AtomicBool::new(false);

/// Eigenvalue map applied to a spectrum: returns `(g(λ_k), g'(λ_k))` per
/// eigenvalue, in spectrum order.
pub(crate) fn map_eigenvalues(values: &[f64], map: EigenMap) -> (Vec<f64>, Vec<f64>) {
    let keep = match map {
        EigenMap::SoftplusAll => values.len(),
        EigenMap::SoftplusTopD(d) => d.min(values.len()),
    };
    values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k < keep {
                (linalg::softplus(v), linalg::sigmoid(v))
            } else {
                (0.0, 0.0)
            }
        })
        .unzip()
}

/// Decomposes a symmetric matrix for projection. In top-d mode a vanishing
/// gap at the cut between kept and zeroed eigenvalues makes the eigenvector
/// derivative singular; in that case a small deterministic diagonal jitter is
/// added once before decomposing.
pub(crate) fn projection_spectrum(a: &DMatrix<f64>, map: EigenMap) -> Result<Spectrum> {
    let spec = linalg::eigh(a)?;
    let EigenMap::SoftplusTopD(d) = map else {
        return Ok(spec);
    };
    if d == 0 || d >= spec.len() {
        return Ok(spec);
    }
    let scale = spec.max_abs();
    let gap = spec.eigenvalues[d - 1] - spec.eigenvalues[d];
    if scale == 0.0 || gap >= 1e-9 * scale {
        return Ok(spec);
    }
    if !JITTER_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "near-degenerate eigenvalues at the rank cut (gap {gap:e}); applying symmetric jitter"
        );
    }
    let n = a.nrows();
    let mut jittered = a.clone();
    for i in 0..n {
        jittered[(i, i)] += 1e-7 * scale * (i + 1) as f64 / n as f64;
    }
    linalg::eigh(&jittered)
}

/// Maps a symmetric matrix onto the PSD cone through its eigenvalues:
/// `U diag(g(λ)) Uᵀ`.
pub fn spd_project(l: &InnerBlock, map: EigenMap) -> Result<InnerBlock> {
    let spec = projection_spectrum(&l.0, map)?;
    let (g, _) = map_eigenvalues(spec.eigenvalues.as_slice(), map);
    let out = spec.reconstruct_with(&g);
    // Exact symmetry of the result.
    symmetrize(&out)
}

/// Embeds the inner block as the lower-right block of an `n x n` matrix.
pub fn gram_from_inner(l: &InnerBlock) -> GramMatrix {
    let k = l.size();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    m.view_mut((1, 1), (k, k)).copy_from(&l.0);
    GramMatrix(m)
}

/// `D_ij = M_ii + M_jj - 2 M_ij`.
pub fn edm_from_gram(m: &GramMatrix) -> SquaredDistanceMatrix {
    let n = m.n();
    let g = &m.0;
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let v = g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)];
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    SquaredDistanceMatrix(d)
}

/// `M_ij = (D_1j + D_i1 - D_ij) / 2`.
pub fn gram_from_edm(d: &SquaredDistanceMatrix) -> GramMatrix {
    let n = d.n();
    let a = &d.0;
    let mut m = DMatrix::zeros(n, n);
    for j in 1..n {
        for i in 1..=j {
            let v = 0.5 * (a[(0, j)] + a[(i, 0)] - a[(i, j)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    GramMatrix(m)
}

/// `-J D J / 2` with the centering matrix `J = I - 11ᵀ/n`.
pub fn schoenberg_operator(d: &SquaredDistanceMatrix) -> DMatrix<f64> {
    schoenberg_raw(&d.0)
}

pub(crate) fn schoenberg_raw(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let nf = n as f64;
    let row: Vec<f64> = (0..n).map(|i| a.row(i).sum() / nf).collect();
    let col: Vec<f64> = (0..n).map(|j| a.column(j).sum() / nf).collect();
    let grand = row.iter().sum::<f64>() / nf;
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = -0.5 * (a[(i, j)] - row[i] - col[j] + grand);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Result of the Schoenberg test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmCheck {
    pub is_edm: bool,
    pub min_eigenvalue: f64,
    pub trace: f64,
}

/// Schoenberg criterion: `D` is an EDM iff `-JDJ/2` is PSD. The smallest
/// eigenvalue is compared against `-tol * trace(-JDJ/2)`.
pub fn is_edm(d: &SquaredDistanceMatrix, tol: f64) -> Result<EdmCheck> {
    let s = schoenberg_operator(d);
    let trace = s.trace();
    let spec = linalg::eigh(&s)?;
    let min = if spec.is_empty() { 0.0 } else { spec.min() };
    Ok(EdmCheck {
        is_edm: min >= -tol * trace,
        min_eigenvalue: min,
        trace,
    })
}

/// Number of Gram eigenvalues above `tol * λ_max`.
pub fn embedding_dimension(d: &SquaredDistanceMatrix, tol: f64) -> Result<usize> {
    let check = is_edm(d, tol)?;
    if !check.is_edm {
        return Err(Error::InvalidInput(format!(
            "not a Euclidean distance matrix (min Schoenberg eigenvalue {:e})",
            check.min_eigenvalue
        )));
    }
    let spec = linalg::eigh(gram_from_edm(d).matrix())?;
    Ok(rank_of(&spec, tol))
}

fn rank_of(spec: &Spectrum, tol: f64) -> usize {
    let top = spec.eigenvalues.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    spec.eigenvalues.iter().filter(|&&v| v > tol * top).count()
}

/// Coordinates realising `D` in `dim` dimensions, taken from the leading
/// eigenvectors of the Gram matrix. Tiny negative eigenvalues are clamped
/// to zero. The result is defined up to rotation, translation and mirroring.
pub fn embed(d: &SquaredDistanceMatrix, dim: usize) -> Result<PointSet> {
    if dim == 0 {
        return Err(Error::dim("embedding dimension must be at least 1"));
    }
    let needed = embedding_dimension(d, DEFAULT_TOL)?;
    if dim < needed {
        return Err(Error::dim(format!(
            "target dimension {dim} is below the embedding dimension {needed}"
        )));
    }
    let n = d.n();
    let spec = linalg::eigh(gram_from_edm(d).matrix())?;
    let coords = DMatrix::from_fn(n, dim, |i, k| {
        if k < spec.len() {
            spec.eigenvectors[(i, k)] * spec.eigenvalues[k].max(0.0).sqrt()
        } else {
            0.0
        }
    });
    PointSet::generic(coords)
}

/// Exact squared pairwise distances.
pub fn edm_from_points(p: &PointSet) -> SquaredDistanceMatrix {
    let n = p.len();
    let c = &p.coords;
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let mut s = 0.0;
            for k in 0..p.dim() {
                let diff = c[(i, k)] - c[(j, k)];
                s += diff * diff;
            }
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    SquaredDistanceMatrix(d)
}

/// Largest entrywise deviation relative to the largest entry of `reference`.
pub fn max_relative_error(reference: &SquaredDistanceMatrix, other: &SquaredDistanceMatrix) -> f64 {
    let scale = reference.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = reference
        .0
        .iter()
        .zip(other.0.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

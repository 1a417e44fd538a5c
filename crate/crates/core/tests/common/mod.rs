//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the library's numerical routines, so agreement
//! with them is evidence rather than tautology.

#![allow(dead_code)]

use edmgan::edm::SquaredDistanceMatrix;
use edmgan::structure::{Element, PointSet};
use itertools::Itertools;
use nalgebra::{DMatrix, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix. Returns the
/// eigenvalues in ascending order.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// `-½ J D J` written out with explicit centring sums.
pub fn schoenberg_oracle(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let nf = n as f64;
    let row: Vec<f64> = (0..n).map(|i| d.row(i).sum() / nf).collect();
    let col: Vec<f64> = (0..n).map(|j| d.column(j).sum() / nf).collect();
    let all = d.sum() / (nf * nf);
    DMatrix::from_fn(n, n, |i, j| -0.5 * (d[(i, j)] - row[i] - col[j] + all))
}

/// Minimum over all permutations of `Σ C[i, σ(i)]`.
pub fn brute_force_assignment(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Optimal 1D transport cost between two discrete distributions on the
/// same sorted support, by the north-west corner rule (optimal on a line).
pub fn transport_oracle(support: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let moved = a[i].min(b[j]);
        cost += moved * (support[i] - support[j]).abs();
        a[i] -= moved;
        b[j] -= moved;
        if a[i] <= 1e-15 {
            i += 1;
        }
        if j < b.len() && b[j] <= 1e-15 {
            j += 1;
        }
    }
    cost
}

pub fn random_coords<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 3, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Points with every pair at least `min_dist` apart.
pub fn spread_coords<R: Rng>(rng: &mut R, n: usize, scale: f64, min_dist: f64) -> DMatrix<f64> {
    loop {
        let c = random_coords(rng, n, scale);
        let ok = (0..n)
            .tuple_combinations()
            .all(|(i, j): (usize, usize)| (c.row(i) - c.row(j)).norm() >= min_dist);
        if ok {
            return c;
        }
    }
}

pub fn squared_distances(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    DMatrix::from_fn(n, n, |i, j| (c.row(i) - c.row(j)).norm_squared())
}

pub fn sdm(c: &DMatrix<f64>) -> SquaredDistanceMatrix {
    SquaredDistanceMatrix::new(squared_distances(c)).unwrap()
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> DMatrix<f64> {
    let axis: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
    DMatrix::from_iterator(3, 3, r.matrix().iter().copied())
}

/// `coords · Rᵀ + t` for a random proper rotation and translation.
pub fn rigid_transform<R: Rng>(rng: &mut R, c: &DMatrix<f64>) -> DMatrix<f64> {
    let r = random_rotation(rng);
    let shift: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut out = c * r.transpose();
    for mut row in out.row_iter_mut() {
        for k in 0..3 {
            row[k] += shift[k];
        }
    }
    out
}

pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn permute_rows(c: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |i, k| c[(order[i], k)])
}

pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(rng) });
    (&a + a.transpose()) * 0.5
}

/// Random element list drawn from C, O and H.
pub fn random_elements<R: Rng>(rng: &mut R, n: usize) -> Vec<Element> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => Element::C,
            1 => Element::O,
            _ => Element::H,
        })
        .collect()
}

pub fn point_set(c: DMatrix<f64>, e: Vec<Element>) -> PointSet {
    PointSet::new(c, e).unwrap()
}

/// Random row-stochastic `n × k` matrix bounded away from zero.
pub fn random_soft_types<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    let mut t = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.1..1.0));
    for mut row in t.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    t
}

/// Smallest gap between consecutive sorted eigenvalues.
pub fn min_gap(ev: &[f64]) -> f64 {
    ev.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min)
}

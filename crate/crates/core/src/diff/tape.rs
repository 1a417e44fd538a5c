//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value and the ids of its inputs. [`Tape::backward`] walks the nodes in
//! reverse and accumulates vector-Jacobian products into the inputs. Only
//! the closed set of operations needed by the networks and losses is
//! supported; batched matrix operations take `[m, k, k]` tensors.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::tensor::Tensor;
use crate::edm::{self, EigenMap};
use crate::error::{Error, Result};
use crate::linalg;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    LeakyRelu(f64),
    /// `softplus(x) - ln 2`.
    ShiftedSoftplus,
    Relu,
    Square,
    /// `sqrt(max(x, 0) + eps)`.
    SafeSqrt(f64),
    /// `ln(x + eps)`.
    Ln(f64),
    Exp,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Unary::ShiftedSoftplus => linalg::softplus(x) - std::f64::consts::LN_2,
            Unary::Relu => x.max(0.0),
            Unary::Square => x * x,
            Unary::SafeSqrt(eps) => (x.max(0.0) + eps).sqrt(),
            Unary::Ln(eps) => (x + eps).ln(),
            Unary::Exp => x.exp(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Unary::ShiftedSoftplus => linalg::sigmoid(x),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::SafeSqrt(_) => {
                if x > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Ln(eps) => 1.0 / (x + eps),
            Unary::Exp => y,
        }
    }
}

/// Cached eigen data for the backward pass of a matrix function.
#[derive(Debug, Clone)]
struct MatFnCache {
    vectors: DMatrix<f64>,
    /// Divided differences of the eigenvalue map.
    gamma: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    Sum(Var),
    SumLast(Var),
    Reshape(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterRows(Var, Arc<[usize]>),
    GatherFlat(Var, Arc<[usize]>),
    Rbf {
        input: Var,
        centers: Arc<[f64]>,
        gamma: f64,
    },
    Symmetrize(Var),
    SpdProject(Var, Vec<MatFnCache>),
    PadGram(Var),
    EdmFromGram(Var),
    Schoenberg(Var),
    EigvalsDesc(Var, Vec<DMatrix<f64>>),
    SliceLast {
        input: Var,
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when the node received no gradient.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::from_parts(shape, g.to_vec()),
            None => Tensor::zeros(&shape),
        }
    }
}

/// `C = op(A) · op(B)` with row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // Logical A is m x k, logical B is k x n.
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked by the callers against m, k, n and
    // the strides describe dense row-major layouts of those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn batch_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [m, a, b] if a == b => Ok((*m, *a)),
        _ => Err(Error::dim(format!(
            "{what} expects a [m, k, k] batch, got {shape:?}"
        ))),
    }
}

fn matrix_at(data: &[f64], k: usize, item: usize) -> DMatrix<f64> {
    let s = &data[item * k * k..(item + 1) * k * k];
    DMatrix::from_fn(k, k, |i, j| s[i * k + j])
}

fn store_matrix(dst: &mut [f64], k: usize, item: usize, m: &DMatrix<f64>) {
    let s = &mut dst[item * k * k..(item + 1) * k * k];
    for i in 0..k {
        for j in 0..k {
            s[i * k + j] = m[(i, j)];
        }
    }
}

fn sym_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        None => *acc = Some(g.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::dim(format!("matmul {sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, 0.0);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a length-`c` bias to every row of an `[r, c]` tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let c = match (sx, sb) {
            ([_, c], [c2]) if c == c2 => *c,
            _ => return Err(Error::dim(format!("add_bias {sx:?} + {sb:?}"))),
        };
        let bias = self.data(b).to_vec();
        let mut out = self.data(x).to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                row.iter_mut().zip(&bias).for_each(|(v, bb)| *v += bb);
            }
        }
        let shape = sx.to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias(x, b), &[x, b]))
    }

    fn binary(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shape {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x * s).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| f.apply(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(t, Op::Unary(a, f), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| Error::dim("softmax of a scalar"))?;
        let mut out = self.data(a).to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::SoftmaxRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums over the last axis: `[.., c] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim(format!("sum_last needs rank >= 2, got {shape:?}")));
        }
        let c = shape[shape.len() - 1];
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let data = self.data(a);
        let out: Vec<f64> = (0..rows).map(|r| data[r * c..(r + 1) * c].iter().sum()).collect();
        let t = Tensor::from_parts(shape[..shape.len() - 1].to_vec(), out);
        Ok(self.push(t, Op::SumLast(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Row `i` of the output is row `idx[i]` of the `[r, c]` input.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (r, c) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => return Err(Error::dim(format!("gather_rows on {s:?}"))),
        };
        let data = self.data(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(Error::dim(format!("gather index {i} out of {r} rows")));
            }
            out.extend_from_slice(&data[i * c..(i + 1) * c]);
        }
        let t = Tensor::from_parts(vec![idx.len(), c], out);
        Ok(self.push(t, Op::GatherRows(a, idx), &[a]))
    }

    /// Adds input row `i` into output row `idx[i]`; output has `rows` rows.
    pub fn scatter_rows(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var> {
        let (k, c) = match self.shape(a) {
            [k, c] => (*k, *c),
            s => return Err(Error::dim(format!("scatter_rows on {s:?}"))),
        };
        if k != idx.len() {
            return Err(Error::dim(format!("scatter of {k} rows with {} indices", idx.len())));
        }
        let data = self.data(a);
        let mut out = vec![0.0; rows * c];
        for (src, &dst) in idx.iter().enumerate() {
            if dst >= rows {
                return Err(Error::dim(format!("scatter index {dst} out of {rows} rows")));
            }
            let o = &mut out[dst * c..(dst + 1) * c];
            o.iter_mut()
                .zip(&data[src * c..(src + 1) * c])
                .for_each(|(x, y)| *x += y);
        }
        let t = Tensor::from_parts(vec![rows, c], out);
        Ok(self.push(t, Op::ScatterRows(a, idx), &[a]))
    }

    /// Picks entries by flat index into a 1-D tensor.
    pub fn gather_flat(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let data = self.data(a);
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            out.push(
                *data
                    .get(i)
                    .ok_or_else(|| Error::dim(format!("flat index {i} out of {}", data.len())))?,
            );
        }
        let t = Tensor::from_parts(vec![idx.len()], out);
        Ok(self.push(t, Op::GatherFlat(a, idx), &[a]))
    }

    /// Gaussian expansion `exp(-γ (r - c_b)²)`: `[p] -> [p, n_basis]`.
    pub fn rbf(&mut self, r: Var, centers: Arc<[f64]>, gamma: f64) -> Result<Var> {
        if self.shape(r).len() != 1 {
            return Err(Error::dim(format!("rbf expects a vector, got {:?}", self.shape(r))));
        }
        let data = self.data(r);
        let b = centers.len();
        let mut out = Vec::with_capacity(data.len() * b);
        for &x in data {
            for &c in centers.iter() {
                out.push((-gamma * (x - c) * (x - c)).exp());
            }
        }
        let t = Tensor::from_parts(vec![data.len(), b], out);
        Ok(self.push(
            t,
            Op::Rbf {
                input: r,
                centers,
                gamma,
            },
            &[r],
        ))
    }

    /// `(X + Xᵀ)/2` per batch item.
    pub fn symmetrize(&mut self, a: Var) -> Result<Var> {
        let (m, k) = batch_dims(self.shape(a), "symmetrize")?;
        let data = self.data(a);
        let mut out = vec![0.0; data.len()];
        for item in 0..m {
            let o = item * k * k;
            for i in 0..k {
                for j in 0..=i {
                    let v = 0.5 * (data[o + i * k + j] + data[o + j * k + i]);
                    out[o + i * k + j] = v;
                    out[o + j * k + i] = v;
                }
            }
        }
        let t = Tensor::from_parts(vec![m, k, k], out);
        Ok(self.push(t, Op::Symmetrize(a), &[a]))
    }

    /// `U g(Λ) Uᵀ` per batch item, differentiated with the Daleckii–Krein
    /// rule. Inputs must be symmetric.
    pub fn spd_project(&mut self, a: Var, map: EigenMap) -> Result<Var> {
        let (m, k) = batch_dims(self.shape(a), "spd_project")?;
        let mut out = vec![0.0; m * k * k];
        let mut caches = Vec::with_capacity(m);
        for item in 0..m {
            let mat = matrix_at(self.data(a), k, item);
            let spec = edm::projection_spectrum(&mat, map)?;
            let lam = spec.eigenvalues.as_slice();
            let (g, dg) = edm::map_eigenvalues(lam, map);
            let proj = edm::symmetrize(&spec.reconstruct_with(&g))?;
            store_matrix(&mut out, k, item, proj.matrix());
            let gamma = DMatrix::from_fn(k, k, |i, j| {
                if i == j {
                    return dg[i];
                }
                let diff = lam[i] - lam[j];
                let scale = lam[i].abs().max(lam[j].abs()).max(1.0);
                if diff.abs() <= 1e-8 * scale {
                    0.5 * (dg[i] + dg[j])
                } else {
                    (g[i] - g[j]) / diff
                }
            });
            caches.push(MatFnCache {
                vectors: spec.eigenvectors,
                gamma,
            });
        }
        let t = Tensor::from_parts(vec![m, k, k], out);
        Ok(self.push(t, Op::SpdProject(a, caches), &[a]))
    }

    /// Embeds each `[k, k]` block into a `[k+1, k+1]` matrix with zero first
    /// row and column.
    pub fn pad_gram(&mut self, a: Var) -> Result<Var> {
        let (m, k) = batch_dims(self.shape(a), "pad_gram")?;
        let n = k + 1;
        let data = self.data(a);
        let mut out = vec![0.0; m * n * n];
        for item in 0..m {
            for i in 0..k {
                for j in 0..k {
                    out[item * n * n + (i + 1) * n + (j + 1)] = data[item * k * k + i * k + j];
                }
            }
        }
        let t = Tensor::from_parts(vec![m, n, n], out);
        Ok(self.push(t, Op::PadGram(a), &[a]))
    }

    /// `D_ij = M_ii + M_jj - (M_ij + M_ji)`, zero diagonal.
    pub fn edm_from_gram(&mut self, a: Var) -> Result<Var> {
        let (m, n) = batch_dims(self.shape(a), "edm_from_gram")?;
        let data = self.data(a);
        let mut out = vec![0.0; data.len()];
        for item in 0..m {
            let o = item * n * n;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        out[o + i * n + j] = (data[o + i * n + i] + data[o + j * n + j])
                            - (data[o + i * n + j] + data[o + j * n + i]);
                    }
                }
            }
        }
        let t = Tensor::from_parts(vec![m, n, n], out);
        Ok(self.push(t, Op::EdmFromGram(a), &[a]))
    }

    /// `-J sym(D) J / 2` per batch item.
    pub fn schoenberg(&mut self, a: Var) -> Result<Var> {
        let (m, n) = batch_dims(self.shape(a), "schoenberg")?;
        let mut out = vec![0.0; m * n * n];
        for item in 0..m {
            let d = sym_of(&matrix_at(self.data(a), n, item));
            store_matrix(&mut out, n, item, &edm::schoenberg_raw(&d));
        }
        let t = Tensor::from_parts(vec![m, n, n], out);
        Ok(self.push(t, Op::Schoenberg(a), &[a]))
    }

    /// Eigenvalues in descending order: `[m, n, n] -> [m, n]`.
    pub fn eigvals_desc(&mut self, a: Var) -> Result<Var> {
        let (m, n) = batch_dims(self.shape(a), "eigvals_desc")?;
        let mut out = Vec::with_capacity(m * n);
        let mut vecs = Vec::with_capacity(m);
        for item in 0..m {
            let spec = linalg::eigh(&matrix_at(self.data(a), n, item))?;
            out.extend(spec.eigenvalues.iter());
            vecs.push(spec.eigenvectors);
        }
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(t, Op::EigvalsDesc(a, vecs), &[a]))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = match self.shape(a) {
            [r, c] if start <= end && end <= *c => (*r, *c),
            s => return Err(Error::dim(format!("slice {start}..{end} of {s:?}"))),
        };
        let data = self.data(a);
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in 0..r {
            out.extend_from_slice(&data[row * c + start..row * c + end]);
        }
        let t = Tensor::from_parts(vec![r, w], out);
        Ok(self.push(t, Op::SliceLast { input: a, start, end }, &[a]))
    }

    /// Reverse pass seeded with `d out = 1`; `out` must hold one element.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        let n = self.value(out).numel();
        if n != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(out)
            )));
        }
        self.backward_with(out, vec![1.0])
    }

    /// Reverse pass with an explicit output cotangent.
    pub fn backward_with(&self, out: Var, seed: Vec<f64>) -> Result<Grads> {
        if seed.len() != self.value(out).numel() {
            return Err(Error::dim("seed does not match output size"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes[..=out.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Grads { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.data(*b), true, &mut ga, 0.0);
                    add_into(&mut grads[a.0], &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.data(*a), true, g, false, &mut gb, 0.0);
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.wants(*b) {
                    let c = self.shape(*b)[0];
                    let mut gb = vec![0.0; c];
                    if c > 0 {
                        for row in g.chunks(c) {
                            gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                        }
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let ga: Vec<f64> = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if self.wants(*b) {
                    let gb: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Scale(a, s) => {
                let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Unary(a, f) => {
                let x = self.data(*a);
                let y = node.value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gv, (xv, yv))| gv * f.derivative(*xv, *yv))
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let c = *node.value.shape().last().unwrap();
                let mut ga = vec![0.0; y.len()];
                if c > 0 {
                    for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            out[k] = yr[k] * (gr[k] - dot);
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.value(*a).numel()];
                add_into(&mut grads[a.0], &ga);
            }
            Op::SumLast(a) => {
                let c = *self.shape(*a).last().unwrap();
                let mut ga = Vec::with_capacity(g.len() * c);
                for &v in g {
                    ga.extend(std::iter::repeat_n(v, c));
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], g),
            Op::GatherRows(a, idx) => {
                let c = self.shape(*a)[1];
                let mut ga = vec![0.0; self.value(*a).numel()];
                for (src, &dst) in idx.iter().enumerate() {
                    ga[dst * c..(dst + 1) * c]
                        .iter_mut()
                        .zip(&g[src * c..(src + 1) * c])
                        .for_each(|(x, y)| *x += y);
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::ScatterRows(a, idx) => {
                let c = self.shape(*a)[1];
                let mut ga = Vec::with_capacity(idx.len() * c);
                for &dst in idx.iter() {
                    ga.extend_from_slice(&g[dst * c..(dst + 1) * c]);
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::GatherFlat(a, idx) => {
                let mut ga = vec![0.0; self.value(*a).numel()];
                for (src, &dst) in idx.iter().enumerate() {
                    ga[dst] += g[src];
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Rbf {
                input,
                centers,
                gamma,
            } => {
                let r = self.data(*input);
                let y = node.value.data();
                let b = centers.len();
                let ga: Vec<f64> = r
                    .iter()
                    .enumerate()
                    .map(|(p, &x)| {
                        (0..b)
                            .map(|k| g[p * b + k] * y[p * b + k] * (-2.0 * gamma * (x - centers[k])))
                            .sum()
                    })
                    .collect();
                add_into(&mut grads[input.0], &ga);
            }
            Op::Symmetrize(a) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut ga = vec![0.0; g.len()];
                for item in 0..m {
                    let o = item * k * k;
                    for i in 0..k {
                        for j in 0..k {
                            ga[o + i * k + j] = 0.5 * (g[o + i * k + j] + g[o + j * k + i]);
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::SpdProject(a, caches) => {
                let k = self.shape(*a)[1];
                let mut ga = vec![0.0; g.len()];
                for (item, cache) in caches.iter().enumerate() {
                    let gbar = sym_of(&matrix_at(g, k, item));
                    let u = &cache.vectors;
                    let inner = (u.transpose() * gbar * u).component_mul(&cache.gamma);
                    store_matrix(&mut ga, k, item, &(u * inner * u.transpose()));
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::PadGram(a) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = k + 1;
                let mut ga = vec![0.0; m * k * k];
                for item in 0..m {
                    for i in 0..k {
                        for j in 0..k {
                            ga[item * k * k + i * k + j] = g[item * n * n + (i + 1) * n + (j + 1)];
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::EdmFromGram(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut ga = vec![0.0; g.len()];
                for item in 0..m {
                    let o = item * n * n;
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let s = g[o + i * n + j];
                            ga[o + i * n + i] += s;
                            ga[o + j * n + j] += s;
                            ga[o + i * n + j] -= s;
                            ga[o + j * n + i] -= s;
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Schoenberg(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut ga = vec![0.0; g.len()];
                for item in 0..m {
                    // The centering map is self-adjoint; the symmetrization
                    // on the input side is too.
                    let gbar = sym_of(&matrix_at(g, n, item));
                    store_matrix(&mut ga, n, item, &edm::schoenberg_raw(&gbar));
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::EigvalsDesc(a, vecs) => {
                let n = self.shape(*a)[1];
                let mut ga = vec![0.0; self.value(*a).numel()];
                for (item, u) in vecs.iter().enumerate() {
                    let o = item * n * n;
                    for kk in 0..n {
                        let w = g[item * n + kk];
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            let ui = w * u[(i, kk)];
                            for j in 0..n {
                                ga[o + i * n + j] += ui * u[(j, kk)];
                            }
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::SliceLast { input, start, end } => {
                let c = self.shape(*input)[1];
                let w = end - start;
                let mut ga = vec![0.0; self.value(*input).numel()];
                if w > 0 {
                    for (row, chunk) in g.chunks(w).enumerate() {
                        ga[row * c + start..row * c + end].copy_from_slice(chunk);
                    }
                }
                add_into(&mut grads[input.0], &ga);
            }
        }
    }
}

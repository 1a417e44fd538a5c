//! Training objectives: EDM and rank penalties, repulsion, type cross
//! entropy and the WGAN-GP critic / generator losses.
//!
//! Every loss comes in two flavours: a value-only function on a single
//! sample and a batched tape function returning one value per sample.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diff::{ParamGrads, ParameterStore, Tape, Tensor, Unary, Var};
use crate::edm::{schoenberg_operator, EigenMap, GramMatrix, SquaredDistanceMatrix};
use crate::error::{Error, Result};
use crate::linalg::eigh;
use crate::networks::{Critic, Generator, GeneratedVars, SampleBatch, SQRT_EPS};

/// Guard inside the logarithm of the type cross entropy.
pub const EPS_LOG: f64 = 1e-12;
/// Step of the central difference used for the gradient-penalty surrogate.
pub const GP_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RepulsionMode {
    /// `ReLU(r - sqrt(D_ij))^2`: only distances below `r` are penalised.
    #[default]
    OneSided,
    /// `(sqrt(D_ij) - r)^2`.
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub eta_edm: f64,
    pub eta_rank: f64,
    pub lambda_gp: f64,
    pub eps_drift: f64,
    pub k_rep: f64,
    /// Repulsion target in Å. `None` means the smallest pairwise distance
    /// of the training data.
    pub r_min: Option<f64>,
    pub rank_dim: usize,
    pub repulsion: RepulsionMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta_edm: 1.0,
            eta_rank: 1.0,
            lambda_gp: 10.0,
            eps_drift: 1e-3,
            k_rep: 10.0,
            r_min: None,
            rank_dim: 3,
            repulsion: RepulsionMode::OneSided,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.eta_edm, self.eta_rank, self.lambda_gp, self.eps_drift, self.k_rep];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if let Some(r) = self.r_min {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::Config("r_min must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    fn r(&self) -> Result<f64> {
        self.r_min
            .ok_or_else(|| Error::Config("repulsion target r_min is not resolved".into()))
    }
}

/// `Σ ReLU(-μ_k)^2` over the eigenvalues of `-½ J D J`.
pub fn loss_edm(d: &SquaredDistanceMatrix) -> Result<f64> {
    let s = eigh(&schoenberg_operator(d))?;
    Ok(s.eigenvalues.iter().map(|&mu| (-mu).max(0.0).powi(2)).sum())
}

/// Sum of squares of the eigenvalues ranked after the `dim` largest.
pub fn loss_rank(m: &GramMatrix, dim: usize) -> Result<f64> {
    let s = eigh(m.matrix())?;
    Ok(s.eigenvalues.iter().skip(dim).map(|l| l * l).sum())
}

/// `k · ½ Σ_{i≠j} φ(sqrt(D_ij))` with `φ` the one- or two-sided square
/// deviation from `r`.
pub fn loss_repulsion(d: &SquaredDistanceMatrix, r: f64, k_rep: f64, mode: RepulsionMode) -> f64 {
    let n = d.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist = (d.get(i, j).max(0.0) + SQRT_EPS).sqrt();
            let dev = match mode {
                RepulsionMode::OneSided => (r - dist).max(0.0),
                RepulsionMode::TwoSided => dist - r,
            };
            total += dev * dev;
        }
    }
    0.5 * k_rep * total
}

/// Mean over points of `-Σ_c t_ref · ln(t + ε)`.
pub fn loss_types(t: &DMatrix<f64>, t_ref: &DMatrix<f64>) -> Result<f64> {
    if t.shape() != t_ref.shape() {
        return Err(Error::dim(format!(
            "types {:?} vs reference {:?}",
            t.shape(),
            t_ref.shape()
        )));
    }
    if t.nrows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = t
        .iter()
        .zip(t_ref.iter())
        .map(|(&p, &q)| -q * (p + EPS_LOG).ln())
        .sum();
    Ok(total / t.nrows() as f64)
}

fn batch_dims(tape: &Tape, d: Var) -> Result<(usize, usize)> {
    match tape.shape(d) {
        [m, a, b] if a == b => Ok((*m, *a)),
        s => Err(Error::dim(format!("expected [m, n, n], got {s:?}"))),
    }
}

/// Per-sample [`loss_edm`] on a batch `[m, n, n]` → `[m]`.
pub fn tape_loss_edm(tape: &mut Tape, d: Var) -> Result<Var> {
    let g = tape.schoenberg(d)?;
    let mu = tape.eigvals_desc(g)?;
    let neg = tape.scale(mu, -1.0);
    let r = tape.unary(neg, Unary::Relu);
    let sq = tape.unary(r, Unary::Square);
    tape.sum_last(sq)
}

/// Per-sample [`loss_rank`] on Gram matrices `[m, n, n]` → `[m]`.
pub fn tape_loss_rank(tape: &mut Tape, gram: Var, dim: usize) -> Result<Var> {
    let (m, n) = batch_dims(tape, gram)?;
    let lam = tape.eigvals_desc(gram)?;
    if dim >= n {
        return Ok(tape.constant(Tensor::zeros(&[m])));
    }
    let tail = tape.slice_last(lam, dim, n)?;
    let sq = tape.unary(tail, Unary::Square);
    tape.sum_last(sq)
}

/// Per-sample [`loss_repulsion`] on `[m, n, n]` → `[m]`.
pub fn tape_loss_repulsion(
    tape: &mut Tape,
    d: Var,
    r: f64,
    k_rep: f64,
    mode: RepulsionMode,
) -> Result<Var> {
    let (m, n) = batch_dims(tape, d)?;
    let pairs = n * n.saturating_sub(1);
    if pairs == 0 {
        return Ok(tape.constant(Tensor::zeros(&[m])));
    }
    let idx: Arc<[usize]> = (0..m)
        .flat_map(|s| {
            (0..n * n)
                .filter(move |k| k / n != k % n)
                .map(move |k| s * n * n + k)
        })
        .collect();
    let flat = tape.reshape(d, &[m * n * n])?;
    let off = tape.gather_flat(flat, idx)?;
    let dist = tape.unary(off, Unary::SafeSqrt(SQRT_EPS));
    let target = tape.constant(Tensor::from_parts(vec![m * pairs], vec![r; m * pairs]));
    let dev = match mode {
        RepulsionMode::OneSided => {
            let gap = tape.sub(target, dist)?;
            tape.unary(gap, Unary::Relu)
        }
        RepulsionMode::TwoSided => tape.sub(dist, target)?,
    };
    let sq = tape.unary(dev, Unary::Square);
    let sq = tape.reshape(sq, &[m, pairs])?;
    let s = tape.sum_last(sq)?;
    Ok(tape.scale(s, 0.5 * k_rep))
}

/// Per-sample [`loss_types`] on `t [m, n, T]` against a fixed
/// `t_ref [n, T]` → `[m]`.
pub fn tape_loss_types(tape: &mut Tape, t: Var, t_ref: &DMatrix<f64>) -> Result<Var> {
    let (m, n, k) = match tape.shape(t) {
        [m, n, k] => (*m, *n, *k),
        s => return Err(Error::dim(format!("expected [m, n, T], got {s:?}"))),
    };
    if t_ref.shape() != (n, k) {
        return Err(Error::dim(format!(
            "reference types {:?}, expected ({n}, {k})",
            t_ref.shape()
        )));
    }
    let mut rep = Vec::with_capacity(m * n * k);
    for _ in 0..m {
        for i in 0..n {
            rep.extend((0..k).map(|c| t_ref[(i, c)]));
        }
    }
    let q = tape.constant(Tensor::from_parts(vec![m, n, k], rep));
    let lg = tape.unary(t, Unary::Ln(EPS_LOG));
    let prod = tape.mul(lg, q)?;
    let per_atom = tape.sum_last(prod)?;
    let per_sample = tape.sum_last(per_atom)?;
    Ok(tape.scale(per_sample, -1.0 / n.max(1) as f64))
}

/// `α_s · real_s + (1 - α_s) · fake_s` for every pair, with one `α` per
/// pair shared by all entries of `D` and `t`.
pub fn interpolate(real: &SampleBatch, fake: &SampleBatch, alphas: &[f64]) -> Result<SampleBatch> {
    if real.d.shape() != fake.d.shape() || real.t.shape() != fake.t.shape() {
        return Err(Error::dim("real and fake batches differ in shape"));
    }
    if alphas.len() != real.len() {
        return Err(Error::dim(format!(
            "{} interpolation weights for {} pairs",
            alphas.len(),
            real.len()
        )));
    }
    let mix = |a: &Tensor, b: &Tensor| {
        let per = a.numel() / alphas.len().max(1);
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .enumerate()
            .map(|(i, (&x, &y))| {
                let al = alphas[i / per];
                al * x + (1.0 - al) * y
            })
            .collect();
        Tensor::from_parts(a.shape().to_vec(), data)
    };
    Ok(SampleBatch {
        d: mix(&real.d, &fake.d),
        t: mix(&real.t, &fake.t),
    })
}

/// Gradient of the critic with respect to its inputs, per sample.
#[derive(Debug, Clone)]
pub struct InputGradient {
    /// `[m, n, n]`.
    pub d: Tensor,
    /// `[m, n, T]`.
    pub t: Tensor,
    /// Euclidean norm over the concatenated `(D, t)` entries of each sample.
    pub norms: Vec<f64>,
}

pub fn critic_input_gradient<C: Critic + ?Sized>(critic: &C, batch: &SampleBatch) -> Result<InputGradient> {
    let mut tape = Tape::new();
    let p = critic.parameters().bind(&mut tape, false);
    let d = tape.leaf(batch.d.clone());
    let t = tape.leaf(batch.t.clone());
    let scores = critic.score(&mut tape, &p, d, t)?;
    let total = tape.sum(scores);
    let grads = tape.backward(total)?;
    let gd = grads.tensor(d);
    let gt = grads.tensor(t);
    let m = batch.len();
    let (pd, pt) = (gd.numel() / m.max(1), gt.numel() / m.max(1));
    let norms: Vec<f64> = (0..m)
        .map(|s| {
            let a: f64 = gd.data()[s * pd..(s + 1) * pd].iter().map(|v| v * v).sum();
            let b: f64 = gt.data()[s * pt..(s + 1) * pt].iter().map(|v| v * v).sum();
            (a + b).sqrt()
        })
        .collect();
    if norms.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite critic input-gradient norm"));
    }
    Ok(InputGradient { d: gd, t: gt, norms })
}

/// Value of `λ · mean_s (‖∇C(x̂_s)‖ - 1)^2`.
pub fn gradient_penalty<C: Critic + ?Sized>(
    critic: &C,
    real: &SampleBatch,
    fake: &SampleBatch,
    alphas: &[f64],
    lambda_gp: f64,
) -> Result<f64> {
    let mixed = interpolate(real, fake, alphas)?;
    let g = critic_input_gradient(critic, &mixed)?;
    Ok(penalty_from_norms(&g.norms, lambda_gp))
}

fn penalty_from_norms(norms: &[f64], lambda_gp: f64) -> f64 {
    if norms.is_empty() {
        return 0.0;
    }
    lambda_gp * norms.iter().map(|g| (g - 1.0).powi(2)).sum::<f64>() / norms.len() as f64
}

/// Inputs `x̂ ± h·u` for every sample, where `u` is the unit input gradient,
/// and the weights turning the critic scores on them into the surrogate
/// whose parameter gradient equals that of the penalty up to `O(h²)`.
///
/// With `u` held fixed, `∂‖g‖/∂θ = ∂(g·u)/∂θ` and `g·u` is the directional
/// derivative of `C` along `u`, which a central difference resolves.
fn penalty_surrogate(
    mixed: &SampleBatch,
    grad: &InputGradient,
    lambda_gp: f64,
) -> Result<(SampleBatch, Vec<f64>)> {
    let m = mixed.len();
    let (pd, pt) = (grad.d.numel() / m, grad.t.numel() / m);
    let mut plus_d = mixed.d.data().to_vec();
    let mut plus_t = mixed.t.data().to_vec();
    let mut minus_d = plus_d.clone();
    let mut minus_t = plus_t.clone();
    let mut weights = vec![0.0; 2 * m];
    for s in 0..m {
        let norm = grad.norms[s];
        if norm == 0.0 {
            continue;
        }
        let step = GP_STEP / norm;
        for i in s * pd..(s + 1) * pd {
            plus_d[i] += step * grad.d.data()[i];
            minus_d[i] -= step * grad.d.data()[i];
        }
        for i in s * pt..(s + 1) * pt {
            plus_t[i] += step * grad.t.data()[i];
            minus_t[i] -= step * grad.t.data()[i];
        }
        let coef = lambda_gp * 2.0 * (norm - 1.0) / m as f64 / (2.0 * GP_STEP);
        weights[s] = coef;
        weights[m + s] = -coef;
    }
    plus_d.extend(minus_d);
    plus_t.extend(minus_t);
    let n = mixed.n();
    let k = mixed.n_types();
    Ok((
        SampleBatch {
            d: Tensor::from_parts(vec![2 * m, n, n], plus_d),
            t: Tensor::from_parts(vec![2 * m, n, k], plus_t),
        },
        weights,
    ))
}

/// Scalar parts of the critic objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticLossParts {
    pub total: f64,
    /// `mean C(real) - mean C(fake)`.
    pub wasserstein: f64,
    pub gp: f64,
    /// `ε_drift · mean C(real)^2`.
    pub drift: f64,
}

fn weighted_sum(tape: &mut Tape, v: Var, w: Vec<f64>) -> Result<Var> {
    let c = tape.constant(Tensor::from_parts(vec![w.len()], w));
    let p = tape.mul(v, c)?;
    Ok(tape.sum(p))
}

fn check_pair(real: &SampleBatch, fake: &SampleBatch) -> Result<usize> {
    if real.d.shape() != fake.d.shape() || real.t.shape() != fake.t.shape() {
        return Err(Error::dim("real and fake batches differ in shape"));
    }
    if real.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    Ok(real.len())
}

/// Critic objective `mean C(fake) - mean C(real) + GP + ε·mean C(real)^2`
/// and, if `with_grads`, its gradient with respect to the critic
/// parameters (penalty part via the central-difference surrogate).
pub fn critic_loss_with_grads<C: Critic + ?Sized>(
    critic: &C,
    real: &SampleBatch,
    fake: &SampleBatch,
    alphas: &[f64],
    weights: &LossWeights,
    with_grads: bool,
) -> Result<(CriticLossParts, Option<ParamGrads>)> {
    let m = check_pair(real, fake)?;
    let mixed = interpolate(real, fake, alphas)?;
    let ig = critic_input_gradient(critic, &mixed)?;
    let gp = penalty_from_norms(&ig.norms, weights.lambda_gp);

    let mut all = SampleBatch::concat(real, fake)?;
    let mut w = Vec::with_capacity(4 * m);
    w.extend(std::iter::repeat_n(-1.0 / m as f64, m));
    w.extend(std::iter::repeat_n(1.0 / m as f64, m));
    if with_grads && weights.lambda_gp > 0.0 {
        let (probe, pw) = penalty_surrogate(&mixed, &ig, weights.lambda_gp)?;
        all = SampleBatch::concat(&all, &probe)?;
        w.extend(pw);
    }

    let mut tape = Tape::new();
    let p = critic.parameters().bind(&mut tape, with_grads);
    let d = tape.constant(all.d);
    let t = tape.constant(all.t);
    let scores = critic.score(&mut tape, &p, d, t)?;
    let vals = tape.value(scores).data().to_vec();
    let mean_real = vals[..m].iter().sum::<f64>() / m as f64;
    let mean_fake = vals[m..2 * m].iter().sum::<f64>() / m as f64;
    let drift = weights.eps_drift * vals[..m].iter().map(|c| c * c).sum::<f64>() / m as f64;
    let parts = CriticLossParts {
        total: mean_fake - mean_real + gp + drift,
        wasserstein: mean_real - mean_fake,
        gp,
        drift,
    };
    if !parts.total.is_finite() {
        return Err(Error::numeric("non-finite critic loss"));
    }
    if !with_grads {
        return Ok((parts, None));
    }

    let linear = weighted_sum(&mut tape, scores, w)?;
    let real_idx: Arc<[usize]> = (0..m).collect();
    let real_scores = tape.gather_flat(scores, real_idx)?;
    let sq = tape.unary(real_scores, Unary::Square);
    let drift_v = tape.mean(sq);
    let drift_v = tape.scale(drift_v, weights.eps_drift);
    let objective = tape.add(linear, drift_v)?;
    let grads = tape.backward(objective)?;
    Ok((parts, Some(ParameterStore::collect_grads(&p, &grads))))
}

pub fn critic_loss<C: Critic + ?Sized>(
    critic: &C,
    real: &SampleBatch,
    fake: &SampleBatch,
    alphas: &[f64],
    weights: &LossWeights,
) -> Result<CriticLossParts> {
    Ok(critic_loss_with_grads(critic, real, fake, alphas, weights, false)?.0)
}

/// Scalar parts of the generator objective. Penalty terms are batch means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorLossParts {
    pub total: f64,
    /// `-mean C(fake)`.
    pub adversarial: f64,
    pub types: f64,
    pub repulsion: f64,
    pub edm: f64,
    pub rank: f64,
}

/// Records the generator objective on `tape` for an already generated
/// batch `vars` and returns the scalar output together with its parts.
pub fn generator_objective<C: Critic + ?Sized>(
    tape: &mut Tape,
    critic: &C,
    critic_trainable: bool,
    vars: &GeneratedVars,
    eigen_map: EigenMap,
    weights: &LossWeights,
    t_ref: &DMatrix<f64>,
) -> Result<(Var, GeneratorLossParts)> {
    let cp = critic.parameters().bind(tape, critic_trainable);
    let scores = critic.score(tape, &cp, vars.d, vars.t)?;
    let adv = tape.mean(scores);
    let adv = tape.scale(adv, -1.0);

    let ty = tape_loss_types(tape, vars.t, t_ref)?;
    let ty = tape.mean(ty);
    let rep = tape_loss_repulsion(tape, vars.d, weights.r()?, weights.k_rep, weights.repulsion)?;
    let rep = tape.mean(rep);
    let edm = tape_loss_edm(tape, vars.d)?;
    let edm = tape.mean(edm);
    let edm_w = tape.scale(edm, weights.eta_edm);

    let mut total = tape.add(adv, ty)?;
    total = tape.add(total, rep)?;
    total = tape.add(total, edm_w)?;
    let mut rank_val = 0.0;
    if matches!(eigen_map, EigenMap::SoftplusAll) {
        let rank = tape_loss_rank(tape, vars.gram, weights.rank_dim)?;
        let rank = tape.mean(rank);
        rank_val = tape.value(rank).item();
        let rank_w = tape.scale(rank, weights.eta_rank);
        total = tape.add(total, rank_w)?;
    }
    let parts = GeneratorLossParts {
        total: tape.value(total).item(),
        adversarial: tape.value(adv).item(),
        types: tape.value(ty).item(),
        repulsion: tape.value(rep).item(),
        edm: tape.value(edm).item(),
        rank: rank_val,
    };
    if !parts.total.is_finite() {
        return Err(Error::numeric("non-finite generator loss"));
    }
    Ok((total, parts))
}

/// Generator objective for noise `z [m, noise_dim]` and, if `with_grads`,
/// its gradient with respect to the generator parameters.
pub fn generator_loss_with_grads<C: Critic + ?Sized>(
    generator: &Generator,
    critic: &C,
    z: &Tensor,
    weights: &LossWeights,
    t_ref: &DMatrix<f64>,
    with_grads: bool,
) -> Result<(GeneratorLossParts, Option<ParamGrads>)> {
    let mut tape = Tape::new();
    let gp = generator.params.bind(&mut tape, with_grads);
    let zv = tape.constant(z.clone());
    let vars = generator.pipeline(&mut tape, &gp, zv)?;
    let (out, parts) = generator_objective(
        &mut tape,
        critic,
        false,
        &vars,
        generator.config.eigen_map,
        weights,
        t_ref,
    )?;
    if !with_grads {
        return Ok((parts, None));
    }
    let grads = tape.backward(out)?;
    Ok((parts, Some(ParameterStore::collect_grads(&gp, &grads))))
}

pub fn generator_loss<C: Critic + ?Sized>(
    generator: &Generator,
    critic: &C,
    z: &Tensor,
    weights: &LossWeights,
    t_ref: &DMatrix<f64>,
) -> Result<GeneratorLossParts> {
    Ok(generator_loss_with_grads(generator, critic, z, weights, t_ref, false)?.0)
}

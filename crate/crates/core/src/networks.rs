//! Generator (noise → symmetric matrix + type logits → EDM) and the
//! message-passing critic.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::diff::{Binding, ParameterStore, Tape, Tensor, Unary, Var};
use crate::edm::{EigenMap, SquaredDistanceMatrix};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;
/// Guard inside square roots of squared distances (Å²).
pub const SQRT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub noise_dim: usize,
    pub n_points: usize,
    pub n_types: usize,
    pub hidden: Vec<usize>,
    pub eigen_map: EigenMap,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            noise_dim: 64,
            n_points: 5,
            n_types: 3,
            hidden: vec![256, 256, 512],
            eigen_map: EigenMap::SoftplusTopD(3),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.n_points < 1 || self.n_types == 0 {
            return Err(Error::Config(
                "generator needs noise_dim, n_points and n_types >= 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn inner_size(&self) -> usize {
        self.n_points - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n_basis: usize,
    /// Width `γ` in Å⁻².
    pub gamma: f64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            r_min: 0.0,
            r_max: 6.0,
            n_basis: 32,
            gamma: 10.0,
        }
    }
}

impl RbfConfig {
    pub fn centers(&self) -> Vec<f64> {
        let step = (self.r_max - self.r_min) / (self.n_basis - 1) as f64;
        (0..self.n_basis)
            .map(|b| self.r_min + step * b as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub feature_dim: usize,
    pub n_interactions: usize,
    pub n_types: usize,
    pub rbf: RbfConfig,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            n_interactions: 3,
            n_types: 3,
            rbf: RbfConfig::default(),
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 || self.n_interactions == 0 || self.n_types == 0 {
            return Err(Error::Config(
                "critic needs feature_dim >= 2, n_interactions >= 1, n_types >= 1".into(),
            ));
        }
        if self.rbf.r_min >= self.rbf.r_max || self.rbf.n_basis < 2 || self.rbf.gamma <= 0.0 {
            return Err(Error::Config(
                "rbf needs r_min < r_max, n_basis >= 2 and gamma > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Squared distance matrix paired with per-point type probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedSample {
    pub d: SquaredDistanceMatrix,
    /// `n x n_types`, rows sum to one.
    pub t: DMatrix<f64>,
}

impl TypedSample {
    pub fn new(d: SquaredDistanceMatrix, t: DMatrix<f64>) -> Result<Self> {
        if t.nrows() != d.n() {
            return Err(Error::dim(format!(
                "{} type rows for {} points",
                t.nrows(),
                d.n()
            )));
        }
        for (i, row) in t.row_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidInput(format!("type row {i} outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("type row {i} does not sum to 1")));
            }
        }
        Ok(Self { d, t })
    }

    /// One-hot rows from type indices.
    pub fn one_hot(d: SquaredDistanceMatrix, types: &[usize], n_types: usize) -> Result<Self> {
        if types.iter().any(|&k| k >= n_types) {
            return Err(Error::InvalidInput("type index out of range".into()));
        }
        let t = DMatrix::from_fn(types.len(), n_types, |i, k| f64::from(u8::from(types[i] == k)));
        Self::new(d, t)
    }

    pub fn n(&self) -> usize {
        self.d.n()
    }

    pub fn n_types(&self) -> usize {
        self.t.ncols()
    }

    /// Most likely type per point.
    pub fn hard_types(&self) -> Vec<usize> {
        self.t
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let t = DMatrix::from_fn(self.n(), self.n_types(), |i, k| self.t[(order[i], k)]);
        Self {
            d: self.d.permuted(order),
            t,
        }
    }
}

/// Stacked samples: `d` is `[m, n, n]`, `t` is `[m, n, n_types]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub d: Tensor,
    pub t: Tensor,
}

impl SampleBatch {
    pub fn from_samples(samples: &[&TypedSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (n, k) = (first.n(), first.n_types());
        let mut d = Vec::with_capacity(samples.len() * n * n);
        let mut t = Vec::with_capacity(samples.len() * n * k);
        for s in samples {
            if s.n() != n || s.n_types() != k {
                return Err(Error::dim("batch samples differ in size"));
            }
            for i in 0..n {
                for j in 0..n {
                    d.push(s.d.get(i, j));
                }
                for c in 0..k {
                    t.push(s.t[(i, c)]);
                }
            }
        }
        let m = samples.len();
        Ok(Self {
            d: Tensor::new(vec![m, n, n], d)?,
            t: Tensor::new(vec![m, n, k], t)?,
        })
    }

    pub fn len(&self) -> usize {
        self.d.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.d.shape()[1]
    }

    pub fn n_types(&self) -> usize {
        self.t.shape()[2]
    }

    pub fn concat(a: &SampleBatch, b: &SampleBatch) -> Result<SampleBatch> {
        Ok(Self {
            d: Tensor::concat(&[&a.d, &b.d])?,
            t: Tensor::concat(&[&a.t, &b.t])?,
        })
    }

    /// Unpacks into samples. Distances are taken from the upper triangle.
    pub fn to_samples(&self) -> Result<Vec<TypedSample>> {
        let (m, n, k) = (self.len(), self.n(), self.n_types());
        let (d, t) = (self.d.data(), self.t.data());
        (0..m)
            .map(|s| {
                let dm = DMatrix::from_fn(n, n, |i, j| d[s * n * n + i * n + j]);
                let tm = DMatrix::from_fn(n, k, |i, c| t[s * n * k + i * k + c]);
                Ok(TypedSample {
                    d: SquaredDistanceMatrix::from_upper(&dm),
                    t: tm,
                })
            })
            .collect()
    }
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

fn ensure_finite(tape: &Tape, v: Var, layer: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite activations in {layer}")))
    }
}

/// Dense trunk with two heads: the raw `(n-1)x(n-1)` matrix and the
/// per-point type logits.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParameterStore,
}

/// Tape variables of a generator pass.
#[derive(Debug, Clone, Copy)]
pub struct GeneratedVars {
    /// Raw matrices `[m, n-1, n-1]`.
    pub raw: Var,
    /// Logits `[m, n, n_types]`.
    pub logits: Var,
    /// PSD inner blocks `[m, n-1, n-1]`.
    pub inner: Var,
    /// Gram matrices `[m, n, n]`.
    pub gram: Var,
    /// Squared distances `[m, n, n]`.
    pub d: Var,
    /// Type probabilities `[m, n, n_types]`.
    pub t: Var,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let mut width = config.noise_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            params.insert(format!("trunk.{i}.weight"), ParameterStore::glorot(rng, width, h))?;
            params.insert(format!("trunk.{i}.bias"), Tensor::zeros(&[h]))?;
            width = h;
        }
        let k = config.inner_size();
        params.insert("matrix_head.weight", ParameterStore::glorot(rng, width, k * k))?;
        params.insert("matrix_head.bias", Tensor::zeros(&[k * k]))?;
        let nt = config.n_points * config.n_types;
        params.insert("type_head.weight", ParameterStore::glorot(rng, width, nt))?;
        params.insert("type_head.bias", Tensor::zeros(&[nt]))?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: GeneratorConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reference = Generator::new(config.clone(), &mut rng)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Version(
                "generator parameters do not match the generator config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    /// `z [m, noise_dim]` → raw matrices `[m, n-1, n-1]` and logits
    /// `[m, n, n_types]`.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, z: Var) -> Result<(Var, Var)> {
        let m = match tape.shape(z) {
            [m, nz] if *nz == self.config.noise_dim => *m,
            s => {
                return Err(Error::dim(format!(
                    "noise shape {s:?}, expected [m, {}]",
                    self.config.noise_dim
                )))
            }
        };
        let mut h = z;
        for i in 0..self.config.hidden.len() {
            let w = p.var(&format!("trunk.{i}.weight"))?;
            let b = p.var(&format!("trunk.{i}.bias"))?;
            let a = dense(tape, h, w, Some(b))?;
            h = tape.unary(a, Unary::LeakyRelu(LEAKY_SLOPE));
        }
        let k = self.config.inner_size();
        let raw = dense(tape, h, p.var("matrix_head.weight")?, Some(p.var("matrix_head.bias")?))?;
        let raw = tape.reshape(raw, &[m, k, k])?;
        let logits = dense(tape, h, p.var("type_head.weight")?, Some(p.var("type_head.bias")?))?;
        let logits = tape.reshape(logits, &[m, self.config.n_points, self.config.n_types])?;
        ensure_finite(tape, raw, "generator matrix head")?;
        ensure_finite(tape, logits, "generator type head")?;
        Ok((raw, logits))
    }

    /// Full chain: raw → symmetric → PSD projection → Gram → EDM, plus
    /// softmax over the type logits.
    pub fn pipeline(&self, tape: &mut Tape, p: &Binding, z: Var) -> Result<GeneratedVars> {
        let (raw, logits) = self.forward(tape, p, z)?;
        let sym = tape.symmetrize(raw)?;
        let inner = tape.spd_project(sym, self.config.eigen_map)?;
        let gram = tape.pad_gram(inner)?;
        let d = tape.edm_from_gram(gram)?;
        let t = tape.softmax_rows(logits)?;
        Ok(GeneratedVars {
            raw,
            logits,
            inner,
            gram,
            d,
            t,
        })
    }

    /// Generates one batch of samples without recording gradients.
    pub fn generate_batch(&self, z: &Tensor) -> Result<SampleBatch> {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let vars = self.pipeline(&mut tape, &binding, zv)?;
        Ok(SampleBatch {
            d: tape.value(vars.d).clone(),
            t: tape.value(vars.t).clone(),
        })
    }

    pub fn generate(&self, z: &Tensor) -> Result<Vec<TypedSample>> {
        self.generate_batch(z)?.to_samples()
    }
}

/// Scalar-valued critic over `(D, t)` batches.
pub trait Critic {
    fn parameters(&self) -> &ParameterStore;

    /// `d [m, n, n]` and `t [m, n, n_types]` → scores `[m]`.
    fn score(&self, tape: &mut Tape, params: &Binding, d: Var, t: Var) -> Result<Var>;

    /// Scores without recording gradients.
    fn evaluate(&self, batch: &SampleBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let binding = self.parameters().bind(&mut tape, false);
        let d = tape.constant(batch.d.clone());
        let t = tape.constant(batch.t.clone());
        let s = self.score(&mut tape, &binding, d, t)?;
        Ok(tape.value(s).data().to_vec())
    }
}

/// Gaussian expansion of pairwise distances: `[n, n] → [n, n, n_basis]`
/// with centres spread uniformly over `[r_min, r_max]`.
pub fn rbf_expand(distances: &DMatrix<f64>, config: &RbfConfig) -> Tensor {
    let (n, c) = (distances.nrows(), distances.ncols());
    let centers = config.centers();
    let mut out = Vec::with_capacity(n * c * centers.len());
    for i in 0..n {
        for j in 0..c {
            let r = distances[(i, j)];
            out.extend(centers.iter().map(|ck| (-config.gamma * (r - ck) * (r - ck)).exp()));
        }
    }
    Tensor::from_parts(vec![n, c, centers.len()], out)
}

/// Index tables describing the pairs of a batch of `m` structures with `n`
/// points each.
struct PairLayout {
    /// Flat indices of `(i, j)` and `(j, i)` for every unordered pair `i < j`.
    upper: Arc<[usize]>,
    lower: Arc<[usize]>,
    /// For each ordered pair `i != j`: unordered pair id, receiving atom,
    /// sending atom (global atom ids).
    unordered_of: Arc<[usize]>,
    dst: Arc<[usize]>,
    src: Arc<[usize]>,
    sample_of_atom: Arc<[usize]>,
}

impl PairLayout {
    fn new(m: usize, n: usize) -> Self {
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let mut pair_id = vec![0usize; n * n];
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                pair_id[i * n + j] = count;
                pair_id[j * n + i] = count;
                count += 1;
            }
        }
        let mut unordered_of = Vec::new();
        let mut dst = Vec::new();
        let mut src = Vec::new();
        for s in 0..m {
            for i in 0..n {
                for j in (i + 1)..n {
                    upper.push(s * n * n + i * n + j);
                    lower.push(s * n * n + j * n + i);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        unordered_of.push(s * count + pair_id[i * n + j]);
                        dst.push(s * n + i);
                        src.push(s * n + j);
                    }
                }
            }
        }
        let sample_of_atom: Vec<usize> = (0..m * n).map(|a| a / n.max(1)).collect();
        Self {
            upper: upper.into(),
            lower: lower.into(),
            unordered_of: unordered_of.into(),
            dst: dst.into(),
            src: src.into(),
            sample_of_atom: sample_of_atom.into(),
        }
    }
}

/// Continuous-filter message-passing critic.
///
/// Atoms start from `t · E` (a convex combination of type embeddings for
/// soft types). Each interaction block builds a filter from the Gaussian
/// expansion of the pair distance, multiplies it into the transformed
/// neighbour features, sums over neighbours and adds the result back.
/// Per-atom readouts are summed, so the output depends only on distances
/// and is invariant under simultaneous permutation of points and types.
#[derive(Debug, Clone)]
pub struct SchNetCritic {
    pub config: CriticConfig,
    pub params: ParameterStore,
    centers: Arc<[f64]>,
}

impl SchNetCritic {
    pub fn new<R: Rng + ?Sized>(config: CriticConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let f = config.feature_dim;
        let b = config.rbf.n_basis;
        let mut p = ParameterStore::new();
        p.insert("embedding", ParameterStore::glorot(rng, config.n_types, f))?;
        for k in 0..config.n_interactions {
            let pre = format!("interaction.{k}");
            p.insert(format!("{pre}.filter1.weight"), ParameterStore::glorot(rng, b, f))?;
            p.insert(format!("{pre}.filter1.bias"), Tensor::zeros(&[f]))?;
            p.insert(format!("{pre}.filter2.weight"), ParameterStore::glorot(rng, f, f))?;
            p.insert(format!("{pre}.filter2.bias"), Tensor::zeros(&[f]))?;
            p.insert(format!("{pre}.in2f.weight"), ParameterStore::glorot(rng, f, f))?;
            p.insert(format!("{pre}.out1.weight"), ParameterStore::glorot(rng, f, f))?;
            p.insert(format!("{pre}.out2.weight"), ParameterStore::glorot(rng, f, f))?;
        }
        let half = f / 2;
        p.insert("readout1.weight", ParameterStore::glorot(rng, f, half))?;
        p.insert("readout1.bias", Tensor::zeros(&[half]))?;
        p.insert("readout2.weight", ParameterStore::glorot(rng, half, 1))?;
        p.insert("readout2.bias", Tensor::zeros(&[1]))?;
        let centers = config.rbf.centers().into();
        Ok(Self {
            config,
            params: p,
            centers,
        })
    }

    pub fn from_parts(config: CriticConfig, params: ParameterStore) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reference = SchNetCritic::new(config.clone(), &mut rng)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Version(
                "critic parameters do not match the critic config".into(),
            ));
        }
        Ok(Self {
            params,
            ..reference
        })
    }

    /// Value of the critic on a single sample.
    pub fn forward_one(&self, sample: &TypedSample) -> Result<f64> {
        let batch = SampleBatch::from_samples(&[sample])?;
        Ok(self.evaluate(&batch)?[0])
    }
}

impl Critic for SchNetCritic {
    fn parameters(&self) -> &ParameterStore {
        &self.params
    }

    fn score(&self, tape: &mut Tape, p: &Binding, d: Var, t: Var) -> Result<Var> {
        let (m, n) = match tape.shape(d) {
            [m, a, b] if a == b => (*m, *a),
            s => return Err(Error::dim(format!("critic distance input {s:?}"))),
        };
        let nt = self.config.n_types;
        if tape.shape(t) != [m, n, nt] {
            return Err(Error::dim(format!(
                "critic type input {:?}, expected [{m}, {n}, {nt}]",
                tape.shape(t)
            )));
        }
        let layout = PairLayout::new(m, n);
        let atoms = m * n;

        let flat = tape.reshape(d, &[m * n * n])?;
        let du = tape.gather_flat(flat, layout.upper.clone())?;
        let dl = tape.gather_flat(flat, layout.lower.clone())?;
        let dsum = tape.add(du, dl)?;
        let dsym = tape.scale(dsum, 0.5);
        let r = tape.unary(dsym, Unary::SafeSqrt(SQRT_EPS));
        let expansion = tape.rbf(r, self.centers.clone(), self.config.rbf.gamma)?;

        let types = tape.reshape(t, &[atoms, nt])?;
        let mut x = tape.matmul(types, p.var("embedding")?)?;

        for k in 0..self.config.n_interactions {
            let pre = format!("interaction.{k}");
            let w = |name: &str| p.var(&format!("{pre}.{name}"));
            let h = dense(tape, expansion, w("filter1.weight")?, Some(w("filter1.bias")?))?;
            let h = tape.unary(h, Unary::ShiftedSoftplus);
            let filt = dense(tape, h, w("filter2.weight")?, Some(w("filter2.bias")?))?;
            let filt = tape.gather_rows(filt, layout.unordered_of.clone())?;

            let y = tape.matmul(x, w("in2f.weight")?)?;
            let yj = tape.gather_rows(y, layout.src.clone())?;
            let msg = tape.mul(yj, filt)?;
            let agg = tape.scatter_rows(msg, layout.dst.clone(), atoms)?;

            let v = tape.matmul(agg, w("out1.weight")?)?;
            let v = tape.unary(v, Unary::ShiftedSoftplus);
            let v = tape.matmul(v, w("out2.weight")?)?;
            x = tape.add(x, v)?;
            ensure_finite(tape, x, &format!("interaction block {k}"))?;
        }

        let o = dense(tape, x, p.var("readout1.weight")?, Some(p.var("readout1.bias")?))?;
        let o = tape.unary(o, Unary::ShiftedSoftplus);
        let o = dense(tape, o, p.var("readout2.weight")?, Some(p.var("readout2.bias")?))?;
        ensure_finite(tape, o, "readout")?;
        let pooled = tape.scatter_rows(o, layout.sample_of_atom.clone(), m)?;
        tape.reshape(pooled, &[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::{edm_from_points, is_edm};
    use crate::linalg::DEFAULT_TOL;
    use crate::structure::PointSet;
    use rand_chacha::ChaCha8Rng;

    fn small_gen() -> GeneratorConfig {
        GeneratorConfig {
            noise_dim: 4,
            n_points: 5,
            n_types: 3,
            hidden: vec![8, 8],
            eigen_map: EigenMap::SoftplusTopD(3),
        }
    }

    fn small_critic() -> CriticConfig {
        CriticConfig {
            feature_dim: 8,
            n_interactions: 2,
            n_types: 3,
            rbf: RbfConfig {
                n_basis: 6,
                ..RbfConfig::default()
            },
        }
    }

    #[test]
    fn zero_noise_at_init_gives_uniform_types() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::new(GeneratorConfig::default(), &mut rng).unwrap();
        let z = Tensor::zeros(&[3, 64]);
        let mut tape = Tape::new();
        let b = g.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let (_, logits) = g.forward(&mut tape, &b, zv).unwrap();
        assert!(tape.value(logits).data().iter().all(|v| v.abs() < 5.0));
        let samples = g.generate(&z).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0], samples[1]);
        for s in &samples {
            for row in s.t.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generated_samples_are_edms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::new(small_gen(), &mut rng).unwrap();
        let z = Tensor::new(vec![4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        for s in g.generate(&z).unwrap() {
            assert!(is_edm(&s.d, DEFAULT_TOL).unwrap().is_edm);
        }
    }

    #[test]
    fn noise_shape_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::new(small_gen(), &mut rng).unwrap();
        assert!(matches!(g.generate(&Tensor::zeros(&[2, 5])), Err(Error::Dimension(_))));
    }

    #[test]
    fn rbf_peak_and_decay() {
        let cfg = RbfConfig::default();
        let centers = cfg.centers();
        let d = DMatrix::from_row_slice(1, 2, &[centers[5], cfg.r_max + 5.0 / cfg.gamma.sqrt() + 0.1]);
        let e = rbf_expand(&d, &cfg);
        assert_eq!(e.shape(), &[1, 2, 32]);
        assert!((e.data()[5] - 1.0).abs() < 1e-15);
        assert!(e.data()[32..].iter().all(|&v| v < 1e-5));
    }

    #[test]
    fn single_atom_critic_is_readout_of_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = SchNetCritic::new(small_critic(), &mut rng).unwrap();
        // Nonzero biases so that the check is not trivially zero.
        for (name, t) in c.params.iter_mut() {
            if name.ends_with("bias") {
                t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * (i as f64 + 1.0));
            }
        }
        let d = SquaredDistanceMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let s = TypedSample::one_hot(d, &[1], 3).unwrap();
        let got = c.forward_one(&s).unwrap();

        let mut tape = Tape::new();
        let p = c.params.bind(&mut tape, false);
        let onehot = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let x = tape.matmul(onehot, p.var("embedding").unwrap()).unwrap();
        let o = dense(&mut tape, x, p.var("readout1.weight").unwrap(), Some(p.var("readout1.bias").unwrap())).unwrap();
        let o = tape.unary(o, Unary::ShiftedSoftplus);
        let o = dense(&mut tape, o, p.var("readout2.weight").unwrap(), Some(p.var("readout2.bias").unwrap())).unwrap();
        assert!((tape.value(o).item() - got).abs() < 1e-14);
    }

    #[test]
    fn batch_members_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = SchNetCritic::new(small_critic(), &mut rng).unwrap();
        let p = PointSet::generic(DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.1, 0.0, 0.0, 0.0, 1.3, 0.2])).unwrap();
        let s = TypedSample::one_hot(edm_from_points(&p), &[0, 1, 2], 3).unwrap();
        let single = c.forward_one(&s).unwrap();
        let batch = SampleBatch::from_samples(&[&s, &s]).unwrap();
        let both = c.evaluate(&batch).unwrap();
        assert_eq!(both[0], single);
        assert_eq!(both[1], single);
    }

    #[test]
    fn typed_sample_validation() {
        let d = SquaredDistanceMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        assert!(TypedSample::new(d.clone(), DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.7, 0.7])).is_err());
        assert!(TypedSample::new(d.clone(), DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).is_err());
        assert!(TypedSample::one_hot(d, &[0, 3], 3).is_err());
    }

    #[test]
    fn checkpoint_layout_mismatch_is_a_version_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = Generator::new(small_gen(), &mut rng).unwrap();
        let mut other = small_gen();
        other.hidden = vec![8];
        assert!(matches!(Generator::from_parts(other, g.params.clone()), Err(Error::Version(_))));
        assert!(Generator::from_parts(small_gen(), g.params).is_ok());
    }
}

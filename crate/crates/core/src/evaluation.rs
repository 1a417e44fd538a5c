//! Post-hoc analysis of generated structures: atom assignment, rigid
//! superposition, conformer uniqueness, bond-based validity and pairwise
//! distance histograms.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Formula;
use crate::edm::{edm_from_points, embed, SquaredDistanceMatrix};
use crate::error::{Error, Result};
use crate::networks::TypedSample;
use crate::structure::{Element, PointSet};

/// Default conformer cutoff (Å) on the largest heavy-atom deviation.
pub const DEFAULT_CUTOFF: f64 = 0.6;

/// Assignment cost between atoms of two structures; `+∞` marks forbidden
/// pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentCost(pub DMatrix<f64>);

/// `C_ij = |mean_k D1_ik - mean_k D2_jk|` for atoms of equal type, `+∞`
/// otherwise.
pub fn assignment_cost<T: PartialEq>(
    d1: &SquaredDistanceMatrix,
    t1: &[T],
    d2: &SquaredDistanceMatrix,
    t2: &[T],
) -> Result<AssignmentCost> {
    let n = d1.n();
    if d2.n() != n || t1.len() != n || t2.len() != n {
        return Err(Error::dim("assignment needs equally sized structures"));
    }
    let (m1, m2) = (d1.row_means(), d2.row_means());
    let c = DMatrix::from_fn(n, n, |i, j| {
        if t1[i] == t2[j] {
            (m1[i] - m2[j]).abs()
        } else {
            f64::INFINITY
        }
    });
    let mut feasible = true;
    for i in 0..n {
        let a = t1.iter().filter(|t| **t == t1[i]).count();
        let b = t2.iter().filter(|t| **t == t1[i]).count();
        feasible &= a == b;
    }
    if !feasible {
        return Err(Error::Infeasible("type multisets differ".into()));
    }
    Ok(AssignmentCost(c))
}

/// Permutation `σ` (row `i` assigned to column `σ[i]`) minimising
/// `Σ C[i][σ(i)]`, and that cost summed in row order.
pub fn hungarian(cost: &AssignmentCost) -> Result<(Vec<usize>, f64)> {
    let a = &cost.0;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim("assignment cost must be square"));
    }
    if a.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::InvalidInput("cost entries must be finite or +inf".into()));
    }
    let inf = f64::INFINITY;
    // Potentials over 1-based rows/columns; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::Infeasible("no finite-cost perfect matching".into()));
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=n {
        sigma[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| a[(i, sigma[i])]).sum();
    Ok((sigma, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Orthogonal transforms including reflections.
    #[default]
    AllowImproper,
    ProperOnly,
}

/// Rigid transform taking the first point set onto the second:
/// `y_i ≈ R x_i + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Superposition {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    /// `|R x_i + t - y_i|` per atom (Å).
    pub deviations: Vec<f64>,
    pub rmsd: f64,
}

/// Least-squares rigid superposition of `p1` onto `p2` (rows in
/// correspondence), via the SVD of the cross-covariance.
pub fn superpose(p1: &PointSet, p2: &PointSet, mode: RotationMode) -> Result<Superposition> {
    let n = p1.len();
    if p2.len() != n || p1.dim() != p2.dim() {
        return Err(Error::dim("superposition needs equally shaped point sets"));
    }
    let d = p1.dim();
    if n == 0 {
        return Ok(Superposition {
            rotation: DMatrix::identity(d, d),
            translation: DVector::zeros(d),
            deviations: vec![],
            rmsd: 0.0,
        });
    }
    let c1 = p1.coords.row_mean();
    let c2 = p2.coords.row_mean();
    let mut x = p1.coords.clone();
    let mut y = p2.coords.clone();
    for mut r in x.row_iter_mut() {
        r -= &c1;
    }
    for mut r in y.row_iter_mut() {
        r -= &c2;
    }
    let h = x.transpose() * &y;
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::numeric("SVD failed"))?;
    let mut v = svd
        .v_t
        .ok_or_else(|| Error::numeric("SVD failed"))?
        .transpose();
    let mut rot = &v * u.transpose();
    if mode == RotationMode::ProperOnly && rot.determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        v.column_mut(smallest).neg_mut();
        rot = &v * u.transpose();
    }
    let translation = c2.transpose() - &rot * c1.transpose();
    let mut deviations = Vec::with_capacity(n);
    for i in 0..n {
        let xi = p1.coords.row(i).transpose();
        let yi = p2.coords.row(i).transpose();
        deviations.push((&rot * xi + &translation - yi).norm());
    }
    let rmsd = (deviations.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(Superposition {
        rotation: rot,
        translation,
        deviations,
        rmsd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Atom `i` of the first structure corresponds to atom `σ[i]` of the
    /// second.
    pub permutation: Vec<usize>,
    pub max_heavy_deviation: f64,
    pub distinct: bool,
}

/// Assigns atoms by mean squared distance within each element, superposes
/// and reports the largest deviation over non-hydrogen atoms.
pub fn match_structures(
    s1: &PointSet,
    s2: &PointSet,
    cutoff: f64,
    mode: RotationMode,
) -> Result<MatchResult> {
    let a = s1.to_3d();
    let b = s2.to_3d();
    let p1 = PointSet::new(a, s1.elements.clone())?;
    let p2 = PointSet::new(b, s2.elements.clone())?;
    let cost = assignment_cost(
        &edm_from_points(&p1),
        &p1.elements,
        &edm_from_points(&p2),
        &p2.elements,
    )?;
    let (sigma, _) = hungarian(&cost)?;
    let sup = superpose(&p1, &p2.permuted(&sigma), mode)?;
    let max_heavy_deviation = sup
        .deviations
        .iter()
        .zip(&p1.elements)
        .filter(|(_, e)| e.is_heavy())
        .map(|(d, _)| *d)
        .fold(0.0, f64::max);
    Ok(MatchResult {
        permutation: sigma,
        max_heavy_deviation,
        distinct: max_heavy_deviation > cutoff,
    })
}

/// Generated sample → 3D structure: embedding of `D` and the most likely
/// element per point (`vocab[k]` names type `k`).
pub fn sample_to_structure(sample: &TypedSample, vocab: &[Element]) -> Result<PointSet> {
    if vocab.len() != sample.n_types() {
        return Err(Error::dim(format!(
            "{} type names for {} types",
            vocab.len(),
            sample.n_types()
        )));
    }
    let p = embed(&sample.d, 3)?;
    let elements = sample.hard_types().into_iter().map(|k| vocab[k]).collect();
    PointSet::new(p.coords, elements)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    KnownA,
    KnownB,
    Novel,
    Duplicate,
}

/// Cumulative unique counts after each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UniquenessRow {
    pub sample_index: usize,
    pub known_a: usize,
    pub known_b: usize,
    pub novel: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Uniqueness {
    pub categories: Vec<Category>,
    pub curve: Vec<UniquenessRow>,
}

impl Uniqueness {
    pub fn totals(&self) -> UniquenessRow {
        self.curve.last().copied().unwrap_or_default()
    }
}

fn matches_any(s: &PointSet, pool: &[PointSet], cutoff: f64, mode: RotationMode) -> Result<bool> {
    for r in pool {
        if Formula::of(&s.elements) != Formula::of(&r.elements) {
            continue;
        }
        if !match_structures(s, r, cutoff, mode)?.distinct {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Greedy streaming count. A sample matching an earlier accepted sample is
/// a duplicate; otherwise it is known-in-A, known-in-B (first match wins)
/// or novel, and becomes an accepted sample.
pub fn uniqueness_count(
    samples: &[PointSet],
    set_a: &[PointSet],
    set_b: &[PointSet],
    cutoff: f64,
    mode: RotationMode,
) -> Result<Uniqueness> {
    let mut accepted: Vec<PointSet> = Vec::new();
    let mut out = Uniqueness::default();
    let mut row = UniquenessRow::default();
    for (k, s) in samples.iter().enumerate() {
        let cat = if matches_any(s, &accepted, cutoff, mode)? {
            Category::Duplicate
        } else if matches_any(s, set_a, cutoff, mode)? {
            Category::KnownA
        } else if matches_any(s, set_b, cutoff, mode)? {
            Category::KnownB
        } else {
            Category::Novel
        };
        match cat {
            Category::KnownA => row.known_a += 1,
            Category::KnownB => row.known_b += 1,
            Category::Novel => row.novel += 1,
            Category::Duplicate => {}
        }
        if cat != Category::Duplicate {
            accepted.push(s.clone());
        }
        row.sample_index = k;
        out.categories.push(cat);
        out.curve.push(row);
    }
    Ok(out)
}

pub fn format_uniqueness_csv(u: &Uniqueness) -> String {
    let mut s = String::from("sample_index,known_A,known_B,novel\n");
    for r in &u.curve {
        s.push_str(&format!("{},{},{},{}\n", r.sample_index, r.known_a, r.known_b, r.novel));
    }
    s
}

/// Covalent radius (Å) and valence used for bond inference.
pub fn covalent_radius(e: Element) -> Result<(f64, usize)> {
    match e {
        Element::C => Ok((0.76, 4)),
        Element::O => Ok((0.66, 2)),
        Element::H => Ok((0.31, 1)),
        Element::X => Err(Error::UnsupportedElement("X".into())),
    }
}

pub const BOND_FACTOR: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InvalidReason {
    Valence { atom: usize, element: Element, bonds: usize, expected: usize },
    Disconnected { components: usize },
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::Valence { atom, element, bonds, expected } => {
                write!(f, "atom {atom} ({element}) has {bonds} bonds, expected {expected}")
            }
            InvalidReason::Disconnected { components } => {
                write!(f, "disconnected ({components} fragments)")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub valid: bool,
    pub reasons: Vec<InvalidReason>,
}

/// Bonds wherever the distance is below `BOND_FACTOR` times the sum of
/// covalent radii; valid iff every atom has exactly its valence in bonds
/// and the bond graph is connected.
pub fn validity_check(p: &PointSet) -> Result<Validity> {
    let n = p.len();
    let props = p
        .elements
        .iter()
        .map(|&e| covalent_radius(e))
        .collect::<Result<Vec<_>>>()?;
    let coords = p.to_3d();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (coords.row(i) - coords.row(j)).norm();
            if d < BOND_FACTOR * (props[i].0 + props[j].0) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let mut reasons = Vec::new();
    for i in 0..n {
        if adj[i].len() != props[i].1 {
            reasons.push(InvalidReason::Valence {
                atom: i,
                element: p.elements[i],
                bonds: adj[i].len(),
                expected: props[i].1,
            });
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut components = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([s]);
        comp[s] = components;
        while let Some(a) = queue.pop_front() {
            for &b in &adj[a] {
                if comp[b] == usize::MAX {
                    comp[b] = components;
                    queue.push_back(b);
                }
            }
        }
        components += 1;
    }
    if components > 1 {
        reasons.push(InvalidReason::Disconnected { components });
    }
    Ok(Validity {
        valid: reasons.is_empty(),
        reasons,
    })
}

/// Unordered element pair, stored in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypePair(Element, Element);

impl TypePair {
    pub fn new(a: Element, b: Element) -> Self {
        if a <= b {
            TypePair(a, b)
        } else {
            TypePair(b, a)
        }
    }

    /// The six pairs of C, O and H.
    pub fn all_cho() -> Vec<TypePair> {
        use Element::*;
        vec![
            TypePair(C, C),
            TypePair(C, O),
            TypePair(C, H),
            TypePair(O, O),
            TypePair(O, H),
            TypePair(H, H),
        ]
    }

    pub fn contains(&self, a: Element, b: Element) -> bool {
        *self == TypePair::new(a, b)
    }
}

impl fmt::Display for TypePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0, self.1)
    }
}

/// Binning on `[lo, hi)`; values outside fall into the edge bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for Binning {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 10.0,
            bins: 100,
        }
    }
}

impl Binning {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    fn index(&self, x: f64) -> usize {
        let k = ((x - self.lo) / self.width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins - 1)
        }
    }
}

/// Normalised histogram: `masses` sum to one unless `count` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub binning: Binning,
    pub masses: Vec<f64>,
    pub count: usize,
}

impl Histogram {
    pub fn from_values(values: &[f64], binning: Binning) -> Result<Self> {
        if binning.bins == 0 || binning.hi.partial_cmp(&binning.lo) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidInput("histogram needs bins > 0 and hi > lo".into()));
        }
        let mut masses = vec![0.0; binning.bins];
        for &x in values {
            masses[binning.index(x)] += 1.0;
        }
        let count = values.len();
        if count > 0 {
            masses.iter_mut().for_each(|m| *m /= count as f64);
        }
        Ok(Self {
            binning,
            masses,
            count,
        })
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.binning.lo + (k as f64 + 0.5) * self.binning.width()
    }

    pub fn to_csv(&self) -> String {
        let w = self.binning.width();
        let mut s = String::from("bin_center,density\n");
        for (k, m) in self.masses.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.bin_center(k), m / w));
        }
        s
    }
}

/// Pair distances of unordered atom pairs, optionally restricted to one
/// element pair.
pub fn pair_distances(structures: &[PointSet], pair: Option<TypePair>) -> Vec<f64> {
    let mut out = Vec::new();
    for p in structures {
        let c = &p.coords;
        for i in 0..p.len() {
            for j in (i + 1)..p.len() {
                if pair.is_none_or(|tp| tp.contains(p.elements[i], p.elements[j])) {
                    out.push((c.row(i) - c.row(j)).norm());
                }
            }
        }
    }
    out
}

pub fn distance_histogram(
    structures: &[PointSet],
    pair: Option<TypePair>,
    binning: Binning,
) -> Result<Histogram> {
    Histogram::from_values(&pair_distances(structures, pair), binning)
}

/// 1-Wasserstein distance between two histograms on the same binning:
/// `Σ |cumulative difference| · bin width`.
pub fn histogram_distance(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.binning != h2.binning {
        return Err(Error::InvalidInput("histograms use different binnings".into()));
    }
    let w = h1.binning.width();
    let mut cum = 0.0;
    let mut total = 0.0;
    for (a, b) in h1.masses.iter().zip(&h2.masses) {
        cum += a - b;
        total += cum.abs() * w;
    }
    Ok(total)
}

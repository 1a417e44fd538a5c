//! Datasets of same-formula structures: ingestion, filtering, splitting and
//! a synthetic two-template set for quick experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, UnitQuaternion, Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::edm::edm_from_points;
use crate::error::{Error, Result};
use crate::io::{format_xyz, read_xyz};
use crate::networks::TypedSample;
use crate::structure::{Element, PointSet};

/// Element multiset, e.g. `C7O2H10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Formula(BTreeMap<Element, usize>);

impl Formula {
    pub fn of(elements: &[Element]) -> Self {
        let mut m = BTreeMap::new();
        for &e in elements {
            *m.entry(e).or_insert(0) += 1;
        }
        Formula(m)
    }

    pub fn atom_count(&self) -> usize {
        self.0.values().sum()
    }

    pub fn count(&self, e: Element) -> usize {
        self.0.get(&e).copied().unwrap_or(0)
    }

    /// Distinct elements in canonical order (C, O, H, X).
    pub fn elements(&self) -> Vec<Element> {
        self.0.keys().copied().collect()
    }

    /// Element of every atom in canonical order.
    pub fn canonical_sequence(&self) -> Vec<Element> {
        self.0
            .iter()
            .flat_map(|(&e, &c)| std::iter::repeat_n(e, c))
            .collect()
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (e, c) in &self.0 {
            if *c == 1 {
                write!(f, "{e}")?;
            } else {
                write!(f, "{e}{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = BTreeMap::new();
        let chars: Vec<char> = s.trim().chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let mut sym = chars[i].to_string();
            i += 1;
            while i < chars.len() && chars[i].is_ascii_lowercase() {
                sym.push(chars[i]);
                i += 1;
            }
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let count = if start == i {
                1
            } else {
                chars[start..i]
                    .iter()
                    .collect::<String>()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidInput(format!("formula {s:?}: {e}")))?
            };
            let e: Element = sym.parse()?;
            *m.entry(e).or_insert(0) += count;
        }
        if m.is_empty() {
            return Err(Error::InvalidInput("empty formula".into()));
        }
        Ok(Formula(m))
    }
}

impl Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Stable reordering of the atoms into canonical element order.
pub fn canonical_order(p: &PointSet) -> PointSet {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by_key(|&i| p.elements[i]);
    p.permuted(&order)
}

/// Smallest pairwise distance over all structures, `None` if no structure
/// has two atoms.
pub fn min_pairwise_distance(structures: &[PointSet]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for p in structures {
        for i in 0..p.len() {
            for j in (i + 1)..p.len() {
                let d2: f64 = (0..p.dim())
                    .map(|k| (p.coords[(i, k)] - p.coords[(j, k)]).powi(2))
                    .sum();
                let d = d2.sqrt();
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
    }
    best
}

/// Structures sharing one formula, atoms in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub structures: Vec<PointSet>,
    pub formula: Formula,
    /// Smallest pairwise distance (Å); `None` for an empty dataset.
    pub r_min: Option<f64>,
}

impl Dataset {
    pub fn new(structures: Vec<PointSet>, formula: Formula) -> Result<Self> {
        let seq = formula.canonical_sequence();
        let structures: Vec<PointSet> = structures.iter().map(canonical_order).collect();
        for (k, p) in structures.iter().enumerate() {
            if p.elements != seq {
                return Err(Error::InvalidInput(format!(
                    "structure {k} has formula {}, expected {formula}",
                    Formula::of(&p.elements)
                )));
            }
        }
        let r_min = min_pairwise_distance(&structures);
        if r_min == Some(0.0) {
            return Err(Error::InvalidInput("dataset contains coincident atoms".into()));
        }
        Ok(Self {
            structures,
            formula,
            r_min,
        })
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.formula.atom_count()
    }

    /// Type vocabulary: distinct elements in canonical order.
    pub fn types(&self) -> Vec<Element> {
        self.formula.elements()
    }

    /// One-hot type rows of the canonical atom order.
    pub fn reference_types(&self) -> DMatrix<f64> {
        let vocab = self.types();
        let seq = self.formula.canonical_sequence();
        DMatrix::from_fn(seq.len(), vocab.len(), |i, k| {
            f64::from(u8::from(seq[i] == vocab[k]))
        })
    }

    pub fn typed_samples(&self) -> Result<Vec<TypedSample>> {
        let t = self.reference_types();
        self.structures
            .iter()
            .map(|p| TypedSample::new(edm_from_points(p), t.clone()))
            .collect()
    }
}

/// Keeps the structures whose element multiset equals `formula`.
pub fn filter_formula(collection: &[PointSet], formula: &Formula) -> Result<Dataset> {
    let kept: Vec<PointSet> = collection
        .iter()
        .filter(|p| &Formula::of(&p.elements) == formula)
        .cloned()
        .collect();
    Dataset::new(kept, formula.clone())
}

/// Seeded shuffle, then the first `floor(fraction · N)` structures form the
/// training part.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * dataset.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| {
        let s: Vec<PointSet> = idx.iter().map(|&i| dataset.structures[i].clone()).collect();
        Dataset::new(s, dataset.formula.clone())
    };
    Ok((pick(&order[..n_train])?, pick(&order[n_train..])?))
}

/// Reads every `*.xyz` file of a directory in file-name order. Files with
/// elements outside the supported set are skipped and returned separately.
pub fn load_xyz_dir(dir: &Path) -> Result<(Vec<PointSet>, Vec<PathBuf>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xyz")))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    let mut skipped = Vec::new();
    for p in paths {
        match read_xyz(&p) {
            Ok(s) => out.push(s),
            Err(Error::UnsupportedElement(e)) => {
                log::debug!("skipping {} (element {e})", p.display());
                skipped.push(p);
            }
            Err(Error::Parse { line, message }) => {
                return Err(Error::Parse {
                    line,
                    message: format!("{}: {message}", p.display()),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Writes `prefix_000000.xyz`, ... into `dir` (created if missing).
pub fn write_xyz_dir(dir: &Path, structures: &[PointSet], prefix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let width = structures.len().max(1).to_string().len().max(6);
    structures
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let path = dir.join(format!("{prefix}_{k:0width$}.xyz"));
            fs::write(&path, format_xyz(p, &format!("{prefix} {k}")))?;
            Ok(path)
        })
        .collect()
}

/// Summary of a prepared train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub source: PathBuf,
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub formula: Formula,
    pub r_min: f64,
    pub split_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub template_count: usize,
    pub n_points: usize,
    /// Per-coordinate Gaussian noise (Å).
    pub noise: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            template_count: 2,
            n_points: 5,
            noise: 0.05,
            size: 4096,
            seed: 0,
        }
    }
}

const EDGE: f64 = 1.5;

/// Element labels used by the synthetic templates: carbons, then one
/// oxygen, then one hydrogen (fewer points drop the tail).
fn synthetic_elements(n: usize) -> Vec<Element> {
    (0..n)
        .map(|i| match n - i {
            1 if n >= 2 => Element::H,
            2 if n >= 3 => Element::O,
            _ => Element::C,
        })
        .collect()
}

fn rows(r: &[[f64; 3]]) -> DMatrix<f64> {
    DMatrix::from_fn(r.len(), 3, |i, j| r[i][j])
}

fn centered(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let c = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &c;
    }
    m
}

/// Noise-free templates. Five points get a trigonal bipyramid (carbons on
/// the equator) and a square pyramid, four points a tetrahedron and a square, all with
/// 1.5 Å edges; other sizes (or extra templates) use random clouds with
/// pairwise distances of at least 1 Å.
pub fn synthetic_templates(count: usize, n: usize, seed: u64) -> Result<Vec<PointSet>> {
    if n < 2 {
        return Err(Error::InvalidInput("synthetic structures need n >= 2".into()));
    }
    let mut builtin: Vec<DMatrix<f64>> = Vec::new();
    if n == 5 {
        let rc = EDGE / 3f64.sqrt();
        let h = (EDGE * EDGE - rc * rc).sqrt();
        let tri: Vec<[f64; 3]> = (0..3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                [rc * a.cos(), rc * a.sin(), 0.0]
            })
            .collect();
        builtin.push(rows(&[tri[0], tri[1], tri[2], [0.0, 0.0, h], [0.0, 0.0, -h]]));
        let s = EDGE / 2.0;
        let apex = (EDGE * EDGE - 2.0 * s * s).sqrt();
        // Carbons on two opposite base corners and the apex, so atoms of one
        // element are either mirror images or differ in their mean distance.
        builtin.push(rows(&[[s, s, 0.0], [-s, -s, 0.0], [0.0, 0.0, apex], [-s, s, 0.0], [s, -s, 0.0]]));
    } else if n == 4 {
        let a = EDGE / (2.0 * 2f64.sqrt());
        builtin.push(rows(&[[a, a, a], [a, -a, -a], [-a, a, -a], [-a, -a, a]]));
        let s = EDGE / 2.0;
        builtin.push(rows(&[[s, s, 0.0], [-s, s, 0.0], [-s, -s, 0.0], [s, -s, 0.0]]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e3a_91c5_d2b4_0f68);
    let radius = 0.9 * (n as f64).cbrt();
    let elements = synthetic_elements(n);
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let coords = match builtin.get(t) {
            Some(m) => m.clone(),
            None => random_cloud(&mut rng, n, radius)?,
        };
        out.push(PointSet::new(centered(coords), elements.clone())?);
    }
    Ok(out)
}

fn random_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Result<DMatrix<f64>> {
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut tries = 0usize;
    while pts.len() < n {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::numeric("could not place a random template"));
        }
        let p = [
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        ];
        let ok = pts.iter().all(|q| {
            let d2: f64 = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum();
            d2 >= 1.0
        });
        if ok {
            pts.push(p);
        }
    }
    Ok(rows(&pts))
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q))
}

/// Noisy, rotated, relabelled copies of the templates. Atoms are permuted
/// within each element block so the canonical element order is kept.
pub fn synthetic_dataset(config: &SyntheticConfig) -> Result<Dataset> {
    if config.template_count == 0 {
        return Err(Error::InvalidInput("need at least one template".into()));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::InvalidInput("noise must be finite and non-negative".into()));
    }
    let templates = synthetic_templates(config.template_count, config.n_points, config.seed)?;
    let (samples, _) = synthetic_samples(&templates, config.noise, config.size, config.seed)?;
    Dataset::new(samples, Formula::of(&templates[0].elements))
}

/// Samples plus the template index each one came from.
pub fn synthetic_samples(
    templates: &[PointSet],
    noise: f64,
    size: usize,
    seed: u64,
) -> Result<(Vec<PointSet>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut samples = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for _ in 0..size {
        let k = rng.random_range(0..templates.len());
        let tpl = &templates[k];
        let rot = random_rotation(&mut rng);
        let n = tpl.len();
        let mut coords = DMatrix::zeros(n, 3);
        for i in 0..n {
            let v = Vector3::new(
                tpl.coords[(i, 0)] + normal.sample(&mut rng),
                tpl.coords[(i, 1)] + normal.sample(&mut rng),
                tpl.coords[(i, 2)] + normal.sample(&mut rng),
            );
            let r = rot * v;
            for j in 0..3 {
                coords[(i, j)] = r[j];
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end < n && tpl.elements[end] == tpl.elements[start] {
                end += 1;
            }
            order[start..end].shuffle(&mut rng);
            start = end;
        }
        samples.push(PointSet::new(coords, tpl.elements.clone())?.permuted(&order));
        labels.push(k);
    }
    Ok((samples, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::is_edm;

    #[test]
    fn formula_parse_and_display() {
        let f: Formula = "C7O2H10".parse().unwrap();
        assert_eq!(f.atom_count(), 19);
        assert_eq!(f.to_string(), "C7O2H10");
        assert_eq!("H4C".parse::<Formula>().unwrap().to_string(), "CH4");
        assert!("N2".parse::<Formula>().is_err());
    }

    #[test]
    fn filter_and_canonical_order() {
        let methane = PointSet::from_xyz_rows(
            &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]],
            vec![Element::H, Element::C, Element::H, Element::H, Element::H],
        )
        .unwrap();
        let f: Formula = "C7O2H10".parse().unwrap();
        assert!(filter_formula(std::slice::from_ref(&methane), &f).unwrap().is_empty());
        assert!(filter_formula(&[], &f).unwrap().is_empty());
        let ch4 = filter_formula(&[methane], &"CH4".parse().unwrap()).unwrap();
        assert_eq!(ch4.structures[0].elements[0], Element::C);
        assert_eq!(ch4.structures[0].coords[(0, 0)], 1.0);
    }

    #[test]
    fn split_sizes() {
        let d = synthetic_dataset(&SyntheticConfig { size: 11, ..Default::default() }).unwrap();
        let (a, b) = split(&d, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (5, 6));
        assert_eq!(split(&d, 0.5, 3).unwrap().0, a);
        assert!(split(&d, 1.0, 3).is_err());
    }

    #[test]
    fn noiseless_samples_keep_template_distances() {
        let cfg = SyntheticConfig { noise: 0.0, size: 20, ..Default::default() };
        let tpl = synthetic_templates(2, 5, cfg.seed).unwrap();
        let (samples, labels) = synthetic_samples(&tpl, 0.0, 20, 1).unwrap();
        let sorted = |p: &PointSet| {
            let d = edm_from_points(p);
            let mut v: Vec<f64> = (0..5).flat_map(|i| ((i + 1)..5).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        for (s, &k) in samples.iter().zip(&labels) {
            let (a, b) = (sorted(s), sorted(&tpl[k]));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
            assert!(is_edm(&edm_from_points(s), 1e-9).unwrap().is_edm);
        }
        let d = synthetic_dataset(&cfg).unwrap();
        assert!((d.r_min.unwrap() - EDGE).abs() < 1e-9);
    }
}

//! Point sets with per-point element labels.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element label of a point. `X` marks a generic point with no chemistry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    O,
    H,
    X,
}

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::O => "O",
            Element::H => "H",
            Element::X => "X",
        }
    }

    pub fn is_heavy(self) -> bool {
        !matches!(self, Element::H)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(Element::C),
            "O" | "o" => Ok(Element::O),
            "H" | "h" => Ok(Element::H),
            "X" | "x" => Ok(Element::X),
            other => Err(Error::UnsupportedElement(other.to_string())),
        }
    }
}

/// `n` points in `d` dimensions (rows are points, units Å).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub coords: DMatrix<f64>,
    pub elements: Vec<Element>,
}

impl PointSet {
    pub fn new(coords: DMatrix<f64>, elements: Vec<Element>) -> Result<Self> {
        if coords.nrows() != elements.len() {
            return Err(Error::dim(format!(
                "{} coordinate rows but {} element labels",
                coords.nrows(),
                elements.len()
            )));
        }
        if coords.ncols() == 0 {
            return Err(Error::dim("point dimension must be at least 1"));
        }
        Ok(Self { coords, elements })
    }

    /// Generic (`X`) labels for every point.
    pub fn generic(coords: DMatrix<f64>) -> Result<Self> {
        let n = coords.nrows();
        Self::new(coords, vec![Element::X; n])
    }

    pub fn from_xyz_rows(rows: &[[f64; 3]], elements: Vec<Element>) -> Result<Self> {
        let coords = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
        Self::new(coords, elements)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    /// Coordinates padded (or truncated) to three columns.
    pub fn to_3d(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 3, |i, j| {
            if j < self.dim() {
                self.coords[(i, j)]
            } else {
                0.0
            }
        })
    }

    /// Reorders points so that new point `k` is old point `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> PointSet {
        let coords = DMatrix::from_fn(self.len(), self.dim(), |i, j| self.coords[(order[i], j)]);
        let elements = order.iter().map(|&i| self.elements[i]).collect();
        PointSet { coords, elements }
    }
}

//! Plain-text formats: matrices as CSV and point sets as XYZ.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::structure::{Element, PointSet};

/// Parses a headerless, comma-separated matrix (one row per line).
/// Blank lines are ignored.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(k + 1, format!("not a number: {:?}", f.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    k + 1,
                    format!("{} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(1, "no matrix rows"));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&fs::read_to_string(path)?)
}

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix_csv(m))?;
    Ok(())
}

/// Coordinate field, accepting the `1.5*^-6` exponent notation some
/// distributions use.
fn parse_coord(field: &str, line: usize) -> Result<f64> {
    let cleaned = field.replace("*^", "e");
    cleaned
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("bad coordinate {field:?}")))
}

fn looks_like_atom(line: &str) -> bool {
    let mut it = line.split_whitespace();
    let label = match it.next() {
        Some(l) => l,
        None => return false,
    };
    let alpha = label.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && label.chars().all(|c| c.is_ascii_alphabetic())
        && label.len() <= 2;
    alpha && it.take(3).filter(|f| f.replace("*^", "e").parse::<f64>().is_ok()).count() == 3
}

/// Parses XYZ text: atom count, comment line, then `Element x y z` records.
/// Extra columns after `z` are ignored, as are trailing non-atom lines.
pub fn parse_xyz(text: &str) -> Result<PointSet> {
    let lines: Vec<&str> = text.lines().collect();
    let count_line = lines.first().ok_or_else(|| Error::parse(1, "empty file"))?;
    let n: usize = count_line
        .trim()
        .parse()
        .map_err(|_| Error::parse(1, format!("bad atom count {:?}", count_line.trim())))?;
    if lines.len() < 2 && n > 0 {
        return Err(Error::parse(2, "missing comment line"));
    }
    let mut coords = Vec::with_capacity(3 * n);
    let mut elements = Vec::with_capacity(n);
    for k in 0..n {
        let lineno = k + 3;
        let line = lines
            .get(k + 2)
            .ok_or_else(|| Error::parse(lineno, format!("expected {n} atoms, found {k}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(Error::parse(lineno, format!("expected 'Element x y z', got {line:?}")));
        }
        elements.push(fields[0].parse::<Element>()?);
        for f in &fields[1..4] {
            coords.push(parse_coord(f, lineno)?);
        }
    }
    if let Some(extra) = lines.get(n + 2) {
        if looks_like_atom(extra) {
            return Err(Error::parse(
                n + 3,
                format!("atom count {n} does not match the number of atom records"),
            ));
        }
    }
    let m = DMatrix::from_row_slice(n, 3, &coords);
    PointSet::new(m, elements)
}

pub fn read_xyz(path: &Path) -> Result<PointSet> {
    parse_xyz(&fs::read_to_string(path)?)
}

/// XYZ text for a point set; coordinates beyond three dimensions are
/// dropped and missing ones written as zero.
pub fn format_xyz(p: &PointSet, comment: &str) -> String {
    let c = p.to_3d();
    let mut out = String::new();
    let _ = writeln!(out, "{}", p.len());
    let _ = writeln!(out, "{}", comment.replace('\n', " "));
    for i in 0..p.len() {
        let _ = writeln!(
            out,
            "{} {:?} {:?} {:?}",
            p.elements[i],
            c[(i, 0)],
            c[(i, 1)],
            c[(i, 2)]
        );
    }
    out
}

pub fn write_xyz(path: &Path, p: &PointSet, comment: &str) -> Result<()> {
    fs::write(path, format_xyz(p, comment))?;
    Ok(())
}

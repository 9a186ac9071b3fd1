//! FSL-style `bval`/`bvec` text files.

use std::fs;
use std::path::Path;

use dmri_core::volume::DEFAULT_B0_THRESHOLD;
use dmri_core::GradientScheme;

use crate::{Error, Result};

/// Directions whose norm lies in this band are rescaled to unit length.
pub const RENORMALIZE_BAND: (f64, f64) = (0.9, 1.1);

fn numbers(text: &str, file: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::NonNumeric { file: file.to_string(), token: t.to_string() }))
        .collect()
}

/// Parse bval/bvec contents. `bval` is one row of `N` numbers; `bvec` is
/// three rows of `N` numbers (x, y and z components).
pub fn parse_gradients(bval: &str, bvec: &str, b0_threshold: f64) -> Result<GradientScheme> {
    let bvals = numbers(bval, "bval")?;
    let rows: Vec<Vec<f64>> = bvec
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| numbers(l, "bvec"))
        .collect::<Result<_>>()?;
    if rows.len() != 3 {
        return Err(Error::BadRowCount { found: rows.len() });
    }
    for row in &rows {
        if row.len() != bvals.len() {
            return Err(Error::LengthMismatch { what: "bval vs bvec columns", left: bvals.len(), right: row.len() });
        }
    }
    let mut bvecs = Vec::with_capacity(bvals.len());
    for (i, &b) in bvals.iter().enumerate() {
        let g = [rows[0][i], rows[1][i], rows[2][i]];
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if b > b0_threshold {
            if !(RENORMALIZE_BAND.0..=RENORMALIZE_BAND.1).contains(&norm) {
                return Err(Error::NonUnitDirection { index: i, norm });
            }
            bvecs.push(g.map(|c| c / norm));
        } else {
            bvecs.push(g);
        }
    }
    Ok(GradientScheme::with_b0_threshold(bvals, bvecs, b0_threshold)?)
}

pub fn read_gradients(bval: impl AsRef<Path>, bvec: impl AsRef<Path>) -> Result<GradientScheme> {
    read_gradients_with(bval, bvec, DEFAULT_B0_THRESHOLD)
}

pub fn read_gradients_with(bval: impl AsRef<Path>, bvec: impl AsRef<Path>, b0_threshold: f64) -> Result<GradientScheme> {
    let (bval, bvec) = (bval.as_ref(), bvec.as_ref());
    let a = fs::read_to_string(bval).map_err(Error::io(bval))?;
    let b = fs::read_to_string(bvec).map_err(Error::io(bvec))?;
    parse_gradients(&a, &b, b0_threshold)
}

/// Render bval and bvec file contents.
pub fn format_gradients(scheme: &GradientScheme) -> (String, String) {
    let join = |it: &mut dyn Iterator<Item = f64>| it.map(|v| format!("{v}")).collect::<Vec<_>>().join(" ");
    let bval = join(&mut scheme.bvals().iter().copied()) + "\n";
    let bvec = (0..3)
        .map(|c| join(&mut scheme.bvecs().iter().map(|g| g[c])) + "\n")
        .collect::<String>();
    (bval, bvec)
}

pub fn write_gradients(scheme: &GradientScheme, bval: impl AsRef<Path>, bvec: impl AsRef<Path>) -> Result<()> {
    let (a, b) = format_gradients(scheme);
    fs::write(bval.as_ref(), a).map_err(Error::io(bval.as_ref()))?;
    fs::write(bvec.as_ref(), b).map_err(Error::io(bvec.as_ref()))
}

//! Jensen–Shannon distance between amplitude profiles.

use alloc::vec::Vec;

use crate::volume::{check_grid, Mask, Volume4D};
use crate::{Error, Result};

/// Added to every bin after clamping so that `log(0)` never occurs. Small
/// enough that disjoint supports still sit at distance 1 to rounding.
pub const BIN_FLOOR: f64 = 1e-300;

fn to_distribution(p: &[f64]) -> Result<Vec<f64>> {
    let clamped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    if clamped.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroDistribution);
    }
    let floored: Vec<f64> = clamped.iter().map(|v| v + BIN_FLOOR).collect();
    let total: f64 = floored.iter().sum();
    Ok(floored.into_iter().map(|v| v / total).collect())
}

/// Square root of the base-2 Jensen–Shannon divergence, in `[0, 1]`.
/// Negative amplitudes are clamped to zero and each profile normalized.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    let p = to_distribution(p)?;
    let q = to_distribution(q)?;
    let mut div = 0.0;
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        // a floored bin can still underflow to zero for huge amplitudes
        if a > 0.0 {
            div += 0.5 * a * libm::log2(a / m);
        }
        if b > 0.0 {
            div += 0.5 * b * libm::log2(b / m);
        }
    }
    Ok(libm::sqrt(div.clamp(0.0, 1.0)))
}

/// Per-voxel distance between two amplitude volumes (one volume per
/// direction). Unmasked voxels are zero.
pub fn jsd_map(a: &Volume4D, b: &Volume4D, mask: &Mask) -> Result<Volume4D> {
    a.same_grid(b)?;
    check_grid(a.spatial_dims(), mask.dims())?;
    if a.volumes() != b.volumes() {
        return Err(Error::VolumeCount { expected: a.volumes(), actual: b.volumes() });
    }
    let mut out = alloc::vec![0.0; a.voxels()];
    let mut pa = Vec::with_capacity(a.volumes());
    let mut pb = Vec::with_capacity(a.volumes());
    for voxel in mask.indices() {
        pa.clear();
        pb.clear();
        pa.extend(a.series(voxel));
        pb.extend(b.series(voxel));
        out[voxel] = jsd(&pa, &pb)?;
    }
    a.with_data(1, out)
}

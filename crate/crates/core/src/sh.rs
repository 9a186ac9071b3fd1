//! Even-order real symmetric spherical harmonics: basis, least-squares fit,
//! projection.
//!
//! Basis convention (index `j = l(l+1)/2 + m` over even `l`):
//! `m < 0` → `√2·Im(Y_l^{|m|})`, `m = 0` → `Y_l^0`, `m > 0` → `√2·Re(Y_l^m)`,
//! with `Y_l^m` the orthonormal complex harmonics including the
//! Condon–Shortley phase.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::design::DesignMatrix;
use crate::volume::{check_grid, GradientScheme, Mask, Shell, Volume4D};
use crate::{Error, Result};

/// Tag recorded alongside coefficient maps.
pub const BASIS_TAG: &str = "real-symmetric-modified";

/// Number of coefficients of an even-order basis.
pub fn coefficient_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Smallest even order whose basis has exactly `n` coefficients.
pub fn order_for_count(n: usize) -> Option<usize> {
    (0..=32).step_by(2).find(|&l| coefficient_count(l) == n)
}

pub fn check_order(order: usize) -> Result<()> {
    if order % 2 == 1 {
        Err(Error::OddOrder(order))
    } else {
        Ok(())
    }
}

/// Degree of each basis column.
pub fn degrees(order: usize) -> Vec<usize> {
    (0..=order).step_by(2).flat_map(|l| core::iter::repeat(l).take(2 * l + 1)).collect()
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l-m)! / (l+m)!
    ((l - m + 1)..=(l + m)).fold(1.0, |acc, k| acc / k as f64)
}

/// Associated Legendre functions `P_l^m(x)` for `0 ≤ m ≤ l ≤ order`,
/// stored at `[l * (order + 1) + m]`.
fn legendre_table(order: usize, x: f64) -> Vec<f64> {
    let w = order + 1;
    let mut p = vec![0.0; w * w];
    let s = libm::sqrt((1.0 - x * x).max(0.0));
    let mut pmm = 1.0;
    for m in 0..=order {
        if m > 0 {
            pmm *= -((2 * m - 1) as f64) * s;
        }
        p[m * w + m] = pmm;
        if m < order {
            p[(m + 1) * w + m] = x * (2 * m + 1) as f64 * pmm;
        }
        for l in (m + 2)..=order {
            p[l * w + m] = ((2 * l - 1) as f64 * x * p[(l - 1) * w + m]
                - (l + m - 1) as f64 * p[(l - 2) * w + m])
                / (l - m) as f64;
        }
    }
    p
}

/// Evaluate all basis functions of `order` at a direction (need not be unit).
pub fn basis_row(order: usize, dir: [f64; 3], out: &mut [f64]) {
    debug_assert_eq!(out.len(), coefficient_count(order));
    let r = libm::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    let cos_theta = if r > 0.0 { (dir[2] / r).clamp(-1.0, 1.0) } else { 1.0 };
    let phi = libm::atan2(dir[1], dir[0]);
    let p = legendre_table(order, cos_theta);
    let w = order + 1;
    let mut j = 0;
    for l in (0..=order).step_by(2) {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let k = libm::sqrt((2 * l + 1) as f64 / (4.0 * PI) * factorial_ratio(l, am));
            let base = k * p[l * w + am];
            out[j] = match m {
                m if m < 0 => core::f64::consts::SQRT_2 * base * libm::sin(am as f64 * phi),
                0 => base,
                _ => core::f64::consts::SQRT_2 * base * libm::cos(am as f64 * phi),
            };
            j += 1;
        }
    }
}

/// Rows are directions, columns the basis functions of `order`.
pub fn sh_design_matrix(directions: &[[f64; 3]], order: usize) -> Result<DesignMatrix> {
    check_order(order)?;
    let n = coefficient_count(order);
    let mut m = DMatrix::zeros(directions.len(), n);
    let mut row = vec![0.0; n];
    for (i, d) in directions.iter().enumerate() {
        basis_row(order, *d, &mut row);
        for (c, v) in row.iter().enumerate() {
            m[(i, c)] = *v;
        }
    }
    Ok(DesignMatrix::from_matrix(m))
}

/// Precomputed least-squares solver for one direction set.
#[derive(Debug, Clone)]
pub struct ShFitter {
    order: usize,
    solve: DMatrix<f64>,
}

impl ShFitter {
    /// `lambda_lb` weights the Laplace–Beltrami penalty `‖ΔY c‖²`.
    pub fn new(directions: &[[f64; 3]], order: usize, lambda_lb: f64) -> Result<Self> {
        let design = sh_design_matrix(directions, order)?;
        let b = design.as_matrix();
        let ncoef = b.ncols();
        if lambda_lb == 0.0 && directions.len() < ncoef {
            return Err(Error::UnderdeterminedWithoutRegularization {
                directions: directions.len(),
                coefficients: ncoef,
            });
        }
        let mut normal = b.transpose() * b;
        if lambda_lb != 0.0 {
            for (j, l) in degrees(order).into_iter().enumerate() {
                let eig = (l * (l + 1)) as f64;
                normal[(j, j)] += lambda_lb * eig * eig;
            }
        }
        let solve = if lambda_lb == 0.0 {
            let svd = b.clone().svd(true, true);
            let smax = svd.singular_values.max();
            if svd.singular_values.min() < 1e-12 * smax {
                return Err(Error::SingularDesign);
            }
            svd.pseudo_inverse(0.0).map_err(|_| Error::SingularDesign)?
        } else {
            let chol = normal.cholesky().ok_or(Error::SingularDesign)?;
            chol.solve(&b.transpose())
        };
        Ok(Self { order, solve })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn fit(&self, signal: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(signal);
        (&self.solve * y).iter().copied().collect()
    }
}

/// Per-voxel coefficients for one shell, stored as a volume with one
/// coefficient per 3D volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoeffMap {
    pub order: usize,
    pub bvalue: f64,
    pub coeffs: Volume4D,
}

impl ShCoeffMap {
    pub fn from_volume(coeffs: Volume4D, bvalue: f64) -> Result<Self> {
        let order = order_for_count(coeffs.volumes()).ok_or(Error::VolumeCount {
            expected: coefficient_count(6),
            actual: coeffs.volumes(),
        })?;
        Ok(Self { order, bvalue, coeffs })
    }

    pub fn basis(&self) -> &'static str {
        BASIS_TAG
    }
}

/// Fit one shell voxelwise. Signals are divided by the voxel's mean b0;
/// voxels with non-positive b0 or outside the mask get zero coefficients.
pub fn fit_sh(
    vol: &Volume4D,
    scheme: &GradientScheme,
    shell: &Shell,
    mask: &Mask,
    order: usize,
    lambda_lb: f64,
) -> Result<ShCoeffMap> {
    check_grid(vol.spatial_dims(), mask.dims())?;
    if vol.volumes() != scheme.len() {
        return Err(Error::VolumeCount { expected: scheme.len(), actual: vol.volumes() });
    }
    let b0 = crate::volume::mean_b0(vol, scheme)?;
    let dirs: Vec<[f64; 3]> = shell.indices.iter().map(|&i| scheme.bvecs()[i]).collect();
    let fitter = ShFitter::new(&dirs, order, lambda_lb)?;
    let ncoef = coefficient_count(order);
    let nvox = vol.voxels();
    let mut out = vec![0.0; nvox * ncoef];
    let mut signal = vec![0.0; dirs.len()];
    for voxel in mask.indices() {
        let s0 = b0.data()[voxel];
        if s0 <= 0.0 {
            continue;
        }
        for (s, &v) in signal.iter_mut().zip(&shell.indices) {
            *s = vol.volume(v)[voxel] / s0;
        }
        for (c, value) in fitter.fit(&signal).into_iter().enumerate() {
            out[c * nvox + voxel] = value;
        }
    }
    Ok(ShCoeffMap { order, bvalue: shell.bvalue, coeffs: vol.with_data(ncoef, out)? })
}

/// Evaluate coefficients at each direction: one output volume per direction.
pub fn project_sh(map: &ShCoeffMap, directions: &[[f64; 3]]) -> Result<Volume4D> {
    let design = sh_design_matrix(directions, map.order)?;
    let b = design.as_matrix();
    let nvox = map.coeffs.voxels();
    let ncoef = b.ncols();
    let mut out = vec![0.0; nvox * directions.len()];
    let mut c = vec![0.0; ncoef];
    for voxel in 0..nvox {
        let mut any = false;
        for (k, ck) in c.iter_mut().enumerate() {
            *ck = map.coeffs.volume(k)[voxel];
            any |= *ck != 0.0;
        }
        if !any {
            continue;
        }
        for d in 0..directions.len() {
            let mut acc = 0.0;
            for (k, ck) in c.iter().enumerate() {
                acc += b[(d, k)] * ck;
            }
            out[d * nvox + voxel] = acc;
        }
    }
    map.coeffs.with_data(directions.len(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_counts() {
        assert_eq!(coefficient_count(0), 1);
        assert_eq!(coefficient_count(2), 6);
        assert_eq!(coefficient_count(4), 15);
        assert_eq!(coefficient_count(6), 28);
        assert_eq!(coefficient_count(8), 45);
        assert_eq!(order_for_count(28), Some(6));
        assert_eq!(order_for_count(27), None);
        assert_eq!(degrees(2), vec![0, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn y00_is_constant() {
        let mut out = [0.0];
        for d in [[1.0, 0.0, 0.0], [0.3, -0.4, 0.866], [0.0, 0.0, -1.0]] {
            basis_row(0, d, &mut out);
            assert!((out[0] - 1.0 / libm::sqrt(4.0 * PI)).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_is_antipodally_symmetric() {
        let d = [0.2, -0.5, 0.7];
        let mut a = vec![0.0; 28];
        let mut b = vec![0.0; 28];
        basis_row(6, d, &mut a);
        basis_row(6, [-d[0], -d[1], -d[2]], &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn known_degree_two_values() {
        // Y_2^0 at the pole = sqrt(5/4π)
        let mut row = vec![0.0; 6];
        basis_row(2, [0.0, 0.0, 1.0], &mut row);
        assert!((row[3] - libm::sqrt(5.0 / (4.0 * PI))).abs() < 1e-14);
        // √2 Re Y_2^2 at (1,0,0): √2 · (1/4)√(15/2π)
        basis_row(2, [1.0, 0.0, 0.0], &mut row);
        let expected = core::f64::consts::SQRT_2 * 0.25 * libm::sqrt(15.0 / (2.0 * PI));
        assert!((row[5] - expected).abs() < 1e-14);
        assert!(row[1].abs() < 1e-14);
    }

    #[test]
    fn odd_order_rejected() {
        assert_eq!(sh_design_matrix(&[[1.0, 0.0, 0.0]], 3).unwrap_err(), Error::OddOrder(3));
    }

    #[test]
    fn underdetermined_without_regularization() {
        let dirs = crate::sphere::fibonacci_hemisphere(14);
        assert!(matches!(
            ShFitter::new(&dirs, 4, 0.0),
            Err(Error::UnderdeterminedWithoutRegularization { directions: 14, coefficients: 15 })
        ));
        assert!(ShFitter::new(&dirs, 4, 0.006).is_ok());
    }

    #[test]
    fn constant_signal_maps_to_y00() {
        let dirs = crate::sphere::fibonacci_hemisphere(60);
        let fitter = ShFitter::new(&dirs, 6, 0.0).unwrap();
        let c = fitter.fit(&vec![1.0; 60]);
        assert!((c[0] - libm::sqrt(4.0 * PI)).abs() < 1e-10);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-10));
    }
}

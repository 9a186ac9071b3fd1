//! Local-patch PCA denoising with Marchenko–Pastur rank selection, and
//! intensity-pool moments for noise-distribution analysis.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::volume::{check_grid, Mask, Volume4D};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Average the reconstructions of every patch covering a voxel.
    OverlapAverage,
    /// Take each voxel from the patch whose centre is nearest.
    CenterOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub radius: usize,
    pub stride: usize,
    pub aggregation: Aggregation,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { radius: 2, stride: 1, aggregation: Aggregation::OverlapAverage }
    }
}

impl PatchConfig {
    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn patch_voxels(&self) -> usize {
        self.width().pow(3)
    }

    fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::PatchConfig("radius must be at least 1".to_string()));
        }
        if self.stride == 0 || self.stride > self.width() {
            return Err(Error::PatchConfig("stride must be between 1 and the patch width".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseReport {
    /// Noise standard deviation per voxel.
    pub sigma: Volume4D,
    /// Retained signal components per voxel.
    pub npars: Volume4D,
}

/// Marchenko–Pastur split of a descending scatter spectrum of length `M`
/// computed from `n_columns` samples.
///
/// Returns the smallest `p` for which the remaining eigenvalues fit inside
/// the noise bulk, `λ_{p+1} − λ_M ≤ 4·√((M−p)/N)·σ̂²(p)` with
/// `σ̂²(p) = Σ_{i>p} λ_i / (M−p)`, together with `σ̂²(p)`. Falls back to
/// `p = M − 1`.
pub fn mp_threshold(eigenvalues: &[f64], n_columns: usize) -> Result<(usize, f64)> {
    let m = eigenvalues.len();
    if m == 0 {
        return Err(Error::EmptySpectrum);
    }
    let n = n_columns.max(1) as f64;
    let last = eigenvalues[m - 1].max(0.0);
    // suffix sums so each σ̂²(p) is O(1)
    let mut tail = vec![0.0; m + 1];
    for i in (0..m).rev() {
        tail[i] = tail[i + 1] + eigenvalues[i].max(0.0);
    }
    for p in 0..m {
        let rest = (m - p) as f64;
        let sigma2 = tail[p] / rest;
        let spread = eigenvalues[p].max(0.0) - last;
        if spread <= 4.0 * libm::sqrt(rest / n) * sigma2 {
            return Ok((p, sigma2));
        }
    }
    Ok((m - 1, last))
}

fn patch_starts(n: usize, width: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + width < n {
        starts.push(s);
        s += stride;
    }
    starts.push(n - width);
    starts.dedup();
    starts
}

/// For each coordinate, the index of the start whose centre is nearest.
fn nearest_patch(n: usize, starts: &[usize], radius: usize) -> Vec<usize> {
    (0..n)
        .map(|x| {
            let mut best = 0;
            for (k, &s) in starts.iter().enumerate() {
                let d = (x as i64 - (s + radius) as i64).abs();
                let bd = (x as i64 - (starts[best] + radius) as i64).abs();
                if d < bd {
                    best = k;
                }
            }
            best
        })
        .collect()
}

struct PatchResult {
    /// Patch voxels × volumes, patch-voxel fastest.
    values: Vec<f64>,
    sigma: f64,
    npars: usize,
}

fn denoise_patch(vol: &Volume4D, origin: [usize; 3], width: usize) -> PatchResult {
    let [nx, ny, _, nv] = vol.dims();
    let nvox = vol.voxels();
    let mp = width * width * width;
    let data = vol.data();
    let mut x = DMatrix::<f64>::zeros(mp, nv);
    let mut row = 0;
    for dz in 0..width {
        for dy in 0..width {
            for dx in 0..width {
                let idx = (origin[0] + dx) + nx * ((origin[1] + dy) + ny * (origin[2] + dz));
                for v in 0..nv {
                    x[(row, v)] = data[v * nvox + idx];
                }
                row += 1;
            }
        }
    }
    let means: Vec<f64> = (0..nv).map(|v| x.column(v).sum() / mp as f64).collect();
    for v in 0..nv {
        x.column_mut(v).add_scalar_mut(-means[v]);
    }

    let (small, large) = (nv.min(mp), nv.max(mp));
    let scatter = if nv <= mp { x.transpose() * &x } else { &x * x.transpose() } / large as f64;
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..small).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let (p, sigma2) = mp_threshold(&spectrum, large).expect("non-empty spectrum");

    let mut basis = DMatrix::<f64>::zeros(small, p);
    for (c, &i) in order.iter().take(p).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    let projector = &basis * basis.transpose();
    let recon = if nv <= mp { &x * projector } else { projector * &x };
    let mut values = Vec::with_capacity(mp * nv);
    for v in 0..nv {
        for r in 0..mp {
            values.push(recon[(r, v)] + means[v]);
        }
    }
    PatchResult { values, sigma: libm::sqrt(sigma2.max(0.0)), npars: p }
}

/// Denoise a 4D volume patch by patch. Deterministic; the patch loop runs on
/// rayon under the `parallel` feature with a fixed accumulation order.
pub fn denoise_mppca(vol: &Volume4D, cfg: &PatchConfig) -> Result<(Volume4D, DenoiseReport)> {
    cfg.validate()?;
    let dims = vol.spatial_dims();
    let width = cfg.width();
    if dims.iter().any(|&d| d < width) {
        return Err(Error::VolumeSmallerThanPatch { dims, width });
    }
    let starts: [Vec<usize>; 3] = dims.map(|n| patch_starts(n, width, cfg.stride));
    let nearest: [Vec<usize>; 3] = [
        nearest_patch(dims[0], &starts[0], cfg.radius),
        nearest_patch(dims[1], &starts[1], cfg.radius),
        nearest_patch(dims[2], &starts[2], cfg.radius),
    ];
    let nvox = vol.voxels();
    let nv = vol.volumes();
    let mut sum = vec![0.0; nvox * nv];
    let mut hits = vec![0u32; nvox];
    let mut center = vec![0.0; nvox * nv];
    let mut sigma = vec![0.0; nvox];
    let mut npars = vec![0.0; nvox];

    let plane: Vec<usize> = (0..starts[0].len() * starts[1].len()).collect();
    for (kz, &z0) in starts[2].iter().enumerate() {
        let results = crate::exec::map_indices(&plane, |k| {
            let (kx, ky) = (k % starts[0].len(), k / starts[0].len());
            denoise_patch(vol, [starts[0][kx], starts[1][ky], z0], width)
        });
        for (k, res) in plane.iter().zip(results) {
            let (kx, ky) = (k % starts[0].len(), k / starts[0].len());
            let origin = [starts[0][kx], starts[1][ky], z0];
            let mut r = 0;
            for dz in 0..width {
                for dy in 0..width {
                    for dx in 0..width {
                        let (x, y, z) = (origin[0] + dx, origin[1] + dy, origin[2] + dz);
                        let idx = x + dims[0] * (y + dims[1] * z);
                        let own = nearest[0][x] == kx && nearest[1][y] == ky && nearest[2][z] == kz;
                        hits[idx] += 1;
                        for v in 0..nv {
                            let value = res.values[v * width.pow(3) + r];
                            sum[v * nvox + idx] += value;
                            if own {
                                center[v * nvox + idx] = value;
                            }
                        }
                        if own {
                            sigma[idx] = res.sigma;
                            npars[idx] = res.npars as f64;
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    let out = match cfg.aggregation {
        Aggregation::OverlapAverage => {
            for v in 0..nv {
                for (s, &h) in sum[v * nvox..(v + 1) * nvox].iter_mut().zip(&hits) {
                    *s /= f64::from(h);
                }
            }
            sum
        }
        Aggregation::CenterOnly => center,
    };
    let report = DenoiseReport { sigma: vol.with_data(1, sigma)?, npars: vol.with_data(1, npars)? };
    Ok((vol.with_data(nv, out)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Central moments of a sample pool. A constant pool reports zero variance,
/// skewness and excess kurtosis.
pub fn moments(values: &[f64]) -> Result<Moments> {
    let count = values.len();
    if count < 4 {
        return Err(Error::PoolTooSmall { count });
    }
    let n = count as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / libm::pow(m2, 1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(Moments { count, mean, variance: m2, skewness, excess_kurtosis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Raw,
    Denoised,
    /// `raw − denoised`.
    Residual,
}

/// Moments pooled over every volume at the masked voxels.
pub fn residual_moments(raw: &Volume4D, denoised: &Volume4D, mask: &Mask, pool: Pool) -> Result<Moments> {
    raw.same_grid(denoised)?;
    check_grid(raw.spatial_dims(), mask.dims())?;
    if raw.volumes() != denoised.volumes() {
        return Err(Error::VolumeCount { expected: raw.volumes(), actual: denoised.volumes() });
    }
    let voxels: Vec<usize> = mask.indices().collect();
    let mut values = Vec::with_capacity(voxels.len() * raw.volumes());
    for v in 0..raw.volumes() {
        let (a, b) = (raw.volume(v), denoised.volume(v));
        values.extend(voxels.iter().map(|&i| match pool {
            Pool::Raw => a[i],
            Pool::Denoised => b[i],
            Pool::Residual => a[i] - b[i],
        }));
    }
    moments(&values)
}

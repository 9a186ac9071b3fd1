//! Synthetic ground truth: two-compartment signal model, magnitude noise,
//! k-space resolution reduction and region phantoms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dti::{Tensor, TensorMap};
use crate::volume::{GradientScheme, LabelVolume, Mask, Volume4D};
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub const FREE_WATER_DIFFUSIVITY: f64 = 3.0e-3;

/// `S0·(f_iso·e^{−b·d_iso} + (1 − f_iso)·e^{−b·gᵀDg})` for every volume.
pub fn simulate_signal(d: &Tensor, s0: f64, f_iso: f64, d_iso: f64, scheme: &GradientScheme) -> Vec<f64> {
    scheme
        .bvals()
        .iter()
        .zip(scheme.bvecs())
        .map(|(&b, g)| {
            s0 * (f_iso * libm::exp(-b * d_iso) + (1.0 - f_iso) * libm::exp(-b * d.quadratic(g)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum NoiseModel {
    Rician,
    Gaussian,
}

/// Volume `v` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `v`.
fn volume_rng(seed: u64, v: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(v as u64);
    rng
}

pub fn add_noise(vol: &Volume4D, model: NoiseModel, sigma: f64, seed: u64) -> Result<Volume4D> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::PhantomSpec(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vol.clone());
    }
    let vols: Vec<usize> = (0..vol.volumes()).collect();
    let noisy = crate::exec::map_indices(&vols, |v| {
        let mut rng = volume_rng(seed, v);
        vol.volume(v)
            .iter()
            .map(|&s| {
                let n1: f64 = StandardNormal.sample(&mut rng);
                match model {
                    NoiseModel::Gaussian => s + sigma * n1,
                    NoiseModel::Rician => {
                        let n2: f64 = StandardNormal.sample(&mut rng);
                        libm::hypot(s + sigma * n1, sigma * n2)
                    }
                }
            })
            .collect::<Vec<f64>>()
    });
    vol.with_data(vol.volumes(), noisy.concat())
}

/// `sqrt((S + n1)² + n2²)` with `n1, n2 ~ N(0, σ²)`.
pub fn add_rician(vol: &Volume4D, sigma: f64, seed: u64) -> Result<Volume4D> {
    add_noise(vol, NoiseModel::Rician, sigma, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsample {
    /// Keep the native grid and zero the discarded frequencies
    /// (band-limited interpolation).
    #[default]
    ZeroFill,
    /// Reconstruct on the coarse grid and interpolate linearly (periodic)
    /// back to the native grid.
    Linear,
}

/// Per-axis operator (row-major `n_out × n`) for the chosen upsampling.
fn axis_operator(n: usize, kept: usize, upsample: Upsample) -> Vec<f64> {
    let band = (kept - 1) / 2;
    let nf = n as f64;
    let kernel = |offset: f64| -> f64 {
        let mut acc = 1.0;
        for f in 1..=band {
            acc += 2.0 * libm::cos(2.0 * PI * f as f64 * offset / nf);
        }
        acc / nf
    };
    match upsample {
        Upsample::ZeroFill => {
            let mut op = vec![0.0; n * n];
            for j in 0..n {
                for k in 0..n {
                    op[j * n + k] = kernel(j as f64 - k as f64);
                }
            }
            op
        }
        Upsample::Linear => {
            let step = nf / kept as f64;
            let mut coarse = vec![0.0; kept * n];
            for m in 0..kept {
                for k in 0..n {
                    coarse[m * n + k] = kernel(m as f64 * step - k as f64);
                }
            }
            let mut op = vec![0.0; n * n];
            for j in 0..n {
                let pos = j as f64 / step;
                let lo = libm::floor(pos) as usize % kept;
                let hi = (lo + 1) % kept;
                let w = pos - libm::floor(pos);
                for k in 0..n {
                    op[j * n + k] = (1.0 - w) * coarse[lo * n + k] + w * coarse[hi * n + k];
                }
            }
            op
        }
    }
}

fn apply_axis(data: &mut [f64], dims: [usize; 3], axis: usize, op: &[f64]) {
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut line = vec![0.0; n];
    let total = dims[0] * dims[1] * dims[2];
    for base in 0..total {
        let coord = (base / stride) % n;
        if coord != 0 {
            continue;
        }
        for (k, l) in line.iter_mut().enumerate() {
            *l = data[base + k * stride];
        }
        for j in 0..n {
            let row = &op[j * n..(j + 1) * n];
            data[base + j * stride] = row.iter().zip(&line).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reduce resolution to `target_spacing` (mm) by cropping k-space to the
/// coarse grid's symmetric band (`|f| ≤ ⌊(M−1)/2⌋` for `M` coarse samples,
/// so an unmatched Nyquist bin is dropped), then return to the native grid.
///
/// The crop is applied as its exact real separable operator per axis, which
/// equals forward FFT, masking, inverse FFT and taking the real part.
/// Axes whose coarse size equals the native size are left untouched.
pub fn kspace_downsample(vol: &Volume4D, target_spacing: [f64; 3], upsample: Upsample) -> Result<Volume4D> {
    let native = vol.spacing();
    let dims = vol.spatial_dims();
    let mut ops: Vec<(usize, Vec<f64>)> = Vec::new();
    for axis in 0..3 {
        let target = target_spacing[axis];
        if !(target > 0.0 && target.is_finite()) || target < native[axis] * (1.0 - 1e-9) {
            return Err(Error::BadTargetSpacing { axis, target, native: native[axis] });
        }
        let n = dims[axis];
        let kept = (libm::round(n as f64 * native[axis] / target) as usize).clamp(1, n);
        if kept < n {
            ops.push((axis, axis_operator(n, kept, upsample)));
        }
    }
    let vols: Vec<usize> = (0..vol.volumes()).collect();
    let out = crate::exec::map_indices(&vols, |v| {
        let mut data = vol.volume(v).to_vec();
        for (axis, op) in &ops {
            apply_axis(&mut data, dims, *axis, op);
        }
        data
    });
    vol.with_data(vol.volumes(), out.concat())
}

/// Downsample every axis by the same factor (2 halves the resolution).
pub fn kspace_downsample_factor(vol: &Volume4D, factor: f64, upsample: Upsample) -> Result<Volume4D> {
    kspace_downsample(vol, vol.spacing().map(|s| s * factor), upsample)
}

#[cfg(feature = "serde")]
fn default_spacing() -> [f64; 3] {
    [1.25; 3]
}

#[cfg(feature = "serde")]
fn default_d_iso() -> f64 {
    FREE_WATER_DIFFUSIVITY
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum TensorSpec {
    /// Eigenvalues (mm²/s) and principal direction; `v2` fixes the second
    /// axis when the minor eigenvalues differ.
    Eigen {
        eigenvalues: [f64; 3],
        v1: [f64; 3],
        #[cfg_attr(feature = "serde", serde(default))]
        v2: Option<[f64; 3]>,
    },
    /// `[Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]` in mm²/s.
    Components([f64; 6]),
}

impl TensorSpec {
    pub fn tensor(&self) -> Tensor {
        match self {
            TensorSpec::Eigen { eigenvalues, v1, v2 } => Tensor::from_eigen(*eigenvalues, *v1, *v2),
            TensorSpec::Components(c) => Tensor(*c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Tissue {
    pub tensor: TensorSpec,
    pub s0: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub f_iso: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_d_iso"))]
    pub d_iso: f64,
}

/// Region geometry in voxel index coordinates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum Shape {
    /// Half-open box `[min, max)`.
    Box { min: [usize; 3], max: [usize; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    fn contains(&self, p: [usize; 3]) -> bool {
        match self {
            Shape::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] < max[a]),
            Shape::Sphere { center, radius } => {
                let d2: f64 = (0..3).map(|a| (p[a] as f64 - center[a]) * (p[a] as f64 - center[a])).sum();
                d2 <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RegionSpec {
    pub label: u32,
    pub shape: Shape,
    pub tissue: Tissue,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ShellSpec {
    pub bvalue: f64,
    pub directions: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum SchemeSpec {
    /// `b0` volumes followed by each shell's Fibonacci-hemisphere directions.
    Shells { b0: usize, shells: Vec<ShellSpec> },
    Explicit { bvals: Vec<f64>, bvecs: Vec<[f64; 3]> },
}

impl SchemeSpec {
    pub fn build(&self) -> Result<GradientScheme> {
        match self {
            SchemeSpec::Shells { b0, shells } => {
                let mut bvals = vec![0.0; *b0];
                let mut bvecs = vec![[0.0; 3]; *b0];
                for shell in shells {
                    for g in crate::sphere::fibonacci_hemisphere(shell.directions) {
                        bvals.push(shell.bvalue);
                        bvecs.push(g);
                    }
                }
                GradientScheme::new(bvals, bvecs)
            }
            SchemeSpec::Explicit { bvals, bvecs } => GradientScheme::new(bvals.clone(), bvecs.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[cfg_attr(feature = "serde", serde(default = "default_spacing"))]
    pub spacing: [f64; 3],
    pub regions: Vec<RegionSpec>,
    pub scheme: SchemeSpec,
    #[cfg_attr(feature = "serde", serde(default))]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    /// Noisy when the spec carries a noise model, otherwise equal to `clean`.
    pub dwi: Volume4D,
    pub clean: Volume4D,
    pub scheme: GradientScheme,
    pub truth: TensorMap,
    pub labels: LabelVolume,
}

fn validate_tissue(label: u32, t: &Tissue) -> Result<()> {
    if !(0.0..=1.0).contains(&t.f_iso) {
        return Err(Error::PhantomSpec(format!("region {label}: f_iso {} outside [0, 1]", t.f_iso)));
    }
    if !(t.s0 >= 0.0 && t.d_iso >= 0.0) {
        return Err(Error::PhantomSpec(format!("region {label}: s0 and d_iso must be non-negative")));
    }
    let d = t.tensor.tensor();
    if d.0.iter().any(|v| !v.is_finite()) || !d.is_positive_semidefinite() {
        return Err(Error::PhantomSpec(format!("region {label}: tensor is not positive semidefinite")));
    }
    Ok(())
}

/// Render a phantom. Overlapping regions must carry identical tissue.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    let scheme = spec.scheme.build()?;
    for r in &spec.regions {
        if r.label == 0 {
            return Err(Error::PhantomSpec(format!("label 0 is reserved for background")));
        }
        validate_tissue(r.label, &r.tissue)?;
    }
    let [nx, ny, nz] = spec.dims;
    let template = Volume4D::zeros([nx, ny, nz, 1], spec.spacing)?;
    let nvox = template.voxels();
    let mut owner: Vec<Option<usize>> = vec![None; nvox];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = x + nx * (y + ny * z);
                for (ri, r) in spec.regions.iter().enumerate() {
                    if !r.shape.contains([x, y, z]) {
                        continue;
                    }
                    match owner[idx] {
                        None => owner[idx] = Some(ri),
                        Some(prev) if spec.regions[prev].tissue != r.tissue => {
                            return Err(Error::ConflictingRegions {
                                first: spec.regions[prev].label,
                                second: r.label,
                            })
                        }
                        Some(_) => {}
                    }
                }
            }
        }
    }

    let signals: Vec<Vec<f64>> = spec
        .regions
        .iter()
        .map(|r| {
            let t = &r.tissue;
            simulate_signal(&t.tensor.tensor(), t.s0, t.f_iso, t.d_iso, &scheme)
        })
        .collect();
    let nv = scheme.len();
    let mut data = vec![0.0; nvox * nv];
    let labels: Vec<u32> = owner.iter().map(|o| o.map_or(0, |ri| spec.regions[ri].label)).collect();
    for (idx, o) in owner.iter().enumerate() {
        if let Some(ri) = *o {
            for (v, s) in signals[ri].iter().enumerate() {
                data[v * nvox + idx] = *s;
            }
        }
    }
    let clean = template.with_data(nv, data)?;
    let fg = Mask::from_fn(spec.dims, |i| owner[i].is_some());
    let mut truth = TensorMap::new(&template, fg)?;
    for (idx, o) in owner.iter().enumerate() {
        if let Some(ri) = *o {
            let t = &spec.regions[ri].tissue;
            truth.set(idx, t.tensor.tensor(), libm::log(t.s0));
        }
    }
    let dwi = match spec.noise {
        Some(n) => add_noise(&clean, n.model, n.sigma, seed)?,
        None => clean.clone(),
    };
    Ok(Phantom { dwi, clean, scheme, truth, labels: LabelVolume::new(spec.dims, labels)? })
}

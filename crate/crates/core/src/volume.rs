//! Voxel grids, masks, label maps and gradient tables.
//!
//! Voxel data is stored spatial-fastest: `x` varies fastest, then `y`, `z`
//! and finally the volume index, so `index = x + nx*(y + ny*(z + nz*v))`.
//! Each 3D volume is therefore a contiguous slice.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// b-values at or below this (s/mm²) are treated as b=0.
pub const DEFAULT_B0_THRESHOLD: f64 = 50.0;
/// Shell grouping granularity in s/mm².
pub const DEFAULT_SHELL_ROUNDING: f64 = 100.0;

const UNIT_NORM_TOLERANCE: f64 = 1e-3;

pub type Affine = [[f64; 4]; 4];

pub fn identity_affine(spacing: [f64; 3]) -> Affine {
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    dims: [usize; 4],
    spacing: [f64; 3],
    affine: Affine,
    data: Vec<f64>,
}

impl Volume4D {
    pub fn new(dims: [usize; 4], spacing: [f64; 3], affine: Affine, data: Vec<f64>) -> Result<Self> {
        validate_grid(&dims, &spacing)?;
        let expected = dims.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::DataLength { expected, actual: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, spacing, affine, data })
    }

    /// Like [`Volume4D::new`] but replaces non-finite samples with zero.
    pub fn new_sanitized(
        dims: [usize; 4],
        spacing: [f64; 3],
        affine: Affine,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        for v in data.iter_mut().filter(|v| !v.is_finite()) {
            *v = 0.0;
        }
        Self::new(dims, spacing, affine, data)
    }

    pub fn zeros(dims: [usize; 4], spacing: [f64; 3]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, identity_affine(spacing), vec![0.0; n])
    }

    /// Empty volume on the same spatial grid with `volumes` volumes.
    pub fn zeros_like(&self, volumes: usize) -> Self {
        let dims = [self.dims[0], self.dims[1], self.dims[2], volumes];
        Self {
            dims,
            spacing: self.spacing,
            affine: self.affine,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// New volume on the same grid; `data` must be finite and sized for `volumes`.
    pub fn with_data(&self, volumes: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(
            [self.dims[0], self.dims[1], self.dims[2], volumes],
            self.spacing,
            self.affine,
            data,
        )
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    pub fn volumes(&self) -> usize {
        self.dims[3]
    }

    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn volume(&self, v: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[v * n..(v + 1) * n]
    }

    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize, v: usize) -> f64 {
        self.data[self.voxel_index(x, y, z) + self.voxels() * v]
    }

    /// Signal across all volumes at one voxel.
    pub fn series(&self, voxel: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.voxels();
        (0..self.dims[3]).map(move |v| self.data[voxel + n * v])
    }

    /// Copy the listed volumes, in order, into a new volume.
    pub fn select_volumes(&self, indices: &[usize]) -> Result<Self> {
        let count = self.volumes();
        let mut data = Vec::with_capacity(indices.len() * self.voxels());
        for &i in indices {
            if i >= count {
                return Err(Error::VolumeIndex { index: i, count });
            }
            data.extend_from_slice(self.volume(i));
        }
        Ok(Self {
            dims: [self.dims[0], self.dims[1], self.dims[2], indices.len()],
            spacing: self.spacing,
            affine: self.affine,
            data,
        })
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        check_grid(self.spatial_dims(), other.spatial_dims())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

fn validate_grid(dims: &[usize; 4], spacing: &[f64; 3]) -> Result<()> {
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(Error::ZeroDim { axis });
    }
    for (axis, &value) in spacing.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::BadSpacing { axis, value });
        }
    }
    Ok(())
}

pub(crate) fn check_grid(left: [usize; 3], right: [usize; 3]) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::GridMismatch { left, right })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    values: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], values: Vec<bool>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if expected != values.len() {
            return Err(Error::DataLength { expected, actual: values.len() });
        }
        Ok(Self { dims, values })
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { dims, values: vec![true; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 3], f: impl Fn(usize) -> bool) -> Self {
        Self { dims, values: (0..dims.iter().product()).map(f).collect() }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn contains(&self, voxel: usize) -> bool {
        self.values[voxel]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i)
    }

    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        check_grid(self.dims, other.dims)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a && *b).collect();
        Ok(Mask { dims: self.dims, values })
    }
}

/// Integer region map; label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 3],
    values: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], values: Vec<u32>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if expected != values.len() {
            return Err(Error::DataLength { expected, actual: values.len() });
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Sorted distinct non-zero labels.
    pub fn regions(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.values.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn region_mask(&self, label: u32) -> Mask {
        Mask { dims: self.dims, values: self.values.iter().map(|&l| l == label).collect() }
    }

    pub fn foreground(&self) -> Mask {
        Mask { dims: self.dims, values: self.values.iter().map(|&l| l != 0).collect() }
    }
}

/// Volumes sharing one rounded b-value. The b0 group has `bvalue == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    pub bvalue: f64,
    pub indices: Vec<usize>,
}

impl Shell {
    pub fn is_b0(&self) -> bool {
        self.bvalue == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientScheme {
    bvals: Vec<f64>,
    bvecs: Vec<[f64; 3]>,
    b0_threshold: f64,
}

impl GradientScheme {
    pub fn new(bvals: Vec<f64>, bvecs: Vec<[f64; 3]>) -> Result<Self> {
        Self::with_b0_threshold(bvals, bvecs, DEFAULT_B0_THRESHOLD)
    }

    pub fn with_b0_threshold(bvals: Vec<f64>, bvecs: Vec<[f64; 3]>, b0_threshold: f64) -> Result<Self> {
        if bvals.len() != bvecs.len() {
            return Err(Error::GradientLength { bvals: bvals.len(), bvecs: bvecs.len() });
        }
        for (index, (b, g)) in bvals.iter().zip(&bvecs).enumerate() {
            if *b > b0_threshold {
                let norm = norm3(g);
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::NonUnitDirection { index, norm });
                }
            }
        }
        Ok(Self { bvals, bvecs, b0_threshold })
    }

    pub fn len(&self) -> usize {
        self.bvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvals.is_empty()
    }

    pub fn bvals(&self) -> &[f64] {
        &self.bvals
    }

    pub fn bvecs(&self) -> &[[f64; 3]] {
        &self.bvecs
    }

    pub fn b0_threshold(&self) -> f64 {
        self.b0_threshold
    }

    pub fn is_b0(&self, i: usize) -> bool {
        self.bvals[i] <= self.b0_threshold
    }

    pub fn b0_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_b0(i)).collect()
    }

    pub fn directed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_b0(i)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let count = self.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= count) {
            return Err(Error::VolumeIndex { index, count });
        }
        Ok(Self {
            bvals: indices.iter().map(|&i| self.bvals[i]).collect(),
            bvecs: indices.iter().map(|&i| self.bvecs[i]).collect(),
            b0_threshold: self.b0_threshold,
        })
    }
}

/// Group volumes by `round(b / round_to) * round_to`; b-values at or below
/// the scheme's b0 threshold form the b0 group. Shells are returned in
/// ascending b order with the b0 group (if any) first.
pub fn shell_partition(scheme: &GradientScheme, round_to: f64) -> Vec<Shell> {
    let mut shells: Vec<Shell> = Vec::new();
    for (i, &b) in scheme.bvals().iter().enumerate() {
        let key = if scheme.is_b0(i) { 0.0 } else { libm::round(b / round_to) * round_to };
        match shells.iter_mut().find(|s| s.bvalue == key) {
            Some(shell) => shell.indices.push(i),
            None => shells.push(Shell { bvalue: key, indices: vec![i] }),
        }
    }
    shells.sort_by(|a, b| a.bvalue.total_cmp(&b.bvalue));
    shells
}

/// Lowest non-zero shell, the one tensor fits use.
pub fn lowest_shell(scheme: &GradientScheme, round_to: f64) -> Option<Shell> {
    shell_partition(scheme, round_to).into_iter().find(|s| !s.is_b0())
}

/// Voxelwise mean of the b=0 volumes.
pub fn mean_b0(vol: &Volume4D, scheme: &GradientScheme) -> Result<Volume4D> {
    if vol.volumes() != scheme.len() {
        return Err(Error::VolumeCount { expected: scheme.len(), actual: vol.volumes() });
    }
    let b0 = scheme.b0_indices();
    if b0.is_empty() {
        return Err(Error::NoB0Volumes);
    }
    let mut acc = vec![0.0; vol.voxels()];
    for &v in &b0 {
        for (a, s) in acc.iter_mut().zip(vol.volume(v)) {
            *a += s;
        }
    }
    let count = b0.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    vol.with_data(1, acc)
}

pub(crate) fn norm3(g: &[f64; 3]) -> f64 {
    libm::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
}

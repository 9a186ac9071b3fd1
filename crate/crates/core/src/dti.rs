//! Diffusion tensor estimation, derived scalars and error metrics.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::design::{condition_number, dti_design_matrix};
use crate::volume::{check_grid, Affine, GradientScheme, Mask, Volume4D};
use crate::{Error, Result};

/// Signals are floored at this fraction of the voxel's mean b0 before the log.
pub const SIGNAL_FLOOR: f64 = 1e-6;

/// Symmetric tensor stored as `[Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]` (mm²/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tensor(pub [f64; 6]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen {
    /// Descending.
    pub values: [f64; 3],
    /// Unit principal eigenvector, largest-magnitude component non-negative.
    pub v1: [f64; 3],
}

impl Tensor {
    pub fn diagonal(l1: f64, l2: f64, l3: f64) -> Self {
        Tensor([l1, l2, l3, 0.0, 0.0, 0.0])
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Tensor([m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)]])
    }

    /// `R·diag(values)·Rᵀ` with `R = [v1 v2 v3]`; `v2` is completed
    /// orthogonally when not supplied.
    pub fn from_eigen(values: [f64; 3], v1: [f64; 3], v2: Option<[f64; 3]>) -> Self {
        let e1 = nalgebra::Vector3::from(v1).normalize();
        let helper = if e1.x.abs() < 0.9 { nalgebra::Vector3::x() } else { nalgebra::Vector3::y() };
        let e2 = match v2 {
            Some(v) => {
                let v = nalgebra::Vector3::from(v);
                (v - e1 * e1.dot(&v)).normalize()
            }
            None => e1.cross(&helper).normalize(),
        };
        let e3 = e1.cross(&e2);
        let r = Matrix3::from_columns(&[e1, e2, e3]);
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::from(values));
        Self::from_matrix(&(r * d * r.transpose()))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [xx, yy, zz, xy, xz, yz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// `gᵀ D g`.
    pub fn quadratic(&self, g: &[f64; 3]) -> f64 {
        let [xx, yy, zz, xy, xz, yz] = self.0;
        xx * g[0] * g[0]
            + yy * g[1] * g[1]
            + zz * g[2] * g[2]
            + 2.0 * (xy * g[0] * g[1] + xz * g[0] * g[2] + yz * g[1] * g[2])
    }

    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self::from_matrix(&(r * self.matrix() * r.transpose()))
    }

    pub fn eigen(&self) -> Eigen {
        let e = SymmetricEigen::new(self.matrix());
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
        let values = [e.eigenvalues[idx[0]], e.eigenvalues[idx[1]], e.eigenvalues[idx[2]]];
        let c = e.eigenvectors.column(idx[0]);
        let n = c.norm();
        let mut v1 = [c[0] / n, c[1] / n, c[2] / n];
        let lead = (0..3).max_by(|&a, &b| v1[a].abs().total_cmp(&v1[b].abs())).unwrap_or(0);
        if v1[lead] < 0.0 {
            v1 = [-v1[0], -v1[1], -v1[2]];
        }
        Eigen { values, v1 }
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.eigen().values[2] >= -1e-15
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalars {
    pub fa: f64,
    pub md: f64,
    pub ad: f64,
    pub rd: f64,
}

/// FA/MD/AD/RD from descending eigenvalues, clamped at zero first.
pub fn scalars_from_eigenvalues(values: [f64; 3]) -> Scalars {
    let l = values.map(|v| v.max(0.0));
    let md = (l[0] + l[1] + l[2]) / 3.0;
    let norm = libm::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
    let dev = libm::sqrt(l.iter().map(|v| (v - md) * (v - md)).sum::<f64>());
    let fa = if norm > 0.0 { (libm::sqrt(1.5) * dev / norm).clamp(0.0, 1.0) } else { 0.0 };
    Scalars { fa, md, ad: l[0], rd: (l[1] + l[2]) / 2.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorMap {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
    tensors: Vec<Tensor>,
    log_s0: Vec<f64>,
    fitted: Mask,
}

impl TensorMap {
    /// Map on the grid of `template` with the given voxels fitted.
    pub fn new(template: &Volume4D, fitted: Mask) -> Result<Self> {
        check_grid(template.spatial_dims(), fitted.dims())?;
        let n = template.voxels();
        Ok(Self {
            dims: template.spatial_dims(),
            spacing: template.spacing(),
            affine: *template.affine(),
            tensors: vec![Tensor::default(); n],
            log_s0: vec![0.0; n],
            fitted,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn mask(&self) -> &Mask {
        &self.fitted
    }

    pub fn tensor(&self, voxel: usize) -> Option<&Tensor> {
        self.fitted.contains(voxel).then(|| &self.tensors[voxel])
    }

    pub fn log_s0(&self, voxel: usize) -> f64 {
        self.log_s0[voxel]
    }

    pub fn set(&mut self, voxel: usize, tensor: Tensor, log_s0: f64) {
        self.tensors[voxel] = tensor;
        self.log_s0[voxel] = log_s0;
    }

    fn volume(&self, volumes: usize, data: Vec<f64>) -> Volume4D {
        Volume4D::new_sanitized(
            [self.dims[0], self.dims[1], self.dims[2], volumes],
            self.spacing,
            self.affine,
            data,
        )
        .expect("grid validated at construction")
    }

    /// Six tensor components as a 6-volume image (background 0).
    pub fn components(&self) -> Volume4D {
        let n = self.tensors.len();
        let mut data = vec![0.0; 6 * n];
        for v in self.fitted.indices() {
            for c in 0..6 {
                data[c * n + v] = self.tensors[v].0[c];
            }
        }
        self.volume(6, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Ols,
    /// One reweighting step with weights from the OLS prediction.
    Wls,
}

/// Voxelwise log-linear tensor fit over every volume of `scheme`.
pub fn fit_dti(vol: &Volume4D, scheme: &GradientScheme, mask: &Mask, method: FitMethod) -> Result<TensorMap> {
    check_grid(vol.spatial_dims(), mask.dims())?;
    if vol.volumes() != scheme.len() {
        return Err(Error::VolumeCount { expected: scheme.len(), actual: vol.volumes() });
    }
    let b0 = scheme.b0_indices();
    let directed = scheme.len() - b0.len();
    if directed < 6 || b0.is_empty() {
        return Err(Error::InsufficientDirections { directed, b0: b0.len() });
    }
    let design = dti_design_matrix(scheme);
    match condition_number(&design) {
        Ok(_) => {}
        Err(Error::RankDeficient) => return Err(Error::SingularDesign),
        Err(e) => return Err(e),
    }
    let a = design.into_matrix();
    let pinv = a.clone().pseudo_inverse(0.0).map_err(|_| Error::SingularDesign)?;

    let voxels: Vec<usize> = mask.indices().collect();
    let fits = crate::exec::map_indices(&voxels, |voxel| {
        let signal: Vec<f64> = vol.series(voxel).collect();
        let s0 = b0.iter().map(|&i| signal[i]).sum::<f64>() / b0.len() as f64;
        let floor = if s0 > 0.0 { SIGNAL_FLOOR * s0 } else { SIGNAL_FLOOR };
        let y = DVector::from_iterator(signal.len(), signal.iter().map(|&s| libm::log(s.max(floor))));
        let ols = &pinv * &y;
        let x = match method {
            FitMethod::Ols => ols,
            FitMethod::Wls => weighted_step(&a, &y, &ols).unwrap_or(ols),
        };
        (Tensor([x[0], x[1], x[2], x[3], x[4], x[5]]), x[6])
    });
    let mut map = TensorMap::new(vol, mask.clone())?;
    for (&voxel, (t, ls0)) in voxels.iter().zip(fits) {
        map.set(voxel, t, ls0);
    }
    Ok(map)
}

fn weighted_step(a: &DMatrix<f64>, y: &DVector<f64>, initial: &DVector<f64>) -> Option<DVector<f64>> {
    let pred = a * initial;
    let mut normal = DMatrix::<f64>::zeros(7, 7);
    let mut rhs = DVector::<f64>::zeros(7);
    for i in 0..a.nrows() {
        let w = libm::exp(2.0 * pred[i]);
        if !w.is_finite() {
            return None;
        }
        let row = a.row(i);
        for p in 0..7 {
            rhs[p] += w * row[p] * y[i];
            for q in 0..7 {
                normal[(p, q)] += w * row[p] * row[q];
            }
        }
    }
    let chol = normal.cholesky()?;
    let x = chol.solve(&rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Scalar maps (FA, MD, AD, RD) and the 3-volume V1 map of a tensor map.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorScalars {
    pub fa: Volume4D,
    pub md: Volume4D,
    pub ad: Volume4D,
    pub rd: Volume4D,
    pub v1: Volume4D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtiScalar {
    Fa,
    Md,
    Ad,
    Rd,
}

impl DtiScalar {
    pub const ALL: [DtiScalar; 4] = [DtiScalar::Fa, DtiScalar::Md, DtiScalar::Ad, DtiScalar::Rd];

    pub fn name(self) -> &'static str {
        match self {
            DtiScalar::Fa => "FA",
            DtiScalar::Md => "MD",
            DtiScalar::Ad => "AD",
            DtiScalar::Rd => "RD",
        }
    }

    /// Factor applied before differencing: diffusivities are reported in
    /// µm²/ms (×10³ from mm²/s).
    pub fn mae_scale(self) -> f64 {
        match self {
            DtiScalar::Fa => 1.0,
            _ => 1e3,
        }
    }
}

impl TensorScalars {
    pub fn get(&self, which: DtiScalar) -> &Volume4D {
        match which {
            DtiScalar::Fa => &self.fa,
            DtiScalar::Md => &self.md,
            DtiScalar::Ad => &self.ad,
            DtiScalar::Rd => &self.rd,
        }
    }
}

pub fn tensor_scalars(t: &TensorMap) -> TensorScalars {
    let n = t.tensors.len();
    let (mut fa, mut md, mut ad, mut rd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut v1 = vec![0.0; 3 * n];
    for voxel in t.fitted.indices() {
        let e = t.tensors[voxel].eigen();
        let s = scalars_from_eigenvalues(e.values);
        fa[voxel] = s.fa;
        md[voxel] = s.md;
        ad[voxel] = s.ad;
        rd[voxel] = s.rd;
        for c in 0..3 {
            v1[c * n + voxel] = e.v1[c];
        }
    }
    TensorScalars {
        fa: t.volume(1, fa),
        md: t.volume(1, md),
        ad: t.volume(1, ad),
        rd: t.volume(1, rd),
        v1: t.volume(3, v1),
    }
}

fn check_pair(a: &Volume4D, b: &Volume4D, mask: &Mask) -> Result<()> {
    a.same_grid(b)?;
    check_grid(a.spatial_dims(), mask.dims())?;
    if a.volumes() != b.volumes() {
        return Err(Error::VolumeCount { expected: a.volumes(), actual: b.volumes() });
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Mean of `|a - b|` over masked voxels of a scalar (single-volume) map.
pub fn mae_scalar(a: &Volume4D, b: &Volume4D, mask: &Mask) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (x, y) = (a.volume(0), b.volume(0));
    let sum: f64 = mask.indices().map(|i| (x[i] - y[i]).abs()).sum();
    Ok(sum / mask.count() as f64)
}

/// MAE of one tensor scalar in reporting units.
pub fn scalar_mae(truth: &TensorScalars, estimate: &TensorScalars, mask: &Mask, which: DtiScalar) -> Result<f64> {
    Ok(mae_scalar(truth.get(which), estimate.get(which), mask)? * which.mae_scale())
}

/// Angle in degrees between two axes, ignoring sign.
pub fn axis_angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let c = libm::sqrt(cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]);
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs();
    libm::atan2(c, d).to_degrees()
}

/// Mean antipodal-invariant angle (degrees) between two 3-volume V1 maps.
pub fn v1_angular_error(a: &Volume4D, b: &Volume4D, mask: &Mask) -> Result<f64> {
    check_pair(a, b, mask)?;
    if a.volumes() != 3 {
        return Err(Error::VolumeCount { expected: 3, actual: a.volumes() });
    }
    let sum: f64 = mask
        .indices()
        .map(|i| {
            let va = [a.volume(0)[i], a.volume(1)[i], a.volume(2)[i]];
            let vb = [b.volume(0)[i], b.volume(1)[i], b.volume(2)[i]];
            axis_angle_deg(va, vb)
        })
        .sum();
    Ok(sum / mask.count() as f64)
}

//! Declarative benchmark runner.
//!
//! A run ingests a phantom or files, optionally reduces resolution in
//! k-space and adds noise, then for every direction subset and every method
//! (raw plus each denoiser) fits the model on the subsampled data and scores
//! it against the ground truth. Results go to `report.csv` and a
//! `manifest.json` of versions, seeds and content hashes. Identical configs
//! give byte-identical outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use dmri_core::design::{select_subset, Model, SelectOptions};
use dmri_core::dti::{fit_dti, tensor_scalars, v1_angular_error, DtiScalar, FitMethod, TensorMap, TensorScalars};
use dmri_core::jsd::jsd_map;
use dmri_core::mppca::{denoise_mppca, residual_moments, Aggregation, PatchConfig, Pool};
use dmri_core::phantom::{add_noise, kspace_downsample, make_phantom, NoiseSpec, PhantomSpec, Upsample};
use dmri_core::reliability::region_means;
use dmri_core::sh::{coefficient_count, fit_sh, project_sh, ShCoeffMap};
use dmri_core::sphere::make_hemisphere_362;
use dmri_core::volume::{lowest_shell, shell_partition, DEFAULT_B0_THRESHOLD, DEFAULT_SHELL_ROUNDING};
use dmri_core::{GradientScheme, LabelVolume, Mask, Shell, Volume4D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::external::ExternalDenoiser;
use crate::gradients::read_gradients_with;
use crate::nifti::{read_labels, read_mask, read_nifti, write_nifti, Datatype};
use crate::tables::{write_report, ReportRow};
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Required whenever a stochastic step (noise, direction selection) runs.
    #[serde(default)]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub input: InputSpec,
    /// Defaults to `analytic` for phantoms and `full` for files.
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub augment: Option<AugmentSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub denoisers: Vec<DenoiserSpec>,
    #[serde(default)]
    pub subsets: Vec<SubsetSpec>,
    /// Metrics to report; empty means every metric applicable to a subset.
    #[serde(default)]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub moments: Option<MomentsSpec>,
    #[serde(default)]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub fit_method: FitMethodSpec,
    #[serde(default = "default_b0_threshold")]
    pub b0_threshold: f64,
    #[serde(default = "default_shell_rounding")]
    pub shell_rounding: f64,
    /// Also write per-method FA maps of every DTI subset.
    #[serde(default)]
    pub write_maps: bool,
}

fn default_b0_threshold() -> f64 {
    DEFAULT_B0_THRESHOLD
}

fn default_shell_rounding() -> f64 {
    DEFAULT_SHELL_ROUNDING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    Phantom(PhantomSpec),
    Files(FileInputs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileInputs {
    pub dwi: PathBuf,
    pub bval: PathBuf,
    pub bvec: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// Region tensors of the phantom, and SH fits of its noise-free signal.
    Analytic,
    /// Fits of the fully sampled data before denoising.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    /// Resolution reduction factor applied to every axis.
    #[serde(default)]
    pub factor: Option<f64>,
    /// Target spacing in mm, as an alternative to `factor`.
    #[serde(default)]
    pub target_spacing: Option<[f64; 3]>,
    #[serde(default)]
    pub upsample: UpsampleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleSpec {
    #[default]
    ZeroFill,
    Linear,
}

impl From<UpsampleSpec> for Upsample {
    fn from(u: UpsampleSpec) -> Self {
        match u {
            UpsampleSpec::ZeroFill => Upsample::ZeroFill,
            UpsampleSpec::Linear => Upsample::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    None,
    Mppca {
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        aggregation: AggregationSpec,
    },
    External {
        name: String,
        /// Shell command with `{in}` and `{out}` placeholders.
        command: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_radius() -> usize {
    2
}

fn default_stride() -> usize {
    1
}

fn default_timeout_secs() -> u64 {
    3600
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationSpec {
    #[default]
    Overlap,
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubsetSpec {
    Dti {
        #[serde(default = "default_dti_k")]
        k: usize,
        /// b-value of the shell to draw from; the lowest shell by default.
        #[serde(default)]
        shell: Option<f64>,
    },
    Sh {
        order: usize,
        /// Defaults to the coefficient count of `order`.
        #[serde(default)]
        k: Option<usize>,
        shell: f64,
        #[serde(default)]
        lambda: f64,
    },
}

fn default_dti_k() -> usize {
    6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    FaMae,
    MdMae,
    AdMae,
    RdMae,
    V1Angle,
    Jsd,
    RegionalMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSpec {
    /// Label whose voxels form the pool.
    pub region: u32,
    /// Shell whose volumes form the pool.
    pub bvalue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub restarts: usize,
    pub iterations: usize,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        let d = SelectOptions::default();
        Self { restarts: d.restarts, iterations: d.iterations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethodSpec {
    Ols,
    #[default]
    Wls,
}

impl From<FitMethodSpec> for FitMethod {
    fn from(m: FitMethodSpec) -> Self {
        match m {
            FitMethodSpec::Ols => FitMethod::Ols,
            FitMethodSpec::Wls => FitMethod::Wls,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
        // relative paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output_dir = base.join(&cfg.output_dir);
        if let InputSpec::Files(f) = &mut cfg.input {
            for p in [&mut f.dwi, &mut f.bval, &mut f.bvec] {
                *p = base.join(&*p);
            }
            for p in [&mut f.mask, &mut f.labels].into_iter().flatten() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn is_stochastic(&self) -> bool {
        let phantom_noise = matches!(&self.input, InputSpec::Phantom(p) if p.noise.is_some());
        phantom_noise || self.noise.is_some() || !self.subsets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_stochastic() && self.seed.is_none() {
            return Err(Error::Config("a seed is required when noise or direction selection is configured".into()));
        }
        if let InputSpec::Files(f) = &self.input {
            let listed = [Some(&f.dwi), Some(&f.bval), Some(&f.bvec), f.mask.as_ref(), f.labels.as_ref()];
            for p in listed.into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::Config(format!("input file {} does not exist", p.display())));
                }
            }
            if self.ground_truth == Some(GroundTruth::Analytic) {
                return Err(Error::Config("analytic ground truth needs a phantom input".into()));
            }
        }
        if let Some(a) = &self.augment {
            if a.factor.is_some() == a.target_spacing.is_some() {
                return Err(Error::Config("augment needs exactly one of factor or target_spacing".into()));
            }
        }
        let mut names = vec!["raw".to_string()];
        for d in &self.denoisers {
            let name = method_name(d);
            if names.contains(&name) {
                return Err(Error::Config(format!("duplicate method name {name:?}")));
            }
            if let DenoiserSpec::External { command, .. } = d {
                ExternalDenoiser::new(command.clone())?;
            }
            names.push(name);
        }
        if !(self.b0_threshold >= 0.0 && self.shell_rounding > 0.0) {
            return Err(Error::Config("b0_threshold must be >= 0 and shell_rounding > 0".into()));
        }
        Ok(())
    }
}

fn method_name(d: &DenoiserSpec) -> String {
    match d {
        DenoiserSpec::None => "none".into(),
        DenoiserSpec::Mppca { .. } => "mppca".into(),
        DenoiserSpec::External { name, .. } => name.clone(),
    }
}

enum Method {
    Raw,
    Identity(String),
    Mppca(PatchConfig),
    External(String, ExternalDenoiser),
}

impl Method {
    fn from_spec(d: &DenoiserSpec) -> Result<Self> {
        Ok(match d {
            DenoiserSpec::None => Method::Identity("none".into()),
            DenoiserSpec::Mppca { radius, stride, aggregation } => Method::Mppca(PatchConfig {
                radius: *radius,
                stride: *stride,
                aggregation: match aggregation {
                    AggregationSpec::Overlap => Aggregation::OverlapAverage,
                    AggregationSpec::Center => Aggregation::CenterOnly,
                },
            }),
            DenoiserSpec::External { name, command, timeout_secs } => Method::External(
                name.clone(),
                ExternalDenoiser::new(command.clone())?.with_timeout(Duration::from_secs(*timeout_secs)),
            ),
        })
    }

    fn name(&self) -> &str {
        match self {
            Method::Raw => "raw",
            Method::Identity(n) | Method::External(n, _) => n,
            Method::Mppca(_) => "mppca",
        }
    }

    fn apply(&self, vol: &Volume4D) -> Result<Volume4D> {
        match self {
            Method::Raw | Method::Identity(_) => Ok(vol.clone()),
            Method::Mppca(cfg) => Ok(denoise_mppca(vol, cfg)?.0),
            Method::External(_, ext) => ext.run(vol),
        }
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage { stage: name, source: Box::new(e) })
}

struct Subject {
    dwi: Volume4D,
    clean: Option<Volume4D>,
    scheme: GradientScheme,
    mask: Mask,
    labels: LabelVolume,
    truth: Option<TensorMap>,
}

fn ingest(cfg: &PipelineConfig, seed: u64) -> Result<Subject> {
    match &cfg.input {
        InputSpec::Phantom(spec) => {
            let p = make_phantom(spec, seed)?;
            let scheme = GradientScheme::with_b0_threshold(p.scheme.bvals().to_vec(), p.scheme.bvecs().to_vec(), cfg.b0_threshold)?;
            let mask = p.labels.foreground();
            Ok(Subject { dwi: p.dwi, clean: Some(p.clean), scheme, mask, labels: p.labels, truth: Some(p.truth) })
        }
        InputSpec::Files(f) => {
            let dwi = read_nifti(&f.dwi)?;
            let scheme = read_gradients_with(&f.bval, &f.bvec, cfg.b0_threshold)?;
            if scheme.len() != dwi.volumes() {
                return Err(dmri_core::Error::VolumeCount { expected: scheme.len(), actual: dwi.volumes() }.into());
            }
            let dims = dwi.spatial_dims();
            let mask = match &f.mask {
                Some(p) => read_mask(p)?,
                None => Mask::full(dims),
            };
            let labels = match &f.labels {
                Some(p) => read_labels(p)?,
                None => LabelVolume::new(dims, mask.values().iter().map(|&m| u32::from(m)).collect())?,
            };
            for other in [mask.dims(), labels.dims()] {
                if other != dims {
                    return Err(dmri_core::Error::GridMismatch { left: dims, right: other }.into());
                }
            }
            Ok(Subject { dwi, clean: None, scheme, mask, labels, truth: None })
        }
    }
}

/// Volume indices of a subset: the first b0 followed by the chosen
/// directions of one shell, plus its selection tag.
struct Subset {
    tag: String,
    indices: Vec<usize>,
    kind: SubsetKind,
    shell: Shell,
}

enum SubsetKind {
    Dti,
    Sh { order: usize, lambda: f64 },
}

fn find_shell(shells: &[Shell], b: f64, rounding: f64) -> Result<Shell> {
    shells
        .iter()
        .find(|s| !s.is_b0() && (s.bvalue - b).abs() < rounding / 2.0)
        .cloned()
        .ok_or_else(|| Error::Config(format!("no shell near b = {b}")))
}

fn build_subset(cfg: &PipelineConfig, spec: &SubsetSpec, scheme: &GradientScheme, seed: u64) -> Result<Subset> {
    let shells = shell_partition(scheme, cfg.shell_rounding);
    let (shell, k, model, kind) = match spec {
        SubsetSpec::Dti { k, shell } => {
            let s = match shell {
                Some(b) => find_shell(&shells, *b, cfg.shell_rounding)?,
                None => lowest_shell(scheme, cfg.shell_rounding).ok_or_else(|| Error::Config("no diffusion-weighted shell".into()))?,
            };
            (s, *k, Model::Dti, SubsetKind::Dti)
        }
        SubsetSpec::Sh { order, k, shell, lambda } => {
            let s = find_shell(&shells, *shell, cfg.shell_rounding)?;
            let k = k.unwrap_or(coefficient_count(*order));
            (s, k, Model::Sh(*order), SubsetKind::Sh { order: *order, lambda: *lambda })
        }
    };
    let b0 = *scheme.b0_indices().first().ok_or(dmri_core::Error::NoB0Volumes)?;
    let candidates: Vec<[f64; 3]> = shell.indices.iter().map(|&i| scheme.bvecs()[i]).collect();
    let opts = SelectOptions { seed, restarts: cfg.selection.restarts, iterations: cfg.selection.iterations };
    let chosen = select_subset(&candidates, k, model, opts)?;
    let mut indices = vec![b0];
    indices.extend(chosen.indices.iter().map(|&i| shell.indices[i]));
    let tag = match &kind {
        SubsetKind::Dti => format!("dti{k}"),
        SubsetKind::Sh { order, .. } => format!("sh{order}_k{k}_b{}", shell.bvalue),
    };
    Ok(Subset { tag, indices, kind, shell })
}

/// Shell volumes (with the b0 group) of a volume, for SH fits.
fn shell_fit(vol: &Volume4D, scheme: &GradientScheme, shell: &Shell, mask: &Mask, order: usize, lambda: f64) -> Result<ShCoeffMap> {
    Ok(fit_sh(vol, scheme, shell, mask, order, lambda)?)
}

fn wants(cfg: &PipelineConfig, m: MetricKind) -> bool {
    cfg.metrics.is_empty() || cfg.metrics.contains(&m)
}

struct Rows<'a> {
    rows: Vec<ReportRow>,
    regions: &'a [(String, Mask)],
}

impl Rows<'_> {
    fn push(&mut self, method: &str, metric: String, region: &str, value: f64) {
        self.rows.push(ReportRow { method: method.into(), metric, region: region.into(), value });
    }

    fn per_region(&mut self, method: &str, metric: &str, f: impl Fn(&Mask) -> Result<f64>) -> Result<()> {
        for (name, mask) in self.regions {
            if mask.count() == 0 {
                continue;
            }
            let v = f(mask)?;
            self.push(method, metric.to_string(), name, v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub ground_truth: GroundTruth,
    pub methods: Vec<String>,
    pub subsets: BTreeMap<String, Vec<usize>>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(Error::io(path))?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rows: Vec<ReportRow>,
    pub manifest: Manifest,
    pub output_dir: PathBuf,
}

/// Run a validated configuration. Outputs are staged and only moved into
/// `output_dir` once every stage has succeeded.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let created = !cfg.output_dir.exists();
    fs::create_dir_all(&cfg.output_dir).map_err(Error::io(&cfg.output_dir))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(&cfg.output_dir)
        .map_err(Error::io(&cfg.output_dir));
    let result = staging.and_then(|dir| {
        let summary = execute(cfg, dir.path())?;
        for entry in fs::read_dir(dir.path()).map_err(Error::io(dir.path()))? {
            let entry = entry.map_err(Error::io(dir.path()))?;
            let dest = cfg.output_dir.join(entry.file_name());
            fs::rename(entry.path(), &dest).map_err(Error::io(&dest))?;
        }
        Ok(summary)
    });
    if result.is_err() && created {
        let _ = fs::remove_dir_all(&cfg.output_dir);
    }
    result
}

fn execute(cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    let seed = cfg.seed.unwrap_or(0);
    let mut subject = stage("ingest", || ingest(cfg, seed))?;
    let ground_truth = cfg.ground_truth.unwrap_or(match cfg.input {
        InputSpec::Phantom(_) => GroundTruth::Analytic,
        InputSpec::Files(_) => GroundTruth::Full,
    });

    if let Some(a) = &cfg.augment {
        subject.dwi = stage("augment", || {
            let target = match (a.factor, a.target_spacing) {
                (Some(f), _) => subject.dwi.spacing().map(|s| s * f),
                (_, Some(t)) => t,
                _ => unreachable!("validated"),
            };
            Ok(kspace_downsample(&subject.dwi, target, a.upsample.into())?)
        })?;
    }
    if let Some(n) = cfg.noise {
        // the phantom's own noise uses `seed`; pipeline noise a separate stream
        subject.dwi = stage("noise", || Ok(add_noise(&subject.dwi, n.model, n.sigma, seed.wrapping_add(1))?))?;
    }

    let methods: Vec<Method> = std::iter::once(Ok(Method::Raw))
        .chain(cfg.denoisers.iter().map(Method::from_spec))
        .collect::<Result<_>>()?;
    let mut region_list: Vec<(String, Mask)> = vec![("all".into(), subject.mask.clone())];
    for r in subject.labels.regions() {
        let m = stage("ingest", || Ok(subject.labels.region_mask(r).intersect(&subject.mask)?))?;
        region_list.push((r.to_string(), m));
    }
    let mut rows = Rows { rows: Vec::new(), regions: &region_list };
    let fit_method: FitMethod = cfg.fit_method.into();
    let mut subset_indices = BTreeMap::new();
    let mut maps: Vec<(String, Volume4D)> = Vec::new();

    // ground-truth DTI maps, computed on first use
    let mut dti_truth: Option<TensorScalars> = None;
    for spec in &cfg.subsets {
        let subset = stage("subset", || build_subset(cfg, spec, &subject.scheme, seed))?;
        subset_indices.insert(subset.tag.clone(), subset.indices.clone());
        let sub_scheme = subject.scheme.subset(&subset.indices)?;
        let sub_raw = subject.dwi.select_volumes(&subset.indices)?;
        match subset.kind {
            SubsetKind::Dti => {
                if dti_truth.is_none() {
                    dti_truth = Some(stage("fit", || {
                        let map = match (ground_truth, &subject.truth) {
                            (GroundTruth::Analytic, Some(t)) => t.clone(),
                            _ => fit_dti(&subject.dwi, &subject.scheme, &subject.mask, fit_method)?,
                        };
                        Ok(tensor_scalars(&map))
                    })?);
                }
                let truth = dti_truth.as_ref().expect("computed above");
                for method in &methods {
                    let den = stage("denoise", || method.apply(&sub_raw))?;
                    let est = stage("fit", || Ok(tensor_scalars(&fit_dti(&den, &sub_scheme, &subject.mask, fit_method)?)))?;
                    stage("metrics", || {
                        for (kind, which) in [
                            (MetricKind::FaMae, DtiScalar::Fa),
                            (MetricKind::MdMae, DtiScalar::Md),
                            (MetricKind::AdMae, DtiScalar::Ad),
                            (MetricKind::RdMae, DtiScalar::Rd),
                        ] {
                            if wants(cfg, kind) {
                                let metric = format!("{}_{}_mae", subset.tag, which.name());
                                rows.per_region(method.name(), &metric, |m| {
                                    Ok(dmri_core::dti::scalar_mae(truth, &est, m, which)?)
                                })?;
                            }
                        }
                        if wants(cfg, MetricKind::V1Angle) {
                            let metric = format!("{}_v1_angle", subset.tag);
                            rows.per_region(method.name(), &metric, |m| Ok(v1_angular_error(&truth.v1, &est.v1, m)?))?;
                        }
                        if wants(cfg, MetricKind::RegionalMeans) {
                            for which in DtiScalar::ALL {
                                let stats = region_means(est.get(which), &subject.labels)?;
                                for (r, s) in stats {
                                    rows.push(method.name(), format!("{}_{}_mean", subset.tag, which.name()), &r.to_string(), s.mean);
                                }
                            }
                        }
                        Ok(())
                    })?;
                    if cfg.write_maps {
                        maps.push((format!("{}_{}_fa.nii.gz", method.name(), subset.tag), est.fa.clone()));
                    }
                }
            }
            SubsetKind::Sh { order, lambda } => {
                if !wants(cfg, MetricKind::Jsd) {
                    continue;
                }
                let hemi = make_hemisphere_362();
                let truth = stage("fit", || {
                    let source = match (ground_truth, &subject.clean) {
                        (GroundTruth::Analytic, Some(c)) => c,
                        _ => &subject.dwi,
                    };
                    let full = shell_fit(source, &subject.scheme, &subset.shell, &subject.mask, order, lambda)?;
                    Ok(project_sh(&full, hemi.directions())?)
                })?;
                let sub_shell = Shell { bvalue: subset.shell.bvalue, indices: (1..subset.indices.len()).collect() };
                for method in &methods {
                    let den = stage("denoise", || method.apply(&sub_raw))?;
                    let est = stage("fit", || {
                        let map = shell_fit(&den, &sub_scheme, &sub_shell, &subject.mask, order, lambda)?;
                        Ok(project_sh(&map, hemi.directions())?)
                    })?;
                    stage("metrics", || {
                        let jsd = jsd_map(&truth, &est, &subject.mask)?;
                        let metric = format!("{}_jsd", subset.tag);
                        rows.per_region(method.name(), &metric, |m| {
                            Ok(m.indices().map(|i| jsd.data()[i]).sum::<f64>() / m.count() as f64)
                        })
                    })?;
                }
            }
        }
    }

    if let Some(ms) = &cfg.moments {
        stage("moments", || {
            let shells = shell_partition(&subject.scheme, cfg.shell_rounding);
            let shell = find_shell(&shells, ms.bvalue, cfg.shell_rounding)?;
            let region = subject.labels.region_mask(ms.region).intersect(&subject.mask)?;
            let raw = subject.dwi.select_volumes(&shell.indices)?;
            let region_name = ms.region.to_string();
            for method in &methods {
                // the whole acquisition is denoised, then the shell is pooled
                let den = method.apply(&subject.dwi)?.select_volumes(&shell.indices)?;
                let m = residual_moments(&raw, &den, &region, Pool::Denoised)?;
                let tag = format!("b{}", shell.bvalue);
                for (name, v) in [("mean", m.mean), ("variance", m.variance), ("skewness", m.skewness), ("excess_kurtosis", m.excess_kurtosis)] {
                    rows.push(method.name(), format!("moments_{tag}_{name}"), &region_name, v);
                }
            }
            Ok(())
        })?;
    }

    let report_rows = rows.rows;
    stage("report", || {
        let mut buf = Vec::new();
        write_report(&mut buf, &report_rows).map_err(Error::io(out.join(REPORT_FILE)))?;
        fs::write(out.join(REPORT_FILE), &buf).map_err(Error::io(out.join(REPORT_FILE)))?;
        for (name, vol) in &maps {
            write_nifti(vol, out.join(name), Datatype::Float32)?;
        }
        Ok(())
    })?;

    let manifest = stage("manifest", || {
        let mut inputs = Vec::new();
        if let InputSpec::Files(f) = &cfg.input {
            let listed = [Some(&f.dwi), Some(&f.bval), Some(&f.bvec), f.mask.as_ref(), f.labels.as_ref()];
            for p in listed.into_iter().flatten() {
                inputs.push(FileHash { path: p.display().to_string(), sha256: hash_file(p)? });
            }
        }
        let mut outputs = vec![FileHash { path: REPORT_FILE.into(), sha256: hash_file(&out.join(REPORT_FILE))? }];
        for (name, _) in &maps {
            outputs.push(FileHash { path: name.clone(), sha256: hash_file(&out.join(name))? });
        }
        // hash the config without its output location so reruns elsewhere match
        let mut canonical = cfg.clone();
        canonical.output_dir = PathBuf::new();
        let config_json = serde_json::to_vec(&canonical).map_err(|source| Error::Json { path: MANIFEST_FILE.into(), source })?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config_sha256: sha256_hex(&config_json),
            ground_truth,
            methods: methods.iter().map(|m| m.name().to_string()).collect(),
            subsets: subset_indices,
            inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json { path: MANIFEST_FILE.into(), source })?;
        text.push('\n');
        fs::write(out.join(MANIFEST_FILE), text).map_err(Error::io(out.join(MANIFEST_FILE)))?;
        Ok(manifest)
    })?;

    Ok(RunSummary { rows: report_rows, manifest, output_dir: cfg.output_dir.clone() })
}

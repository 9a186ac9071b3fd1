use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmri::core::design::{select_subset, Model, SelectOptions};
use dmri::core::dti::{fit_dti, mae_scalar, tensor_scalars, v1_angular_error, FitMethod};
use dmri::core::jsd::jsd_map;
use dmri::core::mppca::{denoise_mppca, residual_moments, Aggregation, PatchConfig, Pool};
use dmri::core::phantom::{add_noise, kspace_downsample, make_phantom, NoiseModel, PhantomSpec, Upsample};
use dmri::core::reliability::{aggregate_cov, cov_within_subject, region_means, scn_build, scn_mae, scn_repeatability};
use dmri::core::sh::{fit_sh, order_for_count, project_sh, ShCoeffMap};
use dmri::core::sphere::make_hemisphere_362;
use dmri::core::volume::{lowest_shell, shell_partition, DEFAULT_B0_THRESHOLD, DEFAULT_SHELL_ROUNDING};
use dmri::core::{GradientScheme, LabelVolume, Mask, Shell, Volume4D};
use dmri::external::ExternalDenoiser;
use dmri::gradients::{read_gradients_with, write_gradients};
use dmri::nifti::{read_labels, read_mask, read_nifti, write_labels, write_nifti, Datatype};
use dmri::pipeline::{run_pipeline, PipelineConfig};
use dmri::tables::{read_regional_table, read_scn, write_metric_rows, write_scn};
use dmri::{Error, Result};

/// Diffusion MRI acquisition design, fitting, denoising and evaluation.
///
/// Units: b-values in s/mm², diffusivities in mm²/s (MAE reported in µm²/ms),
/// spacing in mm, angles in degrees.
#[derive(Parser)]
#[command(name = "dmri", version)]
struct Cli {
    /// Worker threads; the CPU count when unset.
    #[arg(long, global = true, env = "DMRI_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic phantoms.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Magnitude noise.
    #[command(subcommand)]
    Noise(NoiseCmd),
    /// Resolution augmentation.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Denoisers.
    #[command(subcommand)]
    Denoise(DenoiseCmd),
    /// Pick the direction subset that minimises the design condition number.
    SelectDirs(SelectDirsArgs),
    /// Model fits.
    #[command(subcommand)]
    Fit(FitCmd),
    /// Evaluation metrics, printed as `metric,region,value` CSV.
    #[command(subcommand)]
    Metric(MetricCmd),
    /// Structural covariance networks.
    #[command(subcommand)]
    Scn(ScnCmd),
    /// Run a JSON-configured benchmark.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Render a phantom spec (JSON) to NIfTI and FSL gradient files.
    Gen(PhantomGenArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Phantom spec JSON (dims, spacing in mm, regions, scheme, noise).
    #[arg(long)]
    spec: PathBuf,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <prefix>_dwi.nii.gz, _clean.nii.gz, _labels.nii.gz,
    /// _truth_{fa,md,ad,rd,v1}.nii.gz, .bval and .bvec.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Subcommand)]
enum NoiseCmd {
    /// Add Rician or Gaussian noise of standard deviation sigma (signal units).
    Add(NoiseAddArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Rician,
    Gaussian,
}

#[derive(Args)]
struct NoiseAddArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "rician")]
    model: NoiseArg,
    /// Noise standard deviation, in signal units.
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum AugmentCmd {
    /// Crop k-space to a coarser resolution and return to the native grid.
    Kspace(KspaceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum UpsampleArg {
    ZeroFill,
    Linear,
}

#[derive(Args)]
struct KspaceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Resolution reduction factor on every axis (2 halves the resolution).
    #[arg(long, conflicts_with = "target_spacing", required_unless_present = "target_spacing")]
    factor: Option<f64>,
    /// Target spacing in mm as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 1, value_name = "X,Y,Z")]
    target_spacing: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "zero-fill")]
    upsample: UpsampleArg,
}

#[derive(Subcommand)]
enum DenoiseCmd {
    /// Local-patch PCA with Marchenko–Pastur rank selection.
    Mppca(MppcaArgs),
    /// Run an external command with {in} and {out} NIfTI placeholders.
    External(ExternalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Overlap,
    Center,
}

#[derive(Args)]
struct MppcaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Patch radius in voxels (patch width 2r+1).
    #[arg(long, default_value_t = 2)]
    radius: usize,
    /// Patch stride in voxels.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, value_enum, default_value = "overlap")]
    agg: AggArg,
    /// Noise standard deviation map (signal units).
    #[arg(long)]
    sigma_out: Option<PathBuf>,
    /// Retained component count map.
    #[arg(long)]
    npars_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExternalArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Shell command template, e.g. "my_denoiser {in} {out}".
    #[arg(long)]
    command: String,
    /// Timeout in seconds.
    #[arg(long, default_value_t = 3600)]
    timeout: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Dti,
    Sh,
}

#[derive(Args)]
struct GradientArgs {
    /// FSL bval file (s/mm²).
    #[arg(long)]
    bval: PathBuf,
    /// FSL bvec file (3 rows of unit vectors).
    #[arg(long)]
    bvec: PathBuf,
    /// b-values at or below this count as b=0 (s/mm²).
    #[arg(long, default_value_t = DEFAULT_B0_THRESHOLD)]
    b0_threshold: f64,
    /// Shell grouping resolution (s/mm²).
    #[arg(long, default_value_t = DEFAULT_SHELL_ROUNDING)]
    shell_rounding: f64,
}

impl GradientArgs {
    fn load(&self) -> Result<GradientScheme> {
        read_gradients_with(&self.bval, &self.bvec, self.b0_threshold)
    }

    fn shell(&self, scheme: &GradientScheme, b: Option<f64>) -> Result<Shell> {
        let found = match b {
            Some(b) => shell_partition(scheme, self.shell_rounding)
                .into_iter()
                .find(|s| !s.is_b0() && (s.bvalue - b).abs() < self.shell_rounding / 2.0),
            None => lowest_shell(scheme, self.shell_rounding),
        };
        found.ok_or_else(|| Error::Config(format!("no shell near b = {}", b.unwrap_or(0.0))))
    }
}

#[derive(Args)]
struct SelectDirsArgs {
    #[command(flatten)]
    grad: GradientArgs,
    /// Number of directions to keep.
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "dti")]
    model: ModelArg,
    /// Even SH order for --model sh.
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Shell b-value to draw from (s/mm²); the lowest shell by default.
    #[arg(long)]
    shell: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SelectOptions::default().restarts)]
    restarts: usize,
    /// Random exchange attempts per restart.
    #[arg(long, default_value_t = SelectOptions::default().iterations)]
    iterations: usize,
    /// Write the subset (first b0 plus chosen directions) as bval/bvec.
    #[arg(long, requires = "out_bvec")]
    out_bval: Option<PathBuf>,
    #[arg(long, requires = "out_bval")]
    out_bvec: Option<PathBuf>,
    /// Optional DWI to subset alongside the gradients.
    #[arg(long, requires = "out_dwi")]
    dwi: Option<PathBuf>,
    #[arg(long, requires = "dwi")]
    out_dwi: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FitCmd {
    /// Log-linear tensor fit; writes FA, MD, AD, RD (mm²/s) and V1 maps.
    Dti(FitDtiArgs),
    /// Spherical-harmonic fit of one shell's normalised signal.
    Shm(FitShmArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    Ols,
    Wls,
}

#[derive(Args)]
struct FitDtiArgs {
    #[arg(long)]
    dwi: PathBuf,
    #[command(flatten)]
    grad: GradientArgs,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wls")]
    method: FitArg,
    /// Writes <prefix>_fa/_md/_ad/_rd/_v1/_tensor.nii.gz.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct FitShmArgs {
    #[arg(long)]
    dwi: PathBuf,
    #[command(flatten)]
    grad: GradientArgs,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Even SH order.
    #[arg(long, default_value_t = 6)]
    order: usize,
    /// Shell b-value (s/mm²).
    #[arg(long)]
    shell: f64,
    /// Laplace–Beltrami regularisation weight (dimensionless).
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Coefficient NIfTI, one volume per coefficient.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MetricCmd {
    /// Mean absolute error of two scalar maps per region.
    Mae(PairArgs),
    /// Mean angle (degrees) between two 3-volume V1 maps per region.
    V1Angle(PairArgs),
    /// Jensen–Shannon distance of two SH coefficient maps per region.
    Jsd(PairArgs),
    /// Within-subject coefficient of variation (%) between sessions.
    Cov(CovArgs),
    /// Pooled moments of a signal, denoised signal or residual.
    Moments(MomentsArgs),
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Label map; one row per region plus `all`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Multiply values before reporting, e.g. 1000 for mm²/s → µm²/ms.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args)]
struct CovArgs {
    /// Session-1 scalar map; repeat once per subject.
    #[arg(long, required = true)]
    s1: Vec<PathBuf>,
    /// Session-2 scalar map, paired with --s1 in order.
    #[arg(long, required = true)]
    s2: Vec<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    /// Tissue class as NAME=id,id,... for aggregate rows; repeatable.
    #[arg(long = "class")]
    classes: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Raw,
    Denoised,
    Residual,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    raw: PathBuf,
    /// Denoised volume; required for the denoised and residual pools.
    #[arg(long)]
    denoised: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "raw")]
    pool: PoolArg,
}

#[derive(Subcommand)]
enum ScnCmd {
    /// Build a Pearson SCN from a subjects × regions CSV of regional means.
    Build(ScnBuildArgs),
    /// Mean absolute difference of two SCNs over the upper triangle.
    Compare(ScnCompareArgs),
}

#[derive(Args)]
struct ScnBuildArgs {
    /// CSV with header `subject,<region ids>`.
    #[arg(long)]
    table: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompareArg {
    Mae,
    Repeatability,
}

#[derive(Args)]
struct ScnCompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "mae")]
    mode: CompareArg,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration JSON.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    dmri::init_threads(cli.threads);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom(PhantomCmd::Gen(a)) => phantom_gen(a),
        Command::Noise(NoiseCmd::Add(a)) => {
            let vol = read_nifti(&a.input)?;
            let model = match a.model {
                NoiseArg::Rician => NoiseModel::Rician,
                NoiseArg::Gaussian => NoiseModel::Gaussian,
            };
            write_nifti(&add_noise(&vol, model, a.sigma, a.seed)?, &a.out, Datatype::Float32)
        }
        Command::Augment(AugmentCmd::Kspace(a)) => {
            let vol = read_nifti(&a.input)?;
            let target = match (&a.target_spacing, a.factor) {
                (Some(t), _) => <[f64; 3]>::try_from(t.as_slice())
                    .map_err(|_| Error::Config(format!("--target-spacing needs 3 values, got {}", t.len())))?,
                (None, Some(f)) => vol.spacing().map(|s| s * f),
                (None, None) => unreachable!("clap requires one"),
            };
            let up = match a.upsample {
                UpsampleArg::ZeroFill => Upsample::ZeroFill,
                UpsampleArg::Linear => Upsample::Linear,
            };
            write_nifti(&kspace_downsample(&vol, target, up)?, &a.out, Datatype::Float32)
        }
        Command::Denoise(DenoiseCmd::Mppca(a)) => {
            let vol = read_nifti(&a.input)?;
            let aggregation = match a.agg {
                AggArg::Overlap => Aggregation::OverlapAverage,
                AggArg::Center => Aggregation::CenterOnly,
            };
            let (out, report) = denoise_mppca(&vol, &PatchConfig { radius: a.radius, stride: a.stride, aggregation })?;
            write_nifti(&out, &a.out, Datatype::Float32)?;
            if let Some(p) = &a.sigma_out {
                write_nifti(&report.sigma, p, Datatype::Float32)?;
            }
            if let Some(p) = &a.npars_out {
                write_nifti(&report.npars, p, Datatype::Float32)?;
            }
            Ok(())
        }
        Command::Denoise(DenoiseCmd::External(a)) => {
            let vol = read_nifti(&a.input)?;
            let ext = ExternalDenoiser::new(a.command)?.with_timeout(Duration::from_secs(a.timeout));
            write_nifti(&ext.run(&vol)?, &a.out, Datatype::Float32)
        }
        Command::SelectDirs(a) => select_dirs(a),
        Command::Fit(FitCmd::Dti(a)) => fit_dti_cmd(a),
        Command::Fit(FitCmd::Shm(a)) => {
            let vol = read_nifti(&a.dwi)?;
            let scheme = a.grad.load()?;
            let shell = a.grad.shell(&scheme, Some(a.shell))?;
            let mask = load_mask(a.mask.as_deref(), vol.spatial_dims())?;
            let map = fit_sh(&vol, &scheme, &shell, &mask, a.order, a.lambda)?;
            write_nifti(&map.coeffs, &a.out, Datatype::Float32)
        }
        Command::Metric(m) => metric(m),
        Command::Scn(ScnCmd::Build(a)) => {
            let (_, table) = read_regional_table(&a.table)?;
            let scn = scn_build(&table)?;
            match &a.out {
                Some(p) => {
                    let f = fs::File::create(p).map_err(io_err(p))?;
                    write_scn(f, &scn).map_err(io_err(p))
                }
                None => write_scn(io::stdout().lock(), &scn).map_err(io_err("stdout")),
            }
        }
        Command::Scn(ScnCmd::Compare(a)) => {
            let (x, y) = (read_scn(&a.a)?, read_scn(&a.b)?);
            let (name, v) = match a.mode {
                CompareArg::Mae => ("scn_mae", scn_mae(&x, &y)?),
                CompareArg::Repeatability => ("scn_repeatability", scn_repeatability(&x, &y)?),
            };
            print_rows(&[(name.into(), "all".into(), v)])
        }
        Command::Run(a) => {
            let cfg = PipelineConfig::from_file(&a.config)?;
            let summary = run_pipeline(&cfg)?;
            println!("{} rows written to {}", summary.rows.len(), summary.output_dir.display());
            Ok(())
        }
    }
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

fn load_mask(path: Option<&Path>, dims: [usize; 3]) -> Result<Mask> {
    let mask = match path {
        Some(p) => read_mask(p)?,
        None => Mask::full(dims),
    };
    if mask.dims() != dims {
        return Err(dmri::core::Error::GridMismatch { left: dims, right: mask.dims() }.into());
    }
    Ok(mask)
}

fn phantom_gen(a: PhantomGenArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).map_err(io_err(&a.spec))?;
    let spec: PhantomSpec = serde_json::from_str(&text).map_err(|source| Error::Json { path: a.spec.clone(), source })?;
    let p = make_phantom(&spec, a.seed)?;
    let pre = &a.out_prefix;
    write_nifti(&p.dwi, format!("{pre}_dwi.nii.gz"), Datatype::Float32)?;
    write_nifti(&p.clean, format!("{pre}_clean.nii.gz"), Datatype::Float32)?;
    write_labels(&p.labels, &p.clean, format!("{pre}_labels.nii.gz"))?;
    write_gradients(&p.scheme, format!("{pre}.bval"), format!("{pre}.bvec"))?;
    let s = tensor_scalars(&p.truth);
    for (name, vol) in [("fa", &s.fa), ("md", &s.md), ("ad", &s.ad), ("rd", &s.rd), ("v1", &s.v1)] {
        write_nifti(vol, format!("{pre}_truth_{name}.nii.gz"), Datatype::Float64)?;
    }
    Ok(())
}

fn select_dirs(a: SelectDirsArgs) -> Result<()> {
    let scheme = a.grad.load()?;
    let shell = a.grad.shell(&scheme, a.shell)?;
    let candidates: Vec<[f64; 3]> = shell.indices.iter().map(|&i| scheme.bvecs()[i]).collect();
    let model = match a.model {
        ModelArg::Dti => Model::Dti,
        ModelArg::Sh => Model::Sh(a.order),
    };
    let opts = SelectOptions { seed: a.seed, restarts: a.restarts, iterations: a.iterations };
    let sel = select_subset(&candidates, a.k, model, opts)?;
    let b0 = *scheme.b0_indices().first().ok_or(dmri::core::Error::NoB0Volumes)?;
    let mut indices = vec![b0];
    indices.extend(sel.indices.iter().map(|&i| shell.indices[i]));
    println!("condition_number,{}", sel.condition_number);
    println!("volumes,{}", indices.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
    if let (Some(bval), Some(bvec)) = (&a.out_bval, &a.out_bvec) {
        write_gradients(&scheme.subset(&indices)?, bval, bvec)?;
    }
    if let (Some(dwi), Some(out)) = (&a.dwi, &a.out_dwi) {
        let vol = read_nifti(dwi)?;
        write_nifti(&vol.select_volumes(&indices)?, out, Datatype::Float32)?;
    }
    Ok(())
}

fn fit_dti_cmd(a: FitDtiArgs) -> Result<()> {
    let vol = read_nifti(&a.dwi)?;
    let scheme = a.grad.load()?;
    let mask = load_mask(a.mask.as_deref(), vol.spatial_dims())?;
    let method = match a.method {
        FitArg::Ols => FitMethod::Ols,
        FitArg::Wls => FitMethod::Wls,
    };
    let map = fit_dti(&vol, &scheme, &mask, method)?;
    let s = tensor_scalars(&map);
    let pre = &a.out_prefix;
    for (name, v) in [("fa", &s.fa), ("md", &s.md), ("ad", &s.ad), ("rd", &s.rd), ("v1", &s.v1)] {
        write_nifti(v, format!("{pre}_{name}.nii.gz"), Datatype::Float32)?;
    }
    write_nifti(&map.components(), format!("{pre}_tensor.nii.gz"), Datatype::Float32)
}

fn print_rows(rows: &[(String, String, f64)]) -> Result<()> {
    let mut out = io::stdout().lock();
    write_metric_rows(&mut out, rows).and_then(|_| out.flush()).map_err(io_err("stdout"))
}

/// `all` over the mask, then every label intersected with it.
fn regions(labels: Option<&Path>, mask: &Mask) -> Result<Vec<(String, Mask)>> {
    let mut out = vec![("all".to_string(), mask.clone())];
    if let Some(p) = labels {
        let l: LabelVolume = read_labels(p)?;
        for r in l.regions() {
            out.push((r.to_string(), l.region_mask(r).intersect(mask)?));
        }
    }
    Ok(out.into_iter().filter(|(_, m)| m.count() > 0).collect())
}

fn metric(cmd: MetricCmd) -> Result<()> {
    match cmd {
        MetricCmd::Mae(p) => pair_metric(p, "mae", mae_scalar),
        MetricCmd::V1Angle(p) => pair_metric(p, "v1_angle", v1_angular_error),
        MetricCmd::Jsd(p) => {
            let (a, b) = (read_nifti(&p.a)?, read_nifti(&p.b)?);
            let order = order_for_count(a.volumes())
                .ok_or_else(|| Error::Config(format!("{} volumes is not an SH coefficient count", a.volumes())))?;
            let hemi = make_hemisphere_362();
            let pa = project_sh(&ShCoeffMap::from_volume(a, 0.0)?, hemi.directions())?;
            let pb = project_sh(&ShCoeffMap::from_volume(b, 0.0)?, hemi.directions())?;
            let mask = load_mask(p.mask.as_deref(), pa.spatial_dims())?;
            let map = jsd_map(&pa, &pb, &mask)?;
            let mut rows = Vec::new();
            for (name, m) in regions(p.labels.as_deref(), &mask)? {
                let v = m.indices().map(|i| map.data()[i]).sum::<f64>() / m.count() as f64;
                rows.push((format!("jsd_order{order}"), name, v * p.scale));
            }
            print_rows(&rows)
        }
        MetricCmd::Cov(c) => cov(c),
        MetricCmd::Moments(m) => {
            let raw = read_nifti(&m.raw)?;
            let den = match &m.denoised {
                Some(p) => read_nifti(p)?,
                None if matches!(m.pool, PoolArg::Raw) => raw.clone(),
                None => return Err(Error::Config("--denoised is required for this pool".into())),
            };
            let mask = load_mask(m.mask.as_deref(), raw.spatial_dims())?;
            let pool = match m.pool {
                PoolArg::Raw => Pool::Raw,
                PoolArg::Denoised => Pool::Denoised,
                PoolArg::Residual => Pool::Residual,
            };
            let r = residual_moments(&raw, &den, &mask, pool)?;
            let rows: Vec<(String, String, f64)> = [
                ("mean", r.mean),
                ("variance", r.variance),
                ("skewness", r.skewness),
                ("excess_kurtosis", r.excess_kurtosis),
                ("count", r.count as f64),
            ]
            .into_iter()
            .map(|(n, v)| (n.to_string(), "all".to_string(), v))
            .collect();
            print_rows(&rows)
        }
    }
}

fn pair_metric(
    p: PairArgs,
    name: &str,
    f: impl Fn(&Volume4D, &Volume4D, &Mask) -> dmri::core::Result<f64>,
) -> Result<()> {
    let (a, b) = (read_nifti(&p.a)?, read_nifti(&p.b)?);
    let mask = load_mask(p.mask.as_deref(), a.spatial_dims())?;
    let mut rows = Vec::new();
    for (region, m) in regions(p.labels.as_deref(), &mask)? {
        rows.push((name.to_string(), region, f(&a, &b, &m)? * p.scale));
    }
    print_rows(&rows)
}

fn cov(c: CovArgs) -> Result<()> {
    if c.s1.len() != c.s2.len() {
        return Err(Error::LengthMismatch { what: "--s1 vs --s2 maps", left: c.s1.len(), right: c.s2.len() });
    }
    let labels = read_labels(&c.labels)?;
    let mut per_subject = Vec::new();
    for (p1, p2) in c.s1.iter().zip(&c.s2) {
        let (x1, x2) = (region_means(&read_nifti(p1)?, &labels)?, region_means(&read_nifti(p2)?, &labels)?);
        per_subject.push(cov_within_subject(&x1, &x2)?);
    }
    let mut rows = Vec::new();
    if per_subject.len() == 1 {
        for (r, v) in &per_subject[0] {
            rows.push(("cov_percent".to_string(), r.to_string(), *v));
        }
    }
    let mut classes: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for spec in &c.classes {
        let (name, ids) = spec.split_once('=').ok_or_else(|| Error::Config(format!("class {spec:?} is not NAME=ids")))?;
        let ids = ids
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| Error::Config(format!("bad region id {t:?} in class {name}"))))
            .collect::<Result<Vec<u32>>>()?;
        classes.insert(name.to_string(), ids);
    }
    if classes.is_empty() {
        classes.insert("all".into(), labels.regions());
    }
    for (name, ids) in &classes {
        if let Some(v) = aggregate_cov(&per_subject, ids) {
            rows.push(("cov_percent_mean".to_string(), name.clone(), v));
        }
    }
    print_rows(&rows)
}

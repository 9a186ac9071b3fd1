use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension product {expected} does not match data length {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("dimension {axis} must be positive")]
    ZeroDim { axis: usize },
    #[error("spacing along axis {axis} must be positive and finite, got {value}")]
    BadSpacing { axis: usize, value: f64 },
    #[error("non-finite value at linear index {index}")]
    NonFinite { index: usize },
    #[error("grid mismatch: {left:?} vs {right:?}")]
    GridMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("expected {expected} volumes, got {actual}")]
    VolumeCount { expected: usize, actual: usize },
    #[error("gradient table has {bvals} b-values but {bvecs} directions")]
    GradientLength { bvals: usize, bvecs: usize },
    #[error("direction {index} has norm {norm}, expected unit length")]
    NonUnitDirection { index: usize, norm: f64 },
    #[error("no b=0 volumes in gradient table")]
    NoB0Volumes,
    #[error("volume index {index} out of range for {count} volumes")]
    VolumeIndex { index: usize, count: usize },
    #[error("design matrix is rank deficient (condition number exceeds 1e12)")]
    RankDeficient,
    #[error("design matrix needs at least as many rows ({rows}) as columns ({cols})")]
    TooFewRows { rows: usize, cols: usize },
    #[error("spherical harmonic order must be even, got {0}")]
    OddOrder(usize),
    #[error("subset size {k} is below the model minimum {min}")]
    SubsetTooSmall { k: usize, min: usize },
    #[error("subset size {k} exceeds the {available} available candidates")]
    SubsetTooLarge { k: usize, available: usize },
    #[error("tensor fit needs at least 6 diffusion-weighted and 1 b=0 volumes, got {directed} and {b0}")]
    InsufficientDirections { directed: usize, b0: usize },
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("{directions} directions cannot determine {coefficients} coefficients without regularization")]
    UnderdeterminedWithoutRegularization { directions: usize, coefficients: usize },
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("distribution is all zero after clamping negatives")]
    ZeroDistribution,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty eigenvalue list")]
    EmptySpectrum,
    #[error("volume {dims:?} is smaller than a patch of width {width}")]
    VolumeSmallerThanPatch { dims: [usize; 3], width: usize },
    #[error("invalid patch configuration: {0}")]
    PatchConfig(String),
    #[error("pool has {count} samples, at least 4 are required")]
    PoolTooSmall { count: usize },
    #[error("target spacing {target} on axis {axis} is not positive or finer than native {native}")]
    BadTargetSpacing { axis: usize, target: f64, native: f64 },
    #[error("regions {first} and {second} overlap with different tissue parameters")]
    ConflictingRegions { first: u32, second: u32 },
    #[error("invalid phantom specification: {0}")]
    PhantomSpec(String),
    #[error("region lists differ")]
    RegionMismatch,
    #[error("region {0}: sessions sum to zero")]
    ZeroMean(u32),
    #[error("region {0} has zero variance across subjects")]
    ZeroVarianceRegion(u32),
    #[error("at least {min} subjects are required, got {actual}")]
    TooFewSubjects { min: usize, actual: usize },
}

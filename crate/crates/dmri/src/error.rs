use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dmri_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("unsupported NIfTI magic {0:?}; only single-file NIfTI-1 (n+1) is read")]
    UnsupportedMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("malformed NIfTI header field {field}: {reason}")]
    MalformedHeader { field: &'static str, reason: String },
    #[error("truncated NIfTI payload: expected {expected} bytes after offset, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("dimension {value} on axis {axis} does not fit the 16-bit NIfTI header")]
    DimOverflow { axis: usize, value: usize },
    #[error("NIfTI output datatype must be float32 or float64")]
    UnsupportedWriteDatatype,

    #[error("bvec file must have 3 rows, found {found}")]
    BadRowCount { found: usize },
    #[error("{file}: non-numeric token {token:?}")]
    NonNumeric { file: String, token: String },
    #[error("{what}: {left} vs {right} entries")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("direction {index} has norm {norm:.4}, outside the renormalization tolerance [0.9, 1.1]")]
    NonUnitDirection { index: usize, norm: f64 },

    #[error("label volume holds invalid value {value} at voxel {index}")]
    BadLabel { index: usize, value: f64 },
    #[error("csv {path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("json {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("external denoiser failed ({status}): {stderr}")]
    ExternalDenoiserFailed { status: String, stderr: String },
    #[error("external denoiser timed out after {secs} s")]
    ExternalDenoiserTimeout { secs: u64 },
    #[error("command template must contain {{in}} and {{out}}: {0:?}")]
    BadTemplate(String),

    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

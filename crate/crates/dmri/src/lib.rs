//! File formats, external tools and the benchmark pipeline around
//! [`dmri_core`].
//!
//! * [`nifti`]: single-file NIfTI-1 images, optionally gzip-compressed.
//! * [`gradients`]: FSL `bval`/`bvec` tables.
//! * [`tables`]: the CSV schemas for reports, regional means and SCNs.
//! * [`external`]: command-line denoisers driven through NIfTI files.
//! * [`pipeline`]: the JSON-configured evaluation run.

mod error;
pub mod external;
pub mod gradients;
pub mod nifti;
pub mod pipeline;
pub mod tables;

pub use dmri_core as core;
pub use error::{Error, Result};

/// Size the global rayon pool. `None` falls back to `DMRI_THREADS`, then to
/// rayon's default. Only the first call has an effect.
pub fn init_threads(threads: Option<usize>) {
    let n = threads.or_else(|| std::env::var("DMRI_THREADS").ok().and_then(|v| v.trim().parse().ok()));
    if let Some(n) = n.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

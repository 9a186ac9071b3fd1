//! File-in, file-out hook for denoisers that live outside this process.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use dmri_core::Volume4D;

use crate::nifti::{read_nifti, write_nifti, Datatype};
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
/// Bytes of stderr kept for diagnostics.
const STDERR_TAIL: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalDenoiser {
    /// Shell command with `{in}` and `{out}` placeholders for NIfTI paths.
    pub template: String,
    pub timeout: Duration,
}

impl ExternalDenoiser {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{in}") || !template.contains("{out}") {
            return Err(Error::BadTemplate(template));
        }
        Ok(Self { template, timeout: DEFAULT_TIMEOUT })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Write `input`, run the command, read the result back and check that
    /// it sits on the input grid with the same volume count.
    pub fn run(&self, input: &Volume4D) -> Result<Volume4D> {
        let dir = tempfile::tempdir().map_err(Error::io(std::env::temp_dir()))?;
        let in_path = dir.path().join("in.nii");
        let out_path = dir.path().join("out.nii");
        write_nifti(input, &in_path, Datatype::Float64)?;
        let cmd = self.template.replace("{in}", &quote(&in_path)).replace("{out}", &quote(&out_path));
        self.execute(&cmd)?;
        let out = read_nifti(&out_path)?;
        input.same_grid(&out)?;
        if out.volumes() != input.volumes() {
            return Err(dmri_core::Error::VolumeCount { expected: input.volumes(), actual: out.volumes() }.into());
        }
        // keep the caller's geometry; only the samples come from the tool
        Ok(input.with_data(input.volumes(), out.into_data())?)
    }

    fn execute(&self, cmd: &str) -> Result<()> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(Error::io("sh"))?;
        let mut stderr = child.stderr.take().expect("piped stderr");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let start = Instant::now();
        let status = loop {
            match child.try_wait().map_err(Error::io("sh"))? {
                Some(status) => break status,
                None if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::ExternalDenoiserTimeout { secs: self.timeout.as_secs() });
                }
                None => thread::sleep(Duration::from_millis(20)),
            }
        };
        let buf = reader.join().unwrap_or_default();
        if !status.success() {
            let tail = &buf[buf.len().saturating_sub(STDERR_TAIL)..];
            return Err(Error::ExternalDenoiserFailed {
                status: status.to_string(),
                stderr: String::from_utf8_lossy(tail).trim().to_string(),
            });
        }
        Ok(())
    }
}

/// Single-quote a path for `sh`.
fn quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

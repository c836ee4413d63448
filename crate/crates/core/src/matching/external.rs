use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{DisparityMap, MatchError, SignConvention};
use crate::raster::{read_pfm, write_pfm, Raster};

/// Environment variable naming the root directory for scratch files.
pub const SCRATCH_ENV: &str = "SATSTEREO_SCRATCH";
const STDERR_LIMIT: usize = 4096;

fn default_args() -> Vec<String> {
    ["{left}", "{right}", "{dmin}", "{dmax}", "{out}"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_timeout() -> f64 {
    600.0
}

/// An external stereo matcher invoked as a subprocess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub command: PathBuf,
    /// Argument template; `{left}`, `{right}`, `{dmin}`, `{dmax}` and
    /// `{out}` are substituted.
    #[serde(default = "default_args")]
    pub args: Vec<String>,
    pub convention: SignConvention,
    /// Seconds before the process is killed.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

impl ExternalSpec {
    pub fn new(command: impl Into<PathBuf>, convention: SignConvention) -> Self {
        Self {
            command: command.into(),
            args: default_args(),
            convention,
            timeout: default_timeout(),
        }
    }
}

struct Limiter {
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

static LIMITER: Limiter = Limiter {
    state: Mutex::new((0, 2)),
    freed: Condvar::new(),
};

struct Permit;

impl Permit {
    fn acquire() -> Permit {
        let mut s = LIMITER.state.lock().unwrap_or_else(|e| e.into_inner());
        while s.0 >= s.1 {
            s = LIMITER.freed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.0 += 1;
        Permit
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        let mut s = LIMITER.state.lock().unwrap_or_else(|e| e.into_inner());
        s.0 -= 1;
        LIMITER.freed.notify_one();
    }
}

/// Cap the number of adapter processes running at once (default 2).
pub fn set_max_concurrent_adapters(n: usize) {
    let mut s = LIMITER.state.lock().unwrap_or_else(|e| e.into_inner());
    s.1 = n.max(1);
    LIMITER.freed.notify_all();
}

pub fn scratch_root() -> PathBuf {
    std::env::var_os(SCRATCH_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

fn failed(reason: impl Into<String>, stderr: String) -> MatchError {
    MatchError::AdapterFailed {
        reason: reason.into(),
        stderr,
    }
}

fn read_stderr(path: &Path) -> String {
    let mut s = std::fs::read_to_string(path).unwrap_or_default();
    if s.len() > STDERR_LIMIT {
        let mut cut = STDERR_LIMIT;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

/// Run an external matcher through the file-based adapter protocol:
/// `<command> <left.pfm> <right.pfm> <dmin> <dmax> <out.pfm>`.
///
/// `dmin..=dmax` is given in the canonical `x_right = x_left + d`
/// convention and handed to the adapter in its own convention.
pub fn run_external_matcher(
    spec: &ExternalSpec,
    left: &Raster<f32>,
    right: &Raster<f32>,
    dmin: i32,
    dmax: i32,
) -> Result<DisparityMap, MatchError> {
    let root = scratch_root();
    let dir = tempfile::Builder::new()
        .prefix("satstereo-adapter-")
        .tempdir_in(&root)
        .map_err(|e| failed(format!("cannot create scratch dir in {}: {e}", root.display()), String::new()))?;
    let left_path = dir.path().join("left.pfm");
    let right_path = dir.path().join("right.pfm");
    let out_path = dir.path().join("out.pfm");
    let err_path = dir.path().join("stderr.txt");
    write_pfm(&left_path, left).map_err(|e| failed(e.to_string(), String::new()))?;
    write_pfm(&right_path, right).map_err(|e| failed(e.to_string(), String::new()))?;

    let (dmin, dmax) = match spec.convention {
        SignConvention::RightEqLeftPlusD => (dmin, dmax),
        SignConvention::RightEqLeftMinusD => (-dmax, -dmin),
    };
    let args: Vec<String> = spec
        .args
        .iter()
        .map(|a| {
            a.replace("{left}", &left_path.to_string_lossy())
                .replace("{right}", &right_path.to_string_lossy())
                .replace("{dmin}", &dmin.to_string())
                .replace("{dmax}", &dmax.to_string())
                .replace("{out}", &out_path.to_string_lossy())
        })
        .collect();
    let stderr_file = File::create(&err_path).map_err(|e| failed(e.to_string(), String::new()))?;

    let _permit = Permit::acquire();
    log::debug!("adapter: {} {}", spec.command.display(), args.join(" "));
    let mut child = Command::new(&spec.command)
        .args(&args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr_file)
        .spawn()
        .map_err(|e| failed(format!("cannot start {}: {e}", spec.command.display()), String::new()))?;

    let deadline = Instant::now() + Duration::from_secs_f64(spec.timeout.max(0.0));
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(failed(
                    format!("timed out after {} s", spec.timeout),
                    read_stderr(&err_path),
                ));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(failed(format!("wait failed: {e}"), read_stderr(&err_path))),
        }
    };
    if !status.success() {
        return Err(failed(format!("exited with {status}"), read_stderr(&err_path)));
    }
    let out = read_pfm(&out_path)
        .map_err(|e| failed(format!("malformed output raster: {e}"), read_stderr(&err_path)))?;
    if out.dims() != left.dims() {
        return Err(failed(
            format!("size mismatch: output {:?}, expected {:?}", out.dims(), left.dims()),
            read_stderr(&err_path),
        ));
    }
    Ok(DisparityMap::new(
        out.map(|v| if v.is_finite() { v } else { f32::NAN }),
        spec.convention,
    ))
}

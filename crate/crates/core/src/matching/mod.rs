//! Dense disparity estimation on rectified pairs.
//!
//! The native matcher is census + Hamming cost, semi-global aggregation and
//! winner-takes-all with parabolic sub-pixel refinement. External matchers
//! are run as subprocesses exchanging PFM rasters. All outputs are brought
//! to the canonical convention `x_right = x_left + d` by [`normalize_sign`]
//! before left-right filtering.

mod census;
mod cost;
mod external;
mod filter;
mod sgm;
mod wta;

pub use census::{census_transform, Census, MAX_CENSUS_WINDOW};
pub use cost::{compute_cost_volume, AggregatedVolume, CostVolume, Volume, MAX_RANGE_WIDTH};
pub use external::{
    run_external_matcher, scratch_root, set_max_concurrent_adapters, ExternalSpec, SCRATCH_ENV,
};
pub use filter::{lr_consistency_filter, normalize_sign, remove_speckles};
pub use sgm::{
    aggregate_direction, aggregate_directions, directions, sgm_aggregate, Direction, MAX_P2, PATHS_4,
    PATHS_8,
};
pub use wta::{parabola_offset, wta_subpixel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("census window {0} exceeds the 64-bit limit (at most 7)")]
    WindowTooLarge(usize),
    #[error("census window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("disparity range [{0}, {1}] is empty")]
    InvalidRange(i32, i32),
    #[error("disparity range of {0} values exceeds the limit of 1024")]
    RangeTooWide(usize),
    #[error("penalties must satisfy p1 <= p2 <= 4000, got p1={p1} p2={p2}")]
    InvalidPenalties { p1: u16, p2: u16 },
    #[error("path count must be 4 or 8, got {0}")]
    InvalidPaths(usize),
    #[error("raster sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("invalid matcher configuration: {0}")]
    InvalidSpec(String),
    #[error("external matcher failed: {reason}")]
    AdapterFailed { reason: String, stderr: String },
}

/// How a disparity relates corresponding columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignConvention {
    #[serde(rename = "RIGHT_EQ_LEFT_PLUS_D")]
    RightEqLeftPlusD,
    #[serde(rename = "RIGHT_EQ_LEFT_MINUS_D")]
    RightEqLeftMinusD,
}

/// Per-pixel disparities; NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub values: Raster<f32>,
    pub convention: SignConvention,
}

impl DisparityMap {
    pub fn new(values: Raster<f32>, convention: SignConvention) -> Self {
        Self { values, convention }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self::new(Raster::filled(width, height, f32::NAN), SignConvention::RightEqLeftPlusD)
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        !self.values.get(col, row).is_nan()
    }

    pub fn valid(&self) -> Raster<bool> {
        self.values.map(|v| !v.is_nan())
    }

    pub fn valid_count(&self) -> usize {
        self.values.data().iter().filter(|v| !v.is_nan()).count()
    }
}

fn default_window() -> usize {
    5
}
fn default_p1() -> u16 {
    8
}
fn default_p2() -> u16 {
    96
}
fn default_paths() -> usize {
    8
}
fn default_uniqueness() -> f64 {
    0.95
}

/// Parameters of the built-in semi-global matcher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeSpec {
    #[serde(default = "default_window")]
    pub census_window: usize,
    #[serde(default = "default_p1")]
    pub p1: u16,
    #[serde(default = "default_p2")]
    pub p2: u16,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_uniqueness")]
    pub uniqueness_ratio: f64,
}

impl Default for NativeSpec {
    fn default() -> Self {
        Self {
            census_window: default_window(),
            p1: default_p1(),
            p2: default_p2(),
            paths: default_paths(),
            uniqueness_ratio: default_uniqueness(),
        }
    }
}

impl NativeSpec {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.census_window > MAX_CENSUS_WINDOW {
            return Err(MatchError::WindowTooLarge(self.census_window));
        }
        if self.census_window < 3 || self.census_window % 2 == 0 {
            return Err(MatchError::InvalidWindow(self.census_window));
        }
        if self.p1 >= self.p2 || self.p2 > MAX_P2 {
            return Err(MatchError::InvalidPenalties {
                p1: self.p1,
                p2: self.p2,
            });
        }
        directions(self.paths)?;
        if !(self.uniqueness_ratio > 0.0 && self.uniqueness_ratio <= 1.0) {
            return Err(MatchError::InvalidSpec(format!(
                "uniqueness_ratio must lie in (0, 1], got {}",
                self.uniqueness_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatcherSpec {
    Native(NativeSpec),
    External(ExternalSpec),
}

impl Default for MatcherSpec {
    fn default() -> Self {
        MatcherSpec::Native(NativeSpec::default())
    }
}

impl MatcherSpec {
    /// Parse a matcher table such as `kind = "native"` plus its fields.
    pub fn from_toml(text: &str) -> Result<Self, MatchError> {
        let spec: Self = toml::from_str(text).map_err(|e| MatchError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        match self {
            MatcherSpec::Native(n) => n.validate(),
            MatcherSpec::External(e) if e.command.as_os_str().is_empty() => {
                Err(MatchError::InvalidSpec("external command is empty".into()))
            }
            MatcherSpec::External(e) if !(e.timeout > 0.0) => {
                Err(MatchError::InvalidSpec("external timeout must be positive".into()))
            }
            MatcherSpec::External(_) => Ok(()),
        }
    }

    /// Run the configured matcher over the canonical range
    /// `dmin..=dmax`. The result keeps the matcher's own sign convention.
    pub fn run(
        &self,
        left: &Raster<f32>,
        right: &Raster<f32>,
        dmin: i32,
        dmax: i32,
    ) -> Result<DisparityMap, MatchError> {
        match self {
            MatcherSpec::Native(n) => run_native_matcher(n, left, right, dmin, dmax),
            MatcherSpec::External(e) => run_external_matcher(e, left, right, dmin, dmax),
        }
    }
}

/// Census → cost volume → SGM → WTA on a rectified pair, searching
/// `d ∈ [dmin, dmax]` with `x_right = x_left + d`.
pub fn run_native_matcher(
    spec: &NativeSpec,
    left: &Raster<f32>,
    right: &Raster<f32>,
    dmin: i32,
    dmax: i32,
) -> Result<DisparityMap, MatchError> {
    spec.validate()?;
    if left.dims() != right.dims() {
        return Err(MatchError::SizeMismatch(left.dims(), right.dims()));
    }
    let cl = census_transform(left, spec.census_window)?;
    let cr = census_transform(right, spec.census_window)?;
    let cost = compute_cost_volume(&cl, &cr, dmin, dmax)?;
    let agg = sgm_aggregate(&cost, spec.p1, spec.p2, spec.paths)?;
    Ok(wta_subpixel(&agg, spec.uniqueness_ratio))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(NativeSpec::default().validate().is_ok());
        let bad = NativeSpec {
            p1: 96,
            p2: 8,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(MatchError::InvalidPenalties { .. })));
        let bad = NativeSpec {
            census_window: 4,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(MatchError::InvalidWindow(4))));
    }

    #[test]
    fn spec_serde() {
        let s: MatcherSpec = toml::from_str("kind = \"native\"\np2 = 120\n").unwrap();
        assert_eq!(
            s,
            MatcherSpec::Native(NativeSpec {
                p2: 120,
                ..Default::default()
            })
        );
        let e: MatcherSpec = toml::from_str(
            "kind = \"external\"\ncommand = \"/bin/true\"\nconvention = \"RIGHT_EQ_LEFT_MINUS_D\"\n",
        )
        .unwrap();
        match e {
            MatcherSpec::External(e) => {
                assert_eq!(e.args, vec!["{left}", "{right}", "{dmin}", "{dmax}", "{out}"]);
                assert_eq!(e.convention, SignConvention::RightEqLeftMinusD);
            }
            _ => panic!("expected external"),
        }
    }
}

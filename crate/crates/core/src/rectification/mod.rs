//! Affine epipolar rectification of an RPC image pair, with disparity
//! polarity, altitude-consistency and range-margin enforcement.
//!
//! [`build_rectification`] chains the steps: RPC virtual correspondences,
//! affine rectifying transforms, horizontal shear refinement, sparse image
//! matches, a global horizontal translation of the right image that makes
//! every observed disparity share one sign and sit at least `margin` pixels
//! away from zero, and a final check that disparity grows with altitude.
//! When the check fails the translation is recomputed with the opposite
//! sign. No residual vertical correction is applied.

mod affine;
mod polarity;
mod sparse;
mod warp;

pub use affine::{fit_rectifying_transforms, shear_refine, virtual_matches, ShearRefinement};
pub use polarity::{check_altitude_consistency, enforce_unipolarity};
pub use sparse::{detect_sparse_matches, CornerZnccMatcher, SparseMatcher};
pub use warp::rectify_image;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeoPoint, GeometryError, Homography, PixelCoord, RpcModel};
use crate::raster::Raster;

/// Maximum row difference for a sparse match to count as an inlier.
pub const MAX_MATCH_ROW_RESIDUAL: f64 = 2.0;
/// Maximum vertical residual of the virtual correspondences after
/// rectification.
pub const MAX_EPIPOLAR_RESIDUAL: f64 = 0.5;
pub const DEFAULT_MARGIN: f64 = 50.0;
pub const DEFAULT_GRID_N: usize = 7;

#[derive(Debug, Error)]
pub enum RectifyError {
    #[error("only {0} valid correspondences, at least 8 are required")]
    InsufficientCorrespondences(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("vertical residual {0:.3} px exceeds 0.5 px; the affine model is inadequate for this ROI")]
    ResidualTooLarge(f64),
    #[error("only {0} sparse matches found, at least 20 are required")]
    InsufficientMatches(usize),
    #[error("no sparse match within the 2 px row tolerance")]
    NoInliers,
    #[error("disparity does not increase with altitude for either polarity")]
    AltitudeInconsistent,
    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Sign of the unipolar disparity convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            _ => Err(format!("polarity must be +1 or -1, got {v}")),
        }
    }
}

impl From<Polarity> for i8 {
    fn from(p: Polarity) -> i8 {
        p.sign() as i8
    }
}

/// Region of interest: lon/lat box plus the altitude range of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub alt_lo: f64,
    pub alt_hi: f64,
}

impl Roi {
    pub fn validate(&self) -> Result<(), RectifyError> {
        if !(self.lon_min < self.lon_max && self.lat_min < self.lat_max) {
            return Err(RectifyError::InvalidRoi("empty lon/lat box".into()));
        }
        if !(self.alt_lo < self.alt_hi) {
            return Err(RectifyError::InvalidRoi("alt_lo must be below alt_hi".into()));
        }
        Ok(())
    }

    pub fn center(&self, alt: f64) -> GeoPoint {
        GeoPoint::new(
            0.5 * (self.lon_min + self.lon_max),
            0.5 * (self.lat_min + self.lat_max),
            alt,
        )
    }

    /// The four box corners at both bounding altitudes.
    pub fn corners(&self) -> [GeoPoint; 8] {
        let mut out = [GeoPoint::new(0.0, 0.0, 0.0); 8];
        let mut i = 0;
        for alt in [self.alt_lo, self.alt_hi] {
            for lat in [self.lat_min, self.lat_max] {
                for lon in [self.lon_min, self.lon_max] {
                    out[i] = GeoPoint::new(lon, lat, alt);
                    i += 1;
                }
            }
        }
        out
    }
}

/// A correspondence found by image matching, in rectified coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseMatch {
    pub p1: PixelCoord,
    pub p2: PixelCoord,
    pub score: f64,
}

impl SparseMatch {
    pub fn disparity(&self) -> f64 {
        self.p2.col - self.p1.col
    }

    pub fn row_residual(&self) -> f64 {
        (self.p1.row - self.p2.row).abs()
    }
}

/// Rectifying homographies of a stereo pair with the disparity range they
/// induce.
///
/// `disp_min`/`disp_max` are ordered by magnitude in the polarity
/// direction: `polarity · disp_min ≥ margin_applied` and
/// `polarity · disp_max ≥ polarity · disp_min`. Disparities follow
/// `x_right = x_left + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifyingPair {
    pub h1: Homography,
    pub h2: Homography,
    pub disp_min: f64,
    pub disp_max: f64,
    pub polarity: Polarity,
    pub margin_applied: f64,
    pub out_width: usize,
    pub out_height: usize,
    /// Horizontal shear folded into `h2` by the refinement step.
    pub shear: f64,
    /// Horizontal translation of the right image applied for unipolarity
    /// and margin.
    pub unipolar_shift: f64,
}

impl RectifyingPair {
    /// Disparity search interval as `(low, high)` in signed order.
    pub fn signed_range(&self) -> (f64, f64) {
        (
            self.disp_min.min(self.disp_max),
            self.disp_min.max(self.disp_max),
        )
    }

    /// Disparity of a ground point through both cameras and homographies.
    pub fn ground_disparity(
        &self,
        rpc1: &RpcModel,
        rpc2: &RpcModel,
        g: &GeoPoint,
    ) -> Result<(PixelCoord, PixelCoord), GeometryError> {
        let a = self.h1.apply(&rpc1.project(g)?)?;
        let b = self.h2.apply(&rpc2.project(g)?)?;
        Ok((a, b))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pair serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Knobs of [`build_rectification`].
pub struct RectificationOptions<'a> {
    pub polarity_hint: Polarity,
    pub margin: f64,
    pub grid_n: usize,
    pub matcher: &'a dyn SparseMatcher,
}

impl Default for RectificationOptions<'_> {
    fn default() -> Self {
        static DEFAULT_MATCHER: CornerZnccMatcher = CornerZnccMatcher::DEFAULT;
        Self {
            polarity_hint: Polarity::Positive,
            margin: DEFAULT_MARGIN,
            grid_n: DEFAULT_GRID_N,
            matcher: &DEFAULT_MATCHER,
        }
    }
}

/// Translate both homographies by a common offset so that every ROI
/// corner lands in `[0, w) × [0, h)`. Rows and disparities are unchanged.
fn frame_pair(
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    roi: &Roi,
    h1: &Homography,
    h2: &Homography,
) -> Result<(Homography, Homography, usize, usize), RectifyError> {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for g in roi.corners() {
        for p in [h1.apply(&rpc1.project(&g)?)?, h2.apply(&rpc2.project(&g)?)?] {
            x0 = x0.min(p.col);
            y0 = y0.min(p.row);
            x1 = x1.max(p.col);
            y1 = y1.max(p.row);
        }
    }
    let (tx, ty) = (-x0.floor(), -y0.floor());
    let w = (x1 + tx).floor() as usize + 1;
    let h = (y1 + ty).floor() as usize + 1;
    let t = Homography::translation(tx, ty);
    Ok((h1.then(&t), h2.then(&t), w, h))
}

/// Outcome of [`build_rectification_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rectification {
    pub pair: RectifyingPair,
    /// Sparse matches expressed in the final rectified frame.
    pub matches: Vec<SparseMatch>,
    /// Largest row difference of the virtual correspondences under the
    /// final transforms, pixels.
    pub epipolar_residual: f64,
}

/// Full rectification with polarity, altitude-consistency and margin
/// enforcement.
pub fn build_rectification(
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    img1: &Raster<f32>,
    img2: &Raster<f32>,
    roi: &Roi,
    opts: &RectificationOptions<'_>,
) -> Result<RectifyingPair, RectifyError> {
    build_rectification_detailed(rpc1, rpc2, img1, img2, roi, opts).map(|r| r.pair)
}

pub fn build_rectification_detailed(
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    img1: &Raster<f32>,
    img2: &Raster<f32>,
    roi: &Roi,
    opts: &RectificationOptions<'_>,
) -> Result<Rectification, RectifyError> {
    roi.validate()?;
    let corr = virtual_matches(rpc1, rpc2, roi, opts.grid_n)?;
    let (h1, h2) = fit_rectifying_transforms(&corr)?;
    let rectified: Vec<(PixelCoord, PixelCoord)> = corr
        .iter()
        .map(|(a, b)| Ok((h1.apply(a)?, h2.apply(b)?)))
        .collect::<Result<_, GeometryError>>()?;
    let refined = shear_refine(&h2, &rectified);
    let (h1, h2, w, h) = frame_pair(rpc1, rpc2, roi, &h1, &refined.h2)?;

    let rect1 = rectify_image(img1, &h1, w, h);
    let rect2 = rectify_image(img2, &h2, w, h);
    let matches = opts.matcher.detect(&rect1, &rect2)?;
    log::debug!("{} sparse matches after initial rectification", matches.len());

    let initial = RectifyingPair {
        h1,
        h2,
        disp_min: 0.0,
        disp_max: 0.0,
        polarity: opts.polarity_hint,
        margin_applied: 0.0,
        out_width: w,
        out_height: h,
        shear: refined.shear,
        unipolar_shift: 0.0,
    };

    for polarity in [opts.polarity_hint, opts.polarity_hint.flipped()] {
        let pair = enforce_unipolarity(&initial, &matches, polarity, opts.margin)?;
        if !check_altitude_consistency(rpc1, rpc2, &pair, roi)? {
            log::info!(
                "altitude check failed with polarity {:+}; retrying with the opposite sign",
                polarity.sign()
            );
            continue;
        }
        let (h1, h2, w, h) = frame_pair(rpc1, rpc2, roi, &pair.h1, &pair.h2)?;
        let pair = RectifyingPair {
            h1,
            h2,
            out_width: w,
            out_height: h,
            ..pair
        };
        let m1 = initial.h1.inverse().then(&pair.h1);
        let m2 = initial.h2.inverse().then(&pair.h2);
        let matches = matches
            .iter()
            .map(|m| {
                Ok(SparseMatch {
                    p1: m1.apply(&m.p1)?,
                    p2: m2.apply(&m.p2)?,
                    score: m.score,
                })
            })
            .collect::<Result<Vec<_>, GeometryError>>()?;
        let mut epipolar_residual = 0.0f64;
        for (a, b) in &corr {
            let (a, b) = (pair.h1.apply(a)?, pair.h2.apply(b)?);
            epipolar_residual = epipolar_residual.max((a.row - b.row).abs());
        }
        return Ok(Rectification {
            pair,
            matches,
            epipolar_residual,
        });
    }
    Err(RectifyError::AltitudeInconsistent)
}

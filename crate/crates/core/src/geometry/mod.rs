//! Camera and ground geometry: RPC models, plane homographies, two-view
//! triangulation and UTM conversion.

mod homography;
mod rpc;
mod triangulation;
mod utm;

pub use homography::Homography;
pub use rpc::{parse_rpc_text, RpcCoefficients, RpcModel, RpcNormalization, RPC_TERMS};
pub use triangulation::{planar_distance_m, triangulate, Triangulation};
pub use utm::{geodetic_to_utm, geodetic_to_utm_in_zone, utm_to_geodetic, UtmCoord, UtmZone};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis, meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rational polynomial denominator near zero ({0:e})")]
    DenominatorNearZero(f64),
    #[error("point outside the model validity box (normalized coordinate {0:.3})")]
    OutOfValidityBox(f64),
    #[error("localization did not converge (residual {residual:e} px after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("rays are parallel: distance varies by less than 1e-6 m across the altitude bracket")]
    DegenerateRays,
    #[error("invalid altitude bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("homogeneous coordinate near zero: point maps to infinity")]
    PointAtInfinity,
    #[error("homography is singular")]
    SingularHomography,
    #[error("latitude {0} outside the UTM range [-80, 84]")]
    OutOfUtmRange(f64),
    #[error("invalid RPC model: {0}")]
    InvalidRpc(String),
    #[error("RPC parse error: {0}")]
    RpcParse(String),
}

/// Ground point: geodetic longitude/latitude in degrees, ellipsoidal height
/// in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64, alt: f64) -> Self {
        Self { lon, lat, alt }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.alt.is_finite()
    }
}

/// Image position in pixels; `col` is x, `row` is y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub col: f64,
    pub row: f64,
}

impl PixelCoord {
    pub fn new(col: f64, row: f64) -> Self {
        Self { col, row }
    }

    pub fn is_finite(&self) -> bool {
        self.col.is_finite() && self.row.is_finite()
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.col - other.col).hypot(self.row - other.row)
    }
}

//! WGS84 Universal Transverse Mercator via the Krüger n-series.
//!
//! Zones follow the regular 6° grid; the Norway/Svalbard exceptions are not
//! applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GeoPoint, GeometryError, WGS84_A, WGS84_F};

const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UtmZone {
    pub number: u8,
    pub north: bool,
}

impl UtmZone {
    pub fn for_point(lon: f64, lat: f64) -> Self {
        let number = (((lon + 180.0) / 6.0).floor() as i64).clamp(0, 59) as u8 + 1;
        Self {
            number,
            north: lat >= 0.0,
        }
    }

    pub fn central_meridian(&self) -> f64 {
        -183.0 + 6.0 * self.number as f64
    }
}

impl fmt::Display for UtmZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.number, if self.north { 'N' } else { 'S' })
    }
}

impl FromStr for UtmZone {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || GeometryError::RpcParse(format!("bad UTM zone '{s}'"));
        let hemi = s.chars().last().ok_or_else(bad)?;
        let north = match hemi.to_ascii_uppercase() {
            'N' => true,
            'S' => false,
            _ => return Err(bad()),
        };
        let number: u8 = s[..s.len() - 1].parse().map_err(|_| bad())?;
        if !(1..=60).contains(&number) {
            return Err(bad());
        }
        Ok(Self { number, north })
    }
}

impl TryFrom<String> for UtmZone {
    type Error = GeometryError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<UtmZone> for String {
    fn from(z: UtmZone) -> Self {
        z.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtmCoord {
    pub easting: f64,
    pub northing: f64,
    pub zone: UtmZone,
}

struct Series {
    a_rect: f64,
    alpha: [f64; 3],
    beta: [f64; 3],
    delta: [f64; 3],
    n: f64,
}

fn series() -> Series {
    let n = WGS84_F / (2.0 - WGS84_F);
    let (n2, n3) = (n * n, n * n * n);
    Series {
        a_rect: WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n2 * n2 / 64.0),
        alpha: [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0,
            61.0 * n3 / 240.0,
        ],
        beta: [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0,
            n2 / 48.0 + n3 / 15.0,
            17.0 * n3 / 480.0,
        ],
        delta: [
            2.0 * n - 2.0 * n2 / 3.0 - 2.0 * n3,
            7.0 * n2 / 3.0 - 8.0 * n3 / 5.0,
            56.0 * n3 / 15.0,
        ],
        n,
    }
}

pub fn geodetic_to_utm(p: &GeoPoint) -> Result<UtmCoord, GeometryError> {
    geodetic_to_utm_in_zone(p, UtmZone::for_point(p.lon, p.lat))
}

/// Project into a given zone (points near a zone edge may be forced into
/// the neighbouring zone so that one scene shares a single grid).
pub fn geodetic_to_utm_in_zone(p: &GeoPoint, zone: UtmZone) -> Result<UtmCoord, GeometryError> {
    if !(-80.0..=84.0).contains(&p.lat) {
        return Err(GeometryError::OutOfUtmRange(p.lat));
    }
    let s = series();
    let phi = p.lat.to_radians();
    let lam = (p.lon - zone.central_meridian()).to_radians();
    let k = 2.0 * s.n.sqrt() / (1.0 + s.n);
    let t = (phi.sin().atanh() - k * (k * phi.sin()).atanh()).sinh();
    let xi_p = (t / lam.cos()).atan();
    let eta_p = (lam.sin() / (1.0 + t * t).sqrt()).atanh();
    let mut e = eta_p;
    let mut n = xi_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let m = 2.0 * (j + 1) as f64;
        e += a * (m * xi_p).cos() * (m * eta_p).sinh();
        n += a * (m * xi_p).sin() * (m * eta_p).cosh();
    }
    let n0 = if zone.north { 0.0 } else { FALSE_NORTHING_SOUTH };
    Ok(UtmCoord {
        easting: FALSE_EASTING + K0 * s.a_rect * e,
        northing: n0 + K0 * s.a_rect * n,
        zone,
    })
}

pub fn utm_to_geodetic(c: &UtmCoord) -> GeoPoint {
    let s = series();
    let n0 = if c.zone.north { 0.0 } else { FALSE_NORTHING_SOUTH };
    let xi = (c.northing - n0) / (K0 * s.a_rect);
    let eta = (c.easting - FALSE_EASTING) / (K0 * s.a_rect);
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let m = 2.0 * (j + 1) as f64;
        xi_p -= b * (m * xi).sin() * (m * eta).cosh();
        eta_p -= b * (m * xi).cos() * (m * eta).sinh();
    }
    let chi = (xi_p.sin() / eta_p.cosh()).asin();
    let mut phi = chi;
    for (j, d) in s.delta.iter().enumerate() {
        phi += d * (2.0 * (j + 1) as f64 * chi).sin();
    }
    let lam = (eta_p.sinh() / xi_p.cos()).atan();
    GeoPoint {
        lon: c.zone.central_meridian() + lam.to_degrees(),
        lat: phi.to_degrees(),
        alt: 0.0,
    }
}

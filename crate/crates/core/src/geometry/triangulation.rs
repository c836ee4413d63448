use super::{GeoPoint, GeometryError, PixelCoord, RpcModel, WGS84_A};

/// Golden-section termination width, meters of altitude.
const ALTITUDE_RESOLUTION: f64 = 0.002;
const DEGENERATE_VARIATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: GeoPoint,
    /// Planar distance between the two localizations at the optimum, meters.
    pub residual: f64,
}

/// Equirectangular ground distance in meters between two lon/lat
/// positions, scaled at `ref_lat` degrees.
#[inline]
pub fn planar_distance_m(a: &GeoPoint, b: &GeoPoint, ref_lat: f64) -> f64 {
    let k = WGS84_A * std::f64::consts::PI / 180.0;
    let dx = (a.lon - b.lon) * ref_lat.to_radians().cos() * k;
    let dy = (a.lat - b.lat) * k;
    dx.hypot(dy)
}

struct RayPair<'a> {
    rpc1: &'a RpcModel,
    rpc2: &'a RpcModel,
    p1: PixelCoord,
    p2: PixelCoord,
    ref_lat: f64,
    last: Option<(GeoPoint, GeoPoint)>,
}

impl RayPair<'_> {
    fn eval(&mut self, alt: f64) -> Result<(f64, GeoPoint, GeoPoint), GeometryError> {
        let (g1, g2) = match self.last {
            Some((a, b)) => (
                self.rpc1.localize_from(&self.p1, alt, Some(&a))?,
                self.rpc2.localize_from(&self.p2, alt, Some(&b))?,
            ),
            None => (
                self.rpc1.localize(&self.p1, alt)?,
                self.rpc2.localize(&self.p2, alt)?,
            ),
        };
        self.last = Some((g1, g2));
        Ok((planar_distance_m(&g1, &g2, self.ref_lat), g1, g2))
    }
}

/// Altitude-search triangulation of a pixel correspondence.
///
/// Finds the altitude in `[alt_lo, alt_hi]` where the two localized rays
/// come closest in the horizontal plane, by golden-section search, and
/// returns the midpoint of the two ground positions there.
pub fn triangulate(
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    p1: &PixelCoord,
    p2: &PixelCoord,
    alt_lo: f64,
    alt_hi: f64,
) -> Result<Triangulation, GeometryError> {
    if !(alt_lo < alt_hi) || !alt_lo.is_finite() || !alt_hi.is_finite() {
        return Err(GeometryError::InvalidBracket {
            lo: alt_lo,
            hi: alt_hi,
        });
    }
    let mut rays = RayPair {
        rpc1,
        rpc2,
        p1: *p1,
        p2: *p2,
        ref_lat: rpc1.coefficients().lat_off,
        last: None,
    };

    let (d_lo, ..) = rays.eval(alt_lo)?;
    let (d_hi, ..) = rays.eval(alt_hi)?;
    let (d_mid, ..) = rays.eval(0.5 * (alt_lo + alt_hi))?;
    let spread = d_lo.max(d_hi).max(d_mid) - d_lo.min(d_hi).min(d_mid);
    if spread < DEGENERATE_VARIATION {
        return Err(GeometryError::DegenerateRays);
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (alt_lo, alt_hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = rays.eval(c)?.0;
    let mut fd = rays.eval(d)?.0;
    while b - a > ALTITUDE_RESOLUTION {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rays.eval(c)?.0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rays.eval(d)?.0;
        }
    }
    let alt = 0.5 * (a + b);
    let (residual, g1, g2) = rays.eval(alt)?;
    Ok(Triangulation {
        point: GeoPoint {
            lon: 0.5 * (g1.lon + g2.lon),
            lat: 0.5 * (g1.lat + g2.lat),
            alt,
        },
        residual,
    })
}

use rayon::prelude::*;

use super::{Point, PointCloud};
use crate::geometry::{geodetic_to_utm_in_zone, triangulate, PixelCoord, RpcModel, UtmZone};
use crate::matching::{normalize_sign, DisparityMap};
use crate::rectification::{RectifyingPair, Roi};

/// Points whose rays pass further apart than this are discarded, meters.
pub const MAX_TRIANGULATION_RESIDUAL: f64 = 3.0;
/// Widening of the ROI altitude bracket for the ray search, meters.
const ALTITUDE_SLACK: f64 = 20.0;

/// Triangulate every valid pixel of a full-frame disparity map.
pub fn disparity_to_points(
    d: &DisparityMap,
    pair: &RectifyingPair,
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    roi: &Roi,
) -> PointCloud {
    disparity_window_to_points(d, (0, 0), pair, rpc1, rpc2, roi)
}

/// Triangulate a disparity map whose pixel `(0, 0)` sits at `origin` in
/// the rectified frame. Points are expressed in the UTM zone of the ROI
/// centre; failed triangulations are skipped.
pub fn disparity_window_to_points(
    d: &DisparityMap,
    origin: (usize, usize),
    pair: &RectifyingPair,
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    roi: &Roi,
) -> PointCloud {
    let d = normalize_sign(d);
    let c = roi.center(0.0);
    let zone = UtmZone::for_point(c.lon, c.lat);
    let inv1 = pair.h1.inverse();
    let inv2 = pair.h2.inverse();
    let (alt_lo, alt_hi) = (roi.alt_lo - ALTITUDE_SLACK, roi.alt_hi + ALTITUDE_SLACK);
    let (ox, oy) = (origin.0 as f64, origin.1 as f64);

    let rows: Vec<Vec<Point>> = (0..d.height())
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::new();
            for c in 0..d.width() {
                let v = d.values.get(c, r);
                if v.is_nan() {
                    continue;
                }
                let (x, y) = (c as f64 + ox, r as f64 + oy);
                let point = (|| {
                    let p1 = inv1.apply(&PixelCoord::new(x, y))?;
                    let p2 = inv2.apply(&PixelCoord::new(x + v as f64, y))?;
                    let t = triangulate(rpc1, rpc2, &p1, &p2, alt_lo, alt_hi)?;
                    let u = geodetic_to_utm_in_zone(&t.point, zone)?;
                    Ok::<_, crate::geometry::GeometryError>(Point {
                        easting: u.easting,
                        northing: u.northing,
                        alt: t.point.alt,
                        residual: t.residual,
                    })
                })();
                match point {
                    Ok(p) if p.residual <= MAX_TRIANGULATION_RESIDUAL => out.push(p),
                    Ok(_) => {}
                    Err(e) => log::trace!("pixel ({x}, {y}): {e}"),
                }
            }
            out
        })
        .collect();
    PointCloud {
        zone: Some(zone),
        points: rows.into_iter().flatten().collect(),
    }
}

use rayon::prelude::*;

use super::cost::AggregatedVolume;
use super::{DisparityMap, SignConvention};
use crate::raster::Raster;

/// Sub-pixel offset of the parabola through `(-1, minus)`, `(0, center)`,
/// `(1, plus)`, clamped to ±0.5. Zero when the points are not convex.
#[inline]
pub fn parabola_offset(minus: f64, center: f64, plus: f64) -> f64 {
    let den = 2.0 * (minus + plus - 2.0 * center);
    if den > 0.0 {
        ((minus - plus) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Winner-takes-all selection with a uniqueness test and parabolic
/// sub-pixel refinement.
///
/// A pixel is rejected when the best cost outside `d* ± 1` does not
/// exceed the winning cost by the uniqueness margin, i.e. when
/// `second · ratio ≤ best`. Ties go to the smaller disparity.
pub fn wta_subpixel(vol: &AggregatedVolume, uniqueness_ratio: f64) -> DisparityMap {
    let (w, h, n) = (vol.width, vol.height, vol.ndisp);
    let mut values = vec![f32::NAN; w * h];
    values.par_chunks_mut(w.max(1)).enumerate().for_each(|(r, line)| {
        for (c, out) in line.iter_mut().enumerate() {
            if !vol.valid[r * w + c] {
                continue;
            }
            let costs = vol.costs(c, r);
            let mut best = 0;
            for k in 1..n {
                if costs[k] < costs[best] {
                    best = k;
                }
            }
            let best_cost = costs[best] as f64;
            let second = costs
                .iter()
                .enumerate()
                .filter(|(k, _)| k.abs_diff(best) > 1)
                .map(|(_, &v)| v)
                .min();
            if let Some(second) = second {
                if second as f64 * uniqueness_ratio <= best_cost {
                    continue;
                }
            }
            let offset = if best > 0 && best + 1 < n {
                parabola_offset(costs[best - 1] as f64, best_cost, costs[best + 1] as f64)
            } else {
                0.0
            };
            *out = (vol.dmin as f64 + best as f64 + offset) as f32;
        }
    });
    DisparityMap::new(
        Raster::from_vec(w, h, values).expect("sized buffer"),
        SignConvention::RightEqLeftPlusD,
    )
}

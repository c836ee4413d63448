use super::{DisparityMap, MatchError, SignConvention};
use crate::raster::Raster;

/// Convert a disparity map to the canonical `x_right = x_left + d`
/// convention.
pub fn normalize_sign(d: &DisparityMap) -> DisparityMap {
    match d.convention {
        SignConvention::RightEqLeftPlusD => d.clone(),
        SignConvention::RightEqLeftMinusD => DisparityMap::new(
            d.values.map(|v| if v.is_nan() { v } else { -v }),
            SignConvention::RightEqLeftPlusD,
        ),
    }
}

/// Left-right consistency check. `right` must come from matching the
/// swapped pair, so a consistent correspondence has `d_L(p) + d_R(q) ≈ 0`
/// with `q = (round(p.col + d_L(p)), p.row)`.
pub fn lr_consistency_filter(
    left: &DisparityMap,
    right: &DisparityMap,
    thresh: f64,
) -> Result<DisparityMap, MatchError> {
    if left.values.dims() != right.values.dims() {
        return Err(MatchError::SizeMismatch(left.values.dims(), right.values.dims()));
    }
    let left = normalize_sign(left);
    let right = normalize_sign(right);
    let (w, h) = left.values.dims();
    let values = Raster::from_fn(w, h, |c, r| {
        let d = left.values.get(c, r);
        if d.is_nan() {
            return f32::NAN;
        }
        let q = (c as f64 + d as f64).round();
        if q < 0.0 || q >= w as f64 {
            return f32::NAN;
        }
        let dr = right.values.get(q as usize, r);
        if dr.is_nan() || (d as f64 + dr as f64).abs() > thresh {
            f32::NAN
        } else {
            d
        }
    });
    Ok(DisparityMap::new(values, SignConvention::RightEqLeftPlusD))
}

/// Invalidate 4-connected regions of similar disparity (neighbours within
/// `max_diff`) smaller than `min_size` pixels.
pub fn remove_speckles(d: &DisparityMap, min_size: usize, max_diff: f32) -> DisparityMap {
    let (w, h) = d.values.dims();
    let mut label = vec![usize::MAX; w * h];
    let mut out = d.values.clone();
    let mut stack = Vec::new();
    let mut region = Vec::new();
    for start in 0..w * h {
        if label[start] != usize::MAX || d.values.data()[start].is_nan() {
            continue;
        }
        label[start] = start;
        stack.push(start);
        region.clear();
        while let Some(i) = stack.pop() {
            region.push(i);
            let v = d.values.data()[i];
            let (c, r) = (i % w, i / w);
            let mut visit = |j: usize| {
                let u = d.values.data()[j];
                if label[j] == usize::MAX && !u.is_nan() && (u - v).abs() <= max_diff {
                    label[j] = start;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        if region.len() < min_size {
            for &i in &region {
                out.data_mut()[i] = f32::NAN;
            }
        }
    }
    DisparityMap::new(out, d.convention)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, v: f32) -> DisparityMap {
        DisparityMap::new(Raster::filled(w, h, v), SignConvention::RightEqLeftPlusD)
    }

    #[test]
    fn canonical_is_identity() {
        let d = DisparityMap::new(
            Raster::from_fn(4, 3, |c, r| if c == r { f32::NAN } else { c as f32 - 0.3 * r as f32 }),
            SignConvention::RightEqLeftPlusD,
        );
        let n = normalize_sign(&d);
        assert_eq!(
            n.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            d.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn opposite_convention_negates() {
        let d = DisparityMap::new(Raster::filled(2, 2, 12.0), SignConvention::RightEqLeftMinusD);
        let n = normalize_sign(&d);
        assert_eq!(n.values.get(1, 1), -12.0);
        assert_eq!(n.convention, SignConvention::RightEqLeftPlusD);
        // relabelling back and normalizing again restores the values
        let back = normalize_sign(&DisparityMap::new(n.values.clone(), SignConvention::RightEqLeftMinusD));
        assert_eq!(back.values, d.values);
    }

    #[test]
    fn lr_examples() {
        let l = constant(20, 3, 5.0);
        let kept = lr_consistency_filter(&l, &constant(20, 3, -5.0), 2.0).unwrap();
        assert_eq!(kept.valid_count(), 15 * 3);
        for c in 0..15 {
            assert_eq!(kept.values.get(c, 1), 5.0);
        }
        let dropped = lr_consistency_filter(&l, &constant(20, 3, -8.0), 2.0).unwrap();
        assert_eq!(dropped.valid_count(), 0);
        let close = lr_consistency_filter(&l, &constant(20, 3, -6.5), 2.0).unwrap();
        assert_eq!(close.valid_count(), 15 * 3);
    }

    #[test]
    fn lr_size_mismatch() {
        assert!(matches!(
            lr_consistency_filter(&constant(3, 3, 0.0), &constant(4, 3, 0.0), 2.0),
            Err(MatchError::SizeMismatch(..))
        ));
    }

    #[test]
    fn speckles_removed() {
        let mut v = Raster::filled(10, 10, 3.0f32);
        v.set(5, 5, 40.0);
        v.set(5, 6, 40.5);
        v.set(0, 0, f32::NAN);
        let d = DisparityMap::new(v, SignConvention::RightEqLeftPlusD);
        let f = remove_speckles(&d, 3, 1.0);
        assert!(f.values.get(5, 5).is_nan() && f.values.get(5, 6).is_nan());
        assert_eq!(f.valid_count(), 97);
        assert_eq!(remove_speckles(&d, 2, 1.0).valid_count(), 99);
    }
}

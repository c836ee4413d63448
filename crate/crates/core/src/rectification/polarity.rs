use super::{Polarity, RectifyError, RectifyingPair, Roi, SparseMatch, MAX_MATCH_ROW_RESIDUAL};
use crate::geometry::{Homography, RpcModel};

const MIN_RANGE_EXPANSION: f64 = 10.0;
const RANGE_EXPANSION_FRACTION: f64 = 0.2;

/// Shift the right image horizontally so that every inlier match disparity
/// has sign `polarity` and magnitude at least `margin`, with the smallest
/// one exactly at `margin`.
///
/// The returned pair's disparity range is the shifted match range widened
/// by `max(20 % of its width, 10 px)`, split evenly between both ends; the
/// near end never drops below `margin`.
pub fn enforce_unipolarity(
    pair: &RectifyingPair,
    matches: &[SparseMatch],
    polarity: Polarity,
    margin: f64,
) -> Result<RectifyingPair, RectifyError> {
    let margin = margin.max(0.0);
    let sign = polarity.sign();
    // polarity-oriented disparities of the inliers
    let oriented: Vec<f64> = matches
        .iter()
        .filter(|m| m.row_residual() <= MAX_MATCH_ROW_RESIDUAL)
        .map(|m| sign * m.disparity())
        .collect();
    if oriented.is_empty() {
        return Err(RectifyError::NoInliers);
    }
    let lo = oriented.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = oriented.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // polarity +1: t = margin - min d; polarity -1: t = -margin - max d
    let t = sign * (margin - lo);
    let (shifted_lo, shifted_hi) = (margin, hi - lo + margin);
    let expand = (RANGE_EXPANSION_FRACTION * (shifted_hi - shifted_lo)).max(MIN_RANGE_EXPANSION);
    let near = (shifted_lo - 0.5 * expand).max(margin);
    let far = shifted_hi + 0.5 * expand;

    Ok(RectifyingPair {
        h2: pair.h2.then(&Homography::translation(t, 0.0)),
        disp_min: sign * near,
        disp_max: sign * far,
        polarity,
        margin_applied: margin,
        unipolar_shift: pair.unipolar_shift + t,
        ..pair.clone()
    })
}

/// Project the ROI centre at both bounding altitudes through the cameras
/// and homographies; true iff the polarity-oriented disparity strictly
/// increases with altitude.
pub fn check_altitude_consistency(
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    pair: &RectifyingPair,
    roi: &Roi,
) -> Result<bool, RectifyError> {
    roi.validate()?;
    let disparity = |alt: f64| -> Result<f64, RectifyError> {
        let (a, b) = pair.ground_disparity(rpc1, rpc2, &roi.center(alt))?;
        Ok(b.col - a.col)
    };
    let d_lo = disparity(roi.alt_lo)?;
    let d_hi = disparity(roi.alt_hi)?;
    Ok(pair.polarity.sign() * (d_hi - d_lo) > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelCoord;

    fn base_pair() -> RectifyingPair {
        RectifyingPair {
            h1: Homography::identity(),
            h2: Homography::identity(),
            disp_min: 0.0,
            disp_max: 0.0,
            polarity: Polarity::Positive,
            margin_applied: 0.0,
            out_width: 100,
            out_height: 100,
            shear: 0.0,
            unipolar_shift: 0.0,
        }
    }

    fn matches(disp: &[f64]) -> Vec<SparseMatch> {
        disp.iter()
            .enumerate()
            .map(|(i, &d)| SparseMatch {
                p1: PixelCoord::new(10.0 * i as f64, 5.0),
                p2: PixelCoord::new(10.0 * i as f64 + d, 5.0),
                score: 1.0,
            })
            .collect()
    }

    fn shifted(pair: &RectifyingPair, m: &[SparseMatch]) -> Vec<f64> {
        let t = pair.unipolar_shift;
        m.iter().map(|m| m.disparity() + t).collect()
    }

    #[test]
    fn positive_polarity_margin_50() {
        let m = matches(&[-3.0, 5.0, 12.0]);
        let p = enforce_unipolarity(&base_pair(), &m, Polarity::Positive, 50.0).unwrap();
        assert_eq!(p.unipolar_shift, 53.0);
        assert_eq!(shifted(&p, &m), vec![50.0, 58.0, 65.0]);
        // width 15 -> expansion max(3, 10) = 10, near end clamped at margin
        assert_eq!(p.disp_min, 50.0);
        assert_eq!(p.disp_max, 70.0);
        assert_eq!(p.margin_applied, 50.0);
        let moved = p.h2.apply(&PixelCoord::new(0.0, 0.0)).unwrap();
        assert_eq!(moved.col, 53.0);
    }

    #[test]
    fn margin_zero() {
        let m = matches(&[7.0, 9.0]);
        let p = enforce_unipolarity(&base_pair(), &m, Polarity::Positive, 0.0).unwrap();
        assert_eq!(p.unipolar_shift, -7.0);
        assert_eq!(shifted(&p, &m), vec![0.0, 2.0]);
    }

    #[test]
    fn negative_polarity_mirrors_positive() {
        let m = matches(&[-3.0, 5.0, 12.0]);
        let p = enforce_unipolarity(&base_pair(), &m, Polarity::Negative, 50.0).unwrap();
        assert_eq!(p.unipolar_shift, -62.0);
        assert_eq!(shifted(&p, &m), vec![-65.0, -57.0, -50.0]);
        assert_eq!(p.disp_min, -50.0);
        assert_eq!(p.disp_max, -70.0);
        assert_eq!(p.signed_range(), (-70.0, -50.0));
    }

    #[test]
    fn outliers_do_not_set_the_shift() {
        let mut m = matches(&[4.0, 6.0]);
        m.push(SparseMatch {
            p1: PixelCoord::new(0.0, 0.0),
            p2: PixelCoord::new(-100.0, 3.0),
            score: 0.9,
        });
        let p = enforce_unipolarity(&base_pair(), &m, Polarity::Positive, 50.0).unwrap();
        assert_eq!(p.unipolar_shift, 46.0);
    }

    #[test]
    fn no_inliers_is_an_error() {
        let m = vec![SparseMatch {
            p1: PixelCoord::new(0.0, 0.0),
            p2: PixelCoord::new(1.0, 10.0),
            score: 1.0,
        }];
        assert!(matches!(
            enforce_unipolarity(&base_pair(), &m, Polarity::Positive, 50.0),
            Err(RectifyError::NoInliers)
        ));
    }

    #[test]
    fn wide_ranges_expand_by_a_fifth() {
        let m = matches(&[0.0, 100.0]);
        let p = enforce_unipolarity(&base_pair(), &m, Polarity::Positive, 50.0).unwrap();
        assert_eq!(p.disp_min, 50.0);
        assert_eq!(p.disp_max, 160.0);
    }
}

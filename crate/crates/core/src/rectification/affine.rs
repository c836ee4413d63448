use nalgebra::{Matrix4, SymmetricEigen, Vector4};

use super::{RectifyError, Roi, MAX_EPIPOLAR_RESIDUAL};
use crate::geometry::{GeoPoint, Homography, PixelCoord, RpcModel};

/// RPC virtual correspondences: a `grid_n × grid_n` lon/lat grid over the
/// ROI projected at `alt_lo` and then at `alt_hi` (altitude-major order).
/// Grid points that fail to project in either image are skipped.
pub fn virtual_matches(
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    roi: &Roi,
    grid_n: usize,
) -> Result<Vec<(PixelCoord, PixelCoord)>, RectifyError> {
    roi.validate()?;
    let n = grid_n.max(3);
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(2 * n * n);
    for alt in [roi.alt_lo, roi.alt_hi] {
        for i in 0..n {
            for j in 0..n {
                let g = GeoPoint::new(
                    step(roi.lon_min, roi.lon_max, j),
                    step(roi.lat_min, roi.lat_max, i),
                    alt,
                );
                if let (Ok(a), Ok(b)) = (rpc1.project(&g), rpc2.project(&g)) {
                    out.push((a, b));
                }
            }
        }
    }
    if out.len() < 8 {
        return Err(RectifyError::InsufficientCorrespondences(out.len()));
    }
    Ok(out)
}

fn centroid(points: impl Iterator<Item = PixelCoord>) -> PixelCoord {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.col;
        sy += p.row;
        n += 1;
    }
    PixelCoord::new(sx / n as f64, sy / n as f64)
}

/// Fit affine rectifying transforms from point correspondences.
///
/// The affine fundamental matrix `a·x2 + b·y2 + c·x1 + d·y1 + e = 0` is
/// estimated by total least squares on centred coordinates. `h1` is the
/// rotation about the left centroid that makes the left epipolar lines
/// horizontal; `h2` rotates the right image, scales it vertically so rows
/// agree, and aligns the right centroid horizontally with the left one.
pub fn fit_rectifying_transforms(
    corr: &[(PixelCoord, PixelCoord)],
) -> Result<(Homography, Homography), RectifyError> {
    if corr.len() < 8 {
        return Err(RectifyError::InsufficientCorrespondences(corr.len()));
    }
    let c1 = centroid(corr.iter().map(|c| c.0));
    let c2 = centroid(corr.iter().map(|c| c.1));

    // scatter of [x2, y2, x1, y1] about the centroids
    let mut scatter = Matrix4::<f64>::zeros();
    for (p1, p2) in corr {
        let v = Vector4::new(p2.col - c2.col, p2.row - c2.row, p1.col - c1.col, p1.row - c1.row);
        scatter += v * v.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let largest = eig.eigenvalues[order[3]];
    if !(largest > 0.0) {
        return Err(RectifyError::DegenerateGeometry(
            "correspondences are all identical".into(),
        ));
    }
    let rel = |k: usize| eig.eigenvalues[order[k]].max(0.0) / largest;
    let null0 = eig.eigenvectors.column(order[0]).into_owned();
    let null1 = eig.eigenvectors.column(order[1]).into_owned();

    let f = if rel(1) < 1e-12 {
        // Two-dimensional null space: the correspondences do not pin down
        // the epipolar direction. Accept it only if "rows already agree"
        // is one of the solutions.
        let preferred = Vector4::new(0.0, 1.0, 0.0, -1.0) / 2f64.sqrt();
        let proj = null0 * null0.dot(&preferred) + null1 * null1.dot(&preferred);
        if (proj - preferred).norm() > 1e-6 {
            return Err(RectifyError::DegenerateGeometry(
                "rank-deficient affine fundamental matrix".into(),
            ));
        }
        preferred
    } else {
        null0
    };
    let (a, b, c, d) = (f[0], f[1], f[2], f[3]);
    let n1 = c.hypot(d);
    if n1 < 1e-9 || a.hypot(b) < 1e-9 {
        return Err(RectifyError::DegenerateGeometry(
            "epipolar direction undefined in one image".into(),
        ));
    }
    // row direction of the left image, oriented to point down
    let sigma = if d > 0.0 || (d == 0.0 && c > 0.0) { 1.0 } else { -1.0 };
    let v1 = (sigma * c / n1, sigma * d / n1);
    let u1 = (v1.1, -v1.0);
    let h1 = Homography::from_rows([
        [u1.0, u1.1, c1.col - (u1.0 * c1.col + u1.1 * c1.row)],
        [v1.0, v1.1, c1.row - (v1.0 * c1.col + v1.1 * c1.row)],
        [0.0, 0.0, 1.0],
    ])?;
    let v2 = (-sigma * a / n1, -sigma * b / n1);
    let k = v2.0.hypot(v2.1);
    let u2 = (v2.1 / k, -v2.0 / k);
    let h2 = Homography::from_rows([
        [u2.0, u2.1, c1.col - (u2.0 * c2.col + u2.1 * c2.row)],
        [v2.0, v2.1, c1.row - (v2.0 * c2.col + v2.1 * c2.row)],
        [0.0, 0.0, 1.0],
    ])?;

    let mut worst: f64 = 0.0;
    for (p1, p2) in corr {
        let r = (h1.apply(p1)?.row - h2.apply(p2)?.row).abs();
        worst = worst.max(r);
    }
    if worst > MAX_EPIPOLAR_RESIDUAL {
        return Err(RectifyError::ResidualTooLarge(worst));
    }
    Ok((h1, h2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShearRefinement {
    pub h2: Homography,
    /// Shear coefficient `s` of `x' = x + s·y` composed onto `h2`.
    pub shear: f64,
}

fn range_width(values: impl Iterator<Item = f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Compose `h2` with the horizontal shear that removes the least-squares
/// linear trend of disparity against row. `rectified` holds
/// correspondences already mapped through the current `(h1, h2)`.
///
/// The shear is rejected (and `h2` returned unchanged) when it would widen
/// the disparity range.
pub fn shear_refine(h2: &Homography, rectified: &[(PixelCoord, PixelCoord)]) -> ShearRefinement {
    let unchanged = ShearRefinement {
        h2: *h2,
        shear: 0.0,
    };
    let n = rectified.len() as f64;
    if rectified.len() < 2 {
        return unchanged;
    }
    let disp = |p: &(PixelCoord, PixelCoord)| p.1.col - p.0.col;
    let my = rectified.iter().map(|p| p.1.row).sum::<f64>() / n;
    let md = rectified.iter().map(disp).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in rectified {
        let dy = p.1.row - my;
        sxy += dy * (disp(p) - md);
        sxx += dy * dy;
    }
    if sxx <= f64::EPSILON * n || !(sxy / sxx).is_finite() {
        return unchanged;
    }
    let s = -(sxy / sxx);
    let before = range_width(rectified.iter().map(disp));
    let after = range_width(rectified.iter().map(|p| disp(p) + s * p.1.row));
    if after > before {
        return unchanged;
    }
    ShearRefinement {
        h2: h2.then(&Homography::shear_x(s)),
        shear: s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot(p: PixelCoord, angle: f64) -> PixelCoord {
        let (s, c) = angle.sin_cos();
        PixelCoord::new(c * p.col - s * p.row, s * p.col + c * p.row)
    }

    fn horizontal_corr(rng: &mut ChaCha8Rng, n: usize) -> Vec<(PixelCoord, PixelCoord)> {
        (0..n)
            .map(|_| {
                let p1 = PixelCoord::new(rng.random_range(0.0..500.0), rng.random_range(0.0..500.0));
                let d = rng.random_range(-20.0..20.0);
                (p1, PixelCoord::new(p1.col + d, p1.row))
            })
            .collect()
    }

    #[test]
    fn already_rectified_gives_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corr = horizontal_corr(&mut rng, 40);
        let (h1, h2) = fit_rectifying_transforms(&corr).unwrap();
        for h in [h1, h2] {
            let m = h.matrix();
            assert!((m[(0, 0)] - 1.0).abs() < 1e-9 && m[(0, 1)].abs() < 1e-9);
            assert!(m[(1, 0)].abs() < 1e-9 && (m[(1, 1)] - 1.0).abs() < 1e-9);
        }
        for (a, b) in &corr {
            let r = h1.apply(a).unwrap().row - h2.apply(b).unwrap().row;
            assert!(r.abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_rotation_of_right_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let angle = 5f64.to_radians();
        let corr: Vec<_> = horizontal_corr(&mut rng, 60)
            .into_iter()
            .map(|(a, b)| (a, rot(b, angle)))
            .collect();
        let (h1, h2) = fit_rectifying_transforms(&corr).unwrap();
        assert!(h1.rotation_angle().abs() < 1e-9);
        let m = h2.matrix();
        let recovered = (-m[(0, 1)]).atan2(m[(0, 0)]);
        assert!(
            (recovered.to_degrees() + 5.0).abs() < 0.01,
            "recovered {}°",
            recovered.to_degrees()
        );
    }

    #[test]
    fn too_few_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corr = horizontal_corr(&mut rng, 7);
        assert!(matches!(
            fit_rectifying_transforms(&corr),
            Err(RectifyError::InsufficientCorrespondences(7))
        ));
    }

    #[test]
    fn identical_points_are_handled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corr: Vec<_> = (0..20)
            .map(|_| {
                let p = PixelCoord::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                (p, p)
            })
            .collect();
        let (h1, h2) = fit_rectifying_transforms(&corr).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn shear_zero_without_row_trend() {
        let corr: Vec<_> = (0..30)
            .map(|i| {
                let p1 = PixelCoord::new(i as f64 * 3.0, (i % 10) as f64 * 20.0);
                (p1, PixelCoord::new(p1.col + 5.0, p1.row))
            })
            .collect();
        let r = shear_refine(&Homography::identity(), &corr);
        assert_eq!(r.shear, 0.0);
        assert_eq!(r.h2, Homography::identity());
    }

    #[test]
    fn shear_removes_linear_trend() {
        let corr: Vec<_> = (0..30)
            .map(|i| {
                let row = i as f64 * 7.0;
                let p1 = PixelCoord::new(100.0 + i as f64, row);
                (p1, PixelCoord::new(p1.col + 0.1 * row + 5.0, row))
            })
            .collect();
        let r = shear_refine(&Homography::identity(), &corr);
        assert!((r.shear + 0.1).abs() < 1e-12);
        let widths: Vec<f64> = corr
            .iter()
            .map(|(a, b)| r.h2.apply(b).unwrap().col - a.col)
            .collect();
        assert!(range_width(widths.into_iter()) < 1e-9);
    }

    #[test]
    fn shear_never_widens_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let slope = rng.random_range(-0.2..0.2);
            let noise = rng.random_range(0.0..30.0);
            let n = rng.random_range(2..40);
            let corr: Vec<_> = (0..n)
                .map(|_| {
                    let row = rng.random_range(0.0..800.0);
                    let p1 = PixelCoord::new(rng.random_range(0.0..800.0), row);
                    let d = slope * row + rng.random_range(-noise..=noise);
                    (p1, PixelCoord::new(p1.col + d, row))
                })
                .collect();
            let before = range_width(corr.iter().map(|(a, b)| b.col - a.col));
            let r = shear_refine(&Homography::identity(), &corr);
            let after = range_width(
                corr.iter()
                    .map(|(a, b)| r.h2.apply(b).unwrap().col - a.col),
            );
            assert!(after <= before + 1e-9, "{after} > {before}");
        }
    }
}

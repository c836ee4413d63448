//! Sparse matching on an initially rectified pair: multi-scale Harris
//! corners matched along epipolar rows with zero-mean normalized
//! cross-correlation and a mutual-best test.

use rayon::prelude::*;

use super::{RectifyError, SparseMatch, MAX_MATCH_ROW_RESIDUAL};
use crate::geometry::PixelCoord;
use crate::raster::Raster;

pub const MIN_SPARSE_MATCHES: usize = 20;

/// Pluggable sparse correspondence detector. Inputs are the two images
/// rectified with the initial transforms.
pub trait SparseMatcher: Sync {
    fn detect(&self, img1: &Raster<f32>, img2: &Raster<f32>) -> Result<Vec<SparseMatch>, RectifyError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerZnccMatcher {
    /// Side of the correlation patch; odd.
    pub patch: usize,
    pub max_corners: usize,
    pub min_score: f64,
    /// Largest row offset searched between corresponding corners.
    pub row_search: usize,
}

impl CornerZnccMatcher {
    pub const DEFAULT: CornerZnccMatcher = CornerZnccMatcher {
        patch: 13,
        max_corners: 2000,
        min_score: 0.7,
        row_search: 2,
    };
}

impl Default for CornerZnccMatcher {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl SparseMatcher for CornerZnccMatcher {
    fn detect(&self, img1: &Raster<f32>, img2: &Raster<f32>) -> Result<Vec<SparseMatch>, RectifyError> {
        let half = self.patch / 2;
        let c1 = multiscale_corners(img1, half + 3, self.max_corners);
        let c2 = multiscale_corners(img2, half + 3, self.max_corners);
        let p1: Vec<Option<Vec<f64>>> = c1.par_iter().map(|&(x, y)| patch(img1, x, y, half)).collect();
        let p2: Vec<Option<Vec<f64>>> = c2.par_iter().map(|&(x, y)| patch(img2, x, y, half)).collect();

        // right corners sorted by row for the epipolar band lookup
        let mut by_row: Vec<usize> = (0..c2.len()).filter(|&j| p2[j].is_some()).collect();
        by_row.sort_by_key(|&j| (c2[j].1, c2[j].0));
        let band = self.row_search as isize;
        let candidates = |y: isize| {
            let lo = by_row.partition_point(|&j| (c2[j].1 as isize) < y - band);
            let hi = by_row.partition_point(|&j| (c2[j].1 as isize) <= y + band);
            &by_row[lo..hi]
        };

        let best12: Vec<Option<(usize, f64)>> = (0..c1.len())
            .into_par_iter()
            .map(|i| {
                let a = p1[i].as_ref()?;
                best_of(candidates(c1[i].1 as isize).iter().map(|&j| {
                    (j, dot(a, p2[j].as_ref().expect("filtered")))
                }))
            })
            .collect();

        let mut best21: Vec<Option<(usize, f64)>> = vec![None; c2.len()];
        // reverse direction: best left corner for each right corner
        for (i, a) in p1.iter().enumerate() {
            let Some(a) = a else { continue };
            for &j in candidates(c1[i].1 as isize) {
                let s = dot(a, p2[j].as_ref().expect("filtered"));
                if best21[j].is_none_or(|(_, bs)| s > bs) {
                    best21[j] = Some((i, s));
                }
            }
        }

        let mut matches: Vec<SparseMatch> = best12
            .par_iter()
            .enumerate()
            .filter_map(|(i, b)| {
                let (j, score) = (*b)?;
                if score < self.min_score || best21[j].map(|(k, _)| k) != Some(i) {
                    return None;
                }
                let (x1, y1) = c1[i];
                let (x2, y2, refined) = refine(img2, p1[i].as_ref()?, c2[j], half, self.row_search)?;
                let m = SparseMatch {
                    p1: PixelCoord::new(x1 as f64, y1 as f64),
                    p2: PixelCoord::new(x2, y2),
                    score: refined.max(score),
                };
                (m.row_residual() <= MAX_MATCH_ROW_RESIDUAL).then_some(m)
            })
            .collect();
        matches.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.p1.row.total_cmp(&b.p1.row))
                .then(a.p1.col.total_cmp(&b.p1.col))
        });
        if matches.len() < MIN_SPARSE_MATCHES {
            return Err(RectifyError::InsufficientMatches(matches.len()));
        }
        Ok(matches)
    }
}

/// Built-in sparse matching with default parameters.
pub fn detect_sparse_matches(
    img1: &Raster<f32>,
    img2: &Raster<f32>,
) -> Result<Vec<SparseMatch>, RectifyError> {
    CornerZnccMatcher::DEFAULT.detect(img1, img2)
}

fn best_of(it: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in it {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((j, s));
        }
    }
    best
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean-centred, unit-norm patch; `None` if it leaves the image, contains
/// NaN or has no variance.
fn patch(img: &Raster<f32>, x: usize, y: usize, half: usize) -> Option<Vec<f64>> {
    let (w, h) = img.dims();
    if x < half || y < half || x + half >= w || y + half >= h {
        return None;
    }
    let mut v = Vec::with_capacity((2 * half + 1).pow(2));
    for r in y - half..=y + half {
        for c in x - half..=x + half {
            let s = img.get(c, r);
            if !s.is_finite() {
                return None;
            }
            v.push(s as f64);
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|s| *s -= mean);
    let norm = dot(&v, &v).sqrt();
    if norm < 1e-9 {
        return None;
    }
    v.iter_mut().for_each(|s| *s /= norm);
    Some(v)
}

/// Local ZNCC search around the matched right corner with parabolic
/// sub-pixel interpolation on both axes.
fn refine(
    img2: &Raster<f32>,
    left: &[f64],
    (cx, cy): (usize, usize),
    half: usize,
    radius: usize,
) -> Option<(f64, f64, f64)> {
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mut scores = vec![f64::NAN; side * side];
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x < 0 || y < 0 {
                continue;
            }
            if let Some(p) = patch(img2, x as usize, y as usize, half) {
                scores[((dy + r) as usize) * side + (dx + r) as usize] = dot(left, &p);
            }
        }
    }
    let (best, &s) = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    let (bx, by) = (best % side, best / side);
    let at = |x: usize, y: usize| scores[y * side + x];
    let parabola = |m: f64, c: f64, p: f64| {
        let den = m + p - 2.0 * c;
        if m.is_finite() && p.is_finite() && den < 0.0 {
            (0.5 * (m - p) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let ox = if bx > 0 && bx + 1 < side {
        parabola(at(bx - 1, by), s, at(bx + 1, by))
    } else {
        0.0
    };
    let oy = if by > 0 && by + 1 < side {
        parabola(at(bx, by - 1), s, at(bx, by + 1))
    } else {
        0.0
    };
    Some((
        cx as f64 + bx as f64 - r as f64 + ox,
        cy as f64 + by as f64 - r as f64 + oy,
        s,
    ))
}

fn downsample2(img: &Raster<f32>) -> Raster<f32> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    Raster::from_fn(w, h, |c, r| {
        0.25 * (img.get(2 * c, 2 * r)
            + img.get(2 * c + 1, 2 * r)
            + img.get(2 * c, 2 * r + 1)
            + img.get(2 * c + 1, 2 * r + 1))
    })
}

/// Harris response with a 5×5 box-summed structure tensor; NaN where any
/// input in the support is NaN.
fn harris(img: &Raster<f32>) -> Raster<f64> {
    let (w, h) = img.dims();
    let grad = |c: usize, r: usize| -> (f64, f64) {
        let cl = c.saturating_sub(1);
        let cr = (c + 1).min(w - 1);
        let ru = r.saturating_sub(1);
        let rd = (r + 1).min(h - 1);
        let gx = (img.get(cr, r) as f64 - img.get(cl, r) as f64) / (cr - cl).max(1) as f64;
        let gy = (img.get(c, rd) as f64 - img.get(c, ru) as f64) / (rd - ru).max(1) as f64;
        (gx, gy)
    };
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let (gx, gy) = grad(c, r);
            ixx[r * w + c] = gx * gx;
            iyy[r * w + c] = gy * gy;
            ixy[r * w + c] = gx * gy;
        }
    }
    let box_sum = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0;
                for k in c.saturating_sub(2)..=(c + 2).min(w - 1) {
                    s += src[r * w + k];
                }
                tmp[r * w + c] = s;
            }
        }
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0;
                for k in r.saturating_sub(2)..=(r + 2).min(h - 1) {
                    s += tmp[k * w + c];
                }
                out[r * w + c] = s;
            }
        }
        out
    };
    let (sxx, syy, sxy) = (box_sum(&ixx), box_sum(&iyy), box_sum(&ixy));
    Raster::from_fn(w, h, |c, r| {
        let i = r * w + c;
        let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
        let tr = sxx[i] + syy[i];
        det - 0.04 * tr * tr
    })
}

/// Local maxima of the Harris response in a 7×7 window, strongest first.
fn corners_at_scale(img: &Raster<f32>, border: usize, limit: usize) -> Vec<(usize, usize, f64)> {
    let (w, h) = img.dims();
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let resp = harris(img);
    let rmax = resp
        .data()
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    if !(rmax > 0.0) {
        return Vec::new();
    }
    let thresh = 1e-3 * rmax;
    let mut out: Vec<(usize, usize, f64)> = (border..h - border)
        .into_par_iter()
        .flat_map_iter(|r| {
            let resp = &resp;
            (border..w - border).filter_map(move |c| {
                let v = resp.get(c, r);
                if !(v > thresh) {
                    return None;
                }
                for rr in r.saturating_sub(3)..=(r + 3).min(h - 1) {
                    for cc in c.saturating_sub(3)..=(c + 3).min(w - 1) {
                        let o = resp.get(cc, rr);
                        if (rr, cc) != (r, c) && !(o < v || (o == v && (rr, cc) > (r, c))) {
                            return None;
                        }
                    }
                }
                Some((c, r, v))
            })
        })
        .collect();
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    out.truncate(limit);
    out
}

fn multiscale_corners(img: &Raster<f32>, border: usize, max_corners: usize) -> Vec<(usize, usize)> {
    let fine = corners_at_scale(img, border, max_corners * 2 / 3);
    let coarse_img = downsample2(img);
    let coarse = corners_at_scale(&coarse_img, border.div_ceil(2), max_corners / 3);
    let mut out: Vec<(usize, usize)> = fine.iter().map(|&(c, r, _)| (c, r)).collect();
    for (c, r, _) in coarse {
        let (x, y) = (2 * c, 2 * r);
        if x + border >= img.width() || y + border >= img.height() {
            continue;
        }
        let dup = out
            .iter()
            .any(|&(a, b)| a.abs_diff(x) <= 2 && b.abs_diff(y) <= 2);
        if !dup {
            out.push((x, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, seed: u64) -> Raster<f32> {
        let hash = |x: i64, y: i64| {
            let mut v = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
                ^ seed;
            v ^= v >> 31;
            v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            v ^= v >> 29;
            (v % 1000) as f32 / 1000.0
        };
        // blocky noise smoothed by 2x2 averaging has crisp, corner-rich structure
        Raster::from_fn(w, h, |c, r| {
            let (x, y) = (c as i64, r as i64);
            100.0 * (hash(x / 3, y / 3) + hash((x + 1) / 3, (y + 1) / 3)) + 20.0 * hash(x / 11, y / 11)
        })
    }

    fn shift(img: &Raster<f32>, dx: isize) -> Raster<f32> {
        Raster::from_fn(img.width(), img.height(), |c, r| {
            img.get_clamped(c as isize - dx, r as isize)
        })
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn recovers_constructed_shift() {
        let a = texture(200, 120, 7);
        let b = shift(&a, 17);
        let m = detect_sparse_matches(&a, &b).unwrap();
        assert!(m.len() >= 20);
        let d = median(m.iter().map(|m| m.disparity()).collect());
        assert!((d - 17.0).abs() <= 0.5, "median disparity {d}");
        assert!(m.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn identical_images_have_zero_disparity() {
        let a = texture(160, 120, 9);
        let m = detect_sparse_matches(&a, &a).unwrap();
        let d = median(m.iter().map(|m| m.disparity()).collect());
        assert!(d.abs() < 0.05, "median disparity {d}");
    }

    #[test]
    fn textureless_images_fail() {
        let a = Raster::filled(100, 100, 42.0f32);
        assert!(matches!(
            detect_sparse_matches(&a, &a),
            Err(RectifyError::InsufficientMatches(0))
        ));
    }
}

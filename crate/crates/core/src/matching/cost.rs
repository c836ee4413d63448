use rayon::prelude::*;

use super::census::Census;
use super::MatchError;

pub const MAX_RANGE_WIDTH: usize = 1024;

/// Per-pixel cost over an integer disparity range `[dmin, dmin + ndisp)`,
/// laid out pixel-major: `data[(row * width + col) * ndisp + k]` holds the
/// cost of disparity `dmin + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub width: usize,
    pub height: usize,
    pub dmin: i32,
    pub ndisp: usize,
    pub data: Vec<T>,
    /// Pixels of the reference image that can be matched at all.
    pub valid: Vec<bool>,
}

pub type CostVolume = Volume<u8>;
pub type AggregatedVolume = Volume<u16>;

impl<T: Copy> Volume<T> {
    #[inline]
    pub fn costs(&self, col: usize, row: usize) -> &[T] {
        let i = (row * self.width + col) * self.ndisp;
        &self.data[i..i + self.ndisp]
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, d: i32) -> T {
        self.costs(col, row)[(d - self.dmin) as usize]
    }

    pub fn dmax(&self) -> i32 {
        self.dmin + self.ndisp as i32 - 1
    }
}

/// Hamming cost between left census strings and right strings at
/// `col + d` (right = left + d). Lookups outside the right image or onto
/// invalid pixels cost the census maximum.
pub fn compute_cost_volume(
    left: &Census,
    right: &Census,
    dmin: i32,
    dmax: i32,
) -> Result<CostVolume, MatchError> {
    if dmin > dmax {
        return Err(MatchError::InvalidRange(dmin, dmax));
    }
    let ndisp = (dmax as i64 - dmin as i64 + 1) as usize;
    if ndisp > MAX_RANGE_WIDTH {
        return Err(MatchError::RangeTooWide(ndisp));
    }
    if left.bits.dims() != right.bits.dims() {
        return Err(MatchError::SizeMismatch(left.bits.dims(), right.bits.dims()));
    }
    let (w, h) = left.bits.dims();
    let saturated = left.max_cost().max(right.max_cost());
    let mut data = vec![saturated; w * h * ndisp];
    data.par_chunks_mut((w * ndisp).max(1))
        .enumerate()
        .for_each(|(r, line)| {
            for c in 0..w {
                if !left.valid.get(c, r) {
                    continue;
                }
                let a = left.bits.get(c, r);
                let out = &mut line[c * ndisp..(c + 1) * ndisp];
                for (k, cost) in out.iter_mut().enumerate() {
                    let x = c as i64 + dmin as i64 + k as i64;
                    if x < 0 || x >= w as i64 || !right.valid.get(x as usize, r) {
                        continue;
                    }
                    let hd = (a ^ right.bits.get(x as usize, r)).count_ones() as u8;
                    *cost = hd.min(saturated);
                }
            }
        });
    Ok(Volume {
        width: w,
        height: h,
        dmin,
        ndisp,
        data,
        valid: left.valid.data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::census::census_transform;
    use super::*;
    use crate::raster::Raster;

    fn noise(w: usize, h: usize) -> Raster<f32> {
        Raster::from_fn(w, h, |c, r| {
            let mut v = (c as u64) << 32 | r as u64;
            v = (v ^ (v >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            v = (v ^ (v >> 27)).wrapping_mul(0x94D049BB133111EB);
            ((v ^ (v >> 31)) % 256) as f32
        })
    }

    #[test]
    fn identical_images_cost_zero() {
        let img = noise(20, 10);
        let c = census_transform(&img, 5).unwrap();
        let v = compute_cost_volume(&c, &c, 0, 0).unwrap();
        assert!(v.data.iter().all(|&x| x == 0));
    }

    #[test]
    fn shift_is_the_argmin() {
        let img = noise(40, 20);
        let right = Raster::from_fn(40, 20, |c, r| img.get_clamped(c as isize - 7, r as isize));
        let cl = census_transform(&img, 5).unwrap();
        let cr = census_transform(&right, 5).unwrap();
        let v = compute_cost_volume(&cl, &cr, 0, 10).unwrap();
        // local extrema have all-zero or all-one census strings and match
        // each other; only pixels with mixed strings are unambiguous
        let full = (1u64 << 24) - 1;
        let mut checked = 0;
        for r in 2..18 {
            for c in 2..28 {
                let bits = cl.bits.get(c, r);
                if bits == 0 || bits == full {
                    continue;
                }
                let costs = v.costs(c, r);
                let best = (0..costs.len()).min_by_key(|&k| costs[k]).unwrap();
                assert_eq!(best, 7, "pixel ({c},{r})");
                checked += 1;
            }
        }
        assert!(checked > 300);
    }

    #[test]
    fn out_of_image_saturates() {
        let img = noise(10, 4);
        let c = census_transform(&img, 3).unwrap();
        let v = compute_cost_volume(&c, &c, 5, 8).unwrap();
        assert_eq!(v.get(6, 1, 5), 8);
        assert_eq!(v.get(2, 1, 8), 8);
    }

    #[test]
    fn range_checks() {
        let c = census_transform(&noise(4, 4), 3).unwrap();
        assert!(matches!(compute_cost_volume(&c, &c, 3, 2), Err(MatchError::InvalidRange(3, 2))));
        assert!(matches!(compute_cost_volume(&c, &c, 0, 1024), Err(MatchError::RangeTooWide(1025))));
    }
}

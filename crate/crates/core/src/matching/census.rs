use rayon::prelude::*;

use super::MatchError;
use crate::raster::Raster;

pub const MAX_CENSUS_WINDOW: usize = 7;

/// Census-transformed image. Bit `k` of a pixel's string is set iff the
/// `k`-th neighbour in raster order (centre excluded) is darker than the
/// centre. Pixels whose centre is not finite are marked invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct Census {
    pub bits: Raster<u64>,
    pub valid: Raster<bool>,
    pub window: usize,
}

impl Census {
    pub fn width(&self) -> usize {
        self.bits.width()
    }

    pub fn height(&self) -> usize {
        self.bits.height()
    }

    /// Hamming distance assigned to impossible or invalid comparisons.
    pub fn max_cost(&self) -> u8 {
        (self.window * self.window - 1) as u8
    }
}

pub fn census_transform(img: &Raster<f32>, window: usize) -> Result<Census, MatchError> {
    if window > MAX_CENSUS_WINDOW {
        return Err(MatchError::WindowTooLarge(window));
    }
    if window < 3 || window % 2 == 0 {
        return Err(MatchError::InvalidWindow(window));
    }
    let (w, h) = img.dims();
    let half = (window / 2) as isize;
    let mut bits = vec![0u64; w * h];
    bits.par_chunks_mut(w.max(1)).enumerate().for_each(|(r, line)| {
        for (c, out) in line.iter_mut().enumerate() {
            let center = img.get(c, r);
            let mut v = 0u64;
            let mut k = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = img.get_clamped(c as isize + dx, r as isize + dy);
                    if n < center {
                        v |= 1 << k;
                    }
                    k += 1;
                }
            }
            *out = v;
        }
    });
    Ok(Census {
        bits: Raster::from_vec(w, h, bits).expect("sized buffer"),
        valid: img.map(|v| v.is_finite()),
        window,
    })
}

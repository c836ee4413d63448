use rayon::prelude::*;

use crate::geometry::{Homography, PixelCoord};
use crate::raster::Raster;

/// Keys cubic convolution kernel, a = -0.5.
#[inline]
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

#[inline]
fn weights(frac: f64) -> [f64; 4] {
    if frac == 0.0 {
        [0.0, 1.0, 0.0, 0.0]
    } else {
        [keys(1.0 + frac), keys(frac), keys(1.0 - frac), keys(2.0 - frac)]
    }
}

/// Bicubic sample at `(x, y)`; NaN outside the source or when a
/// contributing neighbour is NaN. Integer coordinates return the source
/// sample unchanged.
pub(crate) fn sample_bicubic(img: &Raster<f32>, x: f64, y: f64) -> f32 {
    let (w, h) = img.dims();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return f32::NAN;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    if fx == 0.0 && fy == 0.0 {
        return img.get(x0 as usize, y0 as usize);
    }
    let wx = weights(fx);
    let wy = weights(fy);
    let mut acc = 0.0f64;
    for (j, &wyj) in wy.iter().enumerate() {
        if wyj == 0.0 {
            continue;
        }
        let mut row_acc = 0.0f64;
        for (i, &wxi) in wx.iter().enumerate() {
            if wxi == 0.0 {
                continue;
            }
            let v = img.get_clamped(x0 + i as isize - 1, y0 + j as isize - 1);
            row_acc += wxi * v as f64;
        }
        acc += wyj * row_acc;
    }
    acc as f32
}

/// Inverse-warp `img` through `h` onto an `out_w × out_h` grid. Output
/// pixels whose source position falls outside the input are NaN.
pub fn rectify_image(img: &Raster<f32>, h: &Homography, out_w: usize, out_h: usize) -> Raster<f32> {
    let inv = h.inverse();
    let mut out = vec![f32::NAN; out_w * out_h];
    out.par_chunks_mut(out_w.max(1))
        .enumerate()
        .for_each(|(row, line)| {
            for (col, v) in line.iter_mut().enumerate() {
                if let Ok(src) = inv.apply(&PixelCoord::new(col as f64, row as f64)) {
                    *v = sample_bicubic(img, src.col, src.row);
                }
            }
        });
    Raster::from_vec(out_w, out_h, out).expect("sized buffer")
}

/// Rectangular tile of the rectified frame. `core` is the part whose
/// disparities are kept; cores of a tiling partition the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Tile {
    pub index: usize,
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
    pub core: CoreRect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct CoreRect {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

/// Start and end of each tile along one axis, stepping by
/// `tile - overlap`; the last tile shrinks to the frame edge.
fn spans(len: usize, tile: usize, overlap: usize) -> Vec<(usize, usize)> {
    let step = tile.saturating_sub(overlap).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + tile).min(len);
        out.push((start, end));
        if end >= len {
            break;
        }
        start += step;
    }
    out
}

/// Core intervals: neighbouring tiles split their overlap at its midpoint.
fn cores(spans: &[(usize, usize)]) -> Vec<(usize, usize)> {
    (0..spans.len())
        .map(|i| {
            let lo = if i == 0 { spans[0].0 } else { (spans[i].0 + spans[i - 1].1) / 2 };
            let hi = if i + 1 == spans.len() {
                spans[i].1
            } else {
                (spans[i + 1].0 + spans[i].1) / 2
            };
            (lo, hi)
        })
        .collect()
}

/// Overlapping tiles over a `width × height` frame, row-major.
pub fn tile_roi(width: usize, height: usize, tile: usize, overlap: usize) -> Vec<Tile> {
    if width == 0 || height == 0 {
        return Vec::new();
    }
    let xs = spans(width, tile, overlap);
    let ys = spans(height, tile, overlap);
    let (cx, cy) = (cores(&xs), cores(&ys));
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for (j, &(y0, y1)) in ys.iter().enumerate() {
        for (i, &(x0, x1)) in xs.iter().enumerate() {
            out.push(Tile {
                index: out.len(),
                col0: x0,
                row0: y0,
                width: x1 - x0,
                height: y1 - y0,
                core: CoreRect {
                    col0: cx[i].0,
                    row0: cy[j].0,
                    width: cx[i].1 - cx[i].0,
                    height: cy[j].1 - cy[j].0,
                },
            });
        }
    }
    out
}

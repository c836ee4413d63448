use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cost::{AggregatedVolume, CostVolume, Volume};
use super::MatchError;

/// Upper bound on P2 so that eight path costs always fit the 16-bit
/// aggregated volume.
pub const MAX_P2: u16 = 4000;

/// A scanline direction; the predecessor of pixel `p` is `p - (dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub dx: i32,
    pub dy: i32,
}

impl Direction {
    pub const fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }
}

pub const PATHS_4: [Direction; 4] = [
    Direction::new(1, 0),
    Direction::new(-1, 0),
    Direction::new(0, 1),
    Direction::new(0, -1),
];

pub const PATHS_8: [Direction; 8] = [
    Direction::new(1, 0),
    Direction::new(-1, 0),
    Direction::new(0, 1),
    Direction::new(0, -1),
    Direction::new(1, 1),
    Direction::new(-1, 1),
    Direction::new(1, -1),
    Direction::new(-1, -1),
];

pub fn directions(paths: usize) -> Result<&'static [Direction], MatchError> {
    match paths {
        4 => Ok(&PATHS_4),
        8 => Ok(&PATHS_8),
        n => Err(MatchError::InvalidPaths(n)),
    }
}

fn check_penalties(p1: u16, p2: u16) -> Result<(), MatchError> {
    if p1 > p2 || p2 > MAX_P2 {
        return Err(MatchError::InvalidPenalties { p1, p2 });
    }
    Ok(())
}

/// One step of the path recurrence; returns the minimum of `out`.
#[inline]
fn step(cost: &[u8], prev: &[u16], prev_min: u16, p1: u16, p2: u16, out: &mut [u16]) -> u16 {
    let n = cost.len();
    let jump = prev_min as u32 + p2 as u32;
    let mut min = u16::MAX;
    for k in 0..n {
        let mut m = (prev[k] as u32).min(jump);
        if k > 0 {
            m = m.min(prev[k - 1] as u32 + p1 as u32);
        }
        if k + 1 < n {
            m = m.min(prev[k + 1] as u32 + p1 as u32);
        }
        let v = (cost[k] as u32 + m - prev_min as u32) as u16;
        out[k] = v;
        min = min.min(v);
    }
    min
}

#[inline]
fn init(cost: &[u8], out: &mut [u16]) -> u16 {
    let mut min = u16::MAX;
    for (o, &c) in out.iter_mut().zip(cost) {
        *o = c as u16;
        min = min.min(c as u16);
    }
    min
}

fn accumulate(sum: &mut [u16], add: &[u16]) {
    for (s, &a) in sum.iter_mut().zip(add) {
        *s = s.saturating_add(a);
    }
}

/// Add the path costs of direction `dir` into `sum`.
fn add_direction(vol: &CostVolume, p1: u16, p2: u16, dir: Direction, sum: &mut [u16]) {
    let (w, h, n) = (vol.width, vol.height, vol.ndisp);
    if w == 0 || h == 0 {
        return;
    }
    if dir.dy == 0 {
        sum.par_chunks_mut(w * n).enumerate().for_each(|(r, sum_row)| {
            let mut prev = vec![0u16; n];
            let mut cur = vec![0u16; n];
            let mut prev_min = 0;
            let cols: Box<dyn Iterator<Item = usize>> = if dir.dx > 0 {
                Box::new(0..w)
            } else {
                Box::new((0..w).rev())
            };
            for (i, c) in cols.enumerate() {
                let cost = vol.costs(c, r);
                let m = if i == 0 {
                    init(cost, &mut cur)
                } else {
                    step(cost, &prev, prev_min, p1, p2, &mut cur)
                };
                accumulate(&mut sum_row[c * n..(c + 1) * n], &cur);
                std::mem::swap(&mut prev, &mut cur);
                prev_min = m;
            }
        });
        return;
    }

    let mut prev = vec![0u16; w * n];
    let mut prev_min = vec![0u16; w];
    let mut cur = vec![0u16; w * n];
    let mut cur_min = vec![0u16; w];
    let rows: Vec<usize> = if dir.dy > 0 {
        (0..h).collect()
    } else {
        (0..h).rev().collect()
    };
    for (i, &r) in rows.iter().enumerate() {
        cur.par_chunks_mut(n)
            .zip(cur_min.par_iter_mut())
            .enumerate()
            .for_each(|(c, (out, m))| {
                let cost = vol.costs(c, r);
                let pc = c as i64 - dir.dx as i64;
                *m = if i == 0 || pc < 0 || pc >= w as i64 {
                    init(cost, out)
                } else {
                    let pc = pc as usize;
                    step(cost, &prev[pc * n..(pc + 1) * n], prev_min[pc], p1, p2, out)
                };
            });
        accumulate(&mut sum[r * w * n..(r + 1) * w * n], &cur);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut prev_min, &mut cur_min);
    }
}

/// Path costs of a single direction.
pub fn aggregate_direction(
    vol: &CostVolume,
    p1: u16,
    p2: u16,
    dir: Direction,
) -> Result<AggregatedVolume, MatchError> {
    aggregate_directions(vol, p1, p2, &[dir])
}

pub fn aggregate_directions(
    vol: &CostVolume,
    p1: u16,
    p2: u16,
    dirs: &[Direction],
) -> Result<AggregatedVolume, MatchError> {
    check_penalties(p1, p2)?;
    let mut sum = vec![0u16; vol.data.len()];
    for &d in dirs {
        add_direction(vol, p1, p2, d, &mut sum);
    }
    Ok(Volume {
        width: vol.width,
        height: vol.height,
        dmin: vol.dmin,
        ndisp: vol.ndisp,
        data: sum,
        valid: vol.valid.clone(),
    })
}

/// Semi-global aggregation summed over the 4 or 8 canonical directions.
pub fn sgm_aggregate(
    vol: &CostVolume,
    p1: u16,
    p2: u16,
    paths: usize,
) -> Result<AggregatedVolume, MatchError> {
    aggregate_directions(vol, p1, p2, directions(paths)?)
}

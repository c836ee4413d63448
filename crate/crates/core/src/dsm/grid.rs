use rayon::prelude::*;

use super::{is_data, DsmError, DsmGrid, GridSpec, PointCloud, NODATA};
use crate::raster::Raster;
use crate::stats::median_sorted;

/// Bin points into the grid and keep the median altitude of each cell.
/// Cells without points are nodata; points outside the grid are ignored.
pub fn rasterize(pc: &PointCloud, spec: &GridSpec) -> Result<DsmGrid, DsmError> {
    spec.validate()?;
    if let Some(z) = pc.zone {
        if z != spec.zone {
            return Err(DsmError::GridMismatch(format!("points in {z}, grid in {}", spec.zone)));
        }
    }
    if pc.is_empty() {
        log::warn!("rasterizing an empty point cloud");
    }
    let mut binned: Vec<(usize, f64)> = pc
        .points
        .par_iter()
        .filter_map(|p| {
            let (c, r) = spec.locate(p.easting, p.northing)?;
            p.alt.is_finite().then_some((r * spec.width + c, p.alt))
        })
        .collect();
    binned.par_sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut values = vec![NODATA; spec.width * spec.height];
    let mut alts = Vec::new();
    let mut i = 0;
    while i < binned.len() {
        let cell = binned[i].0;
        alts.clear();
        while i < binned.len() && binned[i].0 == cell {
            alts.push(binned[i].1);
            i += 1;
        }
        values[cell] = median_sorted(&alts);
    }
    Ok(DsmGrid {
        spec: *spec,
        values: Raster::from_vec(spec.width, spec.height, values).expect("sized buffer"),
    })
}

/// Union of lattice-aligned tiles; cells covered by several tiles take the
/// median of their valid values.
pub fn mosaic(tiles: &[DsmGrid]) -> Result<DsmGrid, DsmError> {
    let first = tiles.first().ok_or(DsmError::NoTiles)?;
    let base = first.spec;
    let mut offsets = Vec::with_capacity(tiles.len());
    let (mut c0, mut r0, mut c1, mut r1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for t in tiles {
        let (dc, dr) = base.lattice_offset(&t.spec)?;
        c0 = c0.min(dc);
        r0 = r0.min(dr);
        c1 = c1.max(dc + t.spec.width as i64);
        r1 = r1.max(dr + t.spec.height as i64);
        offsets.push((dc, dr));
    }
    let spec = GridSpec {
        origin_e: base.origin_e + c0 as f64 * base.cell,
        origin_n: base.origin_n - r0 as f64 * base.cell,
        width: (c1 - c0) as usize,
        height: (r1 - r0) as usize,
        ..base
    };
    let mut values = vec![NODATA; spec.width * spec.height];
    values.par_chunks_mut(spec.width).enumerate().for_each(|(r, line)| {
        let mut vals = Vec::with_capacity(tiles.len());
        for (c, out) in line.iter_mut().enumerate() {
            vals.clear();
            for (t, &(dc, dr)) in tiles.iter().zip(&offsets) {
                let tc = c as i64 + c0 - dc;
                let tr = r as i64 + r0 - dr;
                if tc < 0 || tr < 0 || tc >= t.spec.width as i64 || tr >= t.spec.height as i64 {
                    continue;
                }
                let v = t.values.get(tc as usize, tr as usize);
                if is_data(v) {
                    vals.push(v);
                }
            }
            if !vals.is_empty() {
                vals.sort_unstable_by(f64::total_cmp);
                *out = median_sorted(&vals);
            }
        }
    });
    Ok(DsmGrid {
        spec,
        values: Raster::from_vec(spec.width, spec.height, values).expect("sized buffer"),
    })
}

#[cfg(test)]
mod tests {
    use super::super::Point;
    use super::*;

    fn spec(origin_e: f64, origin_n: f64, w: usize, h: usize) -> GridSpec {
        GridSpec {
            origin_e,
            origin_n,
            cell: 0.5,
            width: w,
            height: h,
            zone: "17N".parse().unwrap(),
        }
    }

    fn pt(e: f64, n: f64, alt: f64) -> Point {
        Point {
            easting: e,
            northing: n,
            alt,
            residual: 0.0,
        }
    }

    fn cloud(points: Vec<Point>) -> PointCloud {
        PointCloud {
            zone: Some("17N".parse().unwrap()),
            points,
        }
    }

    #[test]
    fn median_of_cell() {
        let s = spec(0.0, 10.0, 4, 4);
        let g = rasterize(&cloud(vec![pt(0.1, 9.9, 10.0), pt(0.2, 9.8, 30.0), pt(0.3, 9.7, 11.0)]), &s).unwrap();
        assert_eq!(g.get(0, 0), Some(11.0));
        assert_eq!(g.valid_count(), 1);
    }

    #[test]
    fn boundary_point_goes_to_floor_cell() {
        let s = spec(0.0, 10.0, 4, 4);
        let g = rasterize(&cloud(vec![pt(0.5, 9.5, 3.0)]), &s).unwrap();
        assert_eq!(g.get(1, 1), Some(3.0));
        assert_eq!(g.valid_count(), 1);
    }

    #[test]
    fn empty_cloud_is_all_nodata() {
        let g = rasterize(&cloud(vec![]), &spec(0.0, 10.0, 3, 3)).unwrap();
        assert_eq!(g.valid_count(), 0);
    }

    #[test]
    fn disjoint_tiles_copy_exactly() {
        let mut a = DsmGrid::empty(spec(0.0, 10.0, 2, 2));
        let mut b = DsmGrid::empty(spec(1.0, 10.0, 2, 2));
        a.values.set(0, 0, 1.125);
        b.values.set(1, 1, 7.3);
        let m = mosaic(&[a, b]).unwrap();
        assert_eq!((m.width(), m.height()), (4, 2));
        assert_eq!(m.get(0, 0), Some(1.125));
        assert_eq!(m.get(3, 1), Some(7.3));
        assert_eq!(m.valid_count(), 2);
    }

    #[test]
    fn overlap_takes_median_and_nodata_loses() {
        let mut a = DsmGrid::empty(spec(0.0, 10.0, 2, 1));
        let mut b = DsmGrid::empty(spec(0.0, 10.0, 2, 1));
        a.values.set(0, 0, 10.0);
        b.values.set(0, 0, 12.0);
        b.values.set(1, 0, 5.0);
        let m = mosaic(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.get(0, 0), Some(11.0));
        assert_eq!(m.get(1, 0), Some(5.0));
        assert_eq!(mosaic(&[b, a]).unwrap(), m);
    }

    #[test]
    fn mismatched_cells_rejected() {
        let a = DsmGrid::empty(spec(0.0, 10.0, 2, 1));
        let mut s = spec(0.0, 10.0, 2, 1);
        s.cell = 1.0;
        assert!(matches!(mosaic(&[a, DsmGrid::empty(s)]), Err(DsmError::GridMismatch(_))));
        assert!(matches!(mosaic(&[]), Err(DsmError::NoTiles)));
    }
}

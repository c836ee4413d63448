//! Comparison of a reconstructed DSM against ground truth: resampling onto
//! the GT lattice, global vertical alignment, error statistics overall and
//! per semantic class, and aggregation across scenes.

mod report;

pub use report::{aggregate_scenes, format_table, AggregateRow, MeanStd};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{is_data, DsmGrid, NODATA};
use crate::raster::Raster;
use crate::stats::{median, median_sorted};

/// Minimum number of jointly valid cells for vertical alignment.
pub const MIN_ALIGNMENT_CELLS: usize = 100;
pub const NMAD_SCALE: f64 = 1.4826;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("DSM and ground truth do not overlap")]
    NoOverlap,
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("only {0} jointly valid cells, at least 100 are required for alignment")]
    InsufficientOverlap(usize),
    #[error("no valid errors to summarize")]
    EmptyField,
    #[error("ground truth has no valid cells")]
    EmptyGt,
}

/// Nearest-neighbour resampling of `dsm` onto the lattice of `gt`.
pub fn resample_to_gt(dsm: &DsmGrid, gt: &DsmGrid) -> Result<DsmGrid, EvalError> {
    if dsm.spec.zone != gt.spec.zone {
        return Err(EvalError::GridMismatch(format!(
            "zones {} and {}",
            dsm.spec.zone, gt.spec.zone
        )));
    }
    let s = &dsm.spec;
    let g = &gt.spec;
    let overlap_e = s.origin_e < g.origin_e + g.width as f64 * g.cell
        && g.origin_e < s.origin_e + s.width as f64 * s.cell;
    let overlap_n = s.origin_n - s.height as f64 * s.cell < g.origin_n
        && g.origin_n - g.height as f64 * g.cell < s.origin_n;
    if !(overlap_e && overlap_n) {
        return Err(EvalError::NoOverlap);
    }
    let values = Raster::from_fn(g.width, g.height, |c, r| {
        let (e, n) = g.cell_center(c, r);
        match s.locate(e, n) {
            Some((sc, sr)) => dsm.values.get(sc, sr),
            None => NODATA,
        }
    });
    Ok(DsmGrid { spec: *g, values })
}

fn check_aligned(a: &DsmGrid, b: &DsmGrid) -> Result<(), EvalError> {
    if a.values.dims() != b.values.dims() {
        return Err(EvalError::GridMismatch(format!(
            "{:?} vs {:?} cells",
            a.values.dims(),
            b.values.dims()
        )));
    }
    Ok(())
}

/// Signed errors `dsm − gt` on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField {
    pub width: usize,
    pub height: usize,
    /// NaN where either raster is nodata.
    pub delta: Vec<f64>,
    pub gt_valid: Vec<bool>,
}

impl ErrorField {
    pub fn new(dsm: &DsmGrid, gt: &DsmGrid) -> Result<Self, EvalError> {
        check_aligned(dsm, gt)?;
        let gt_valid: Vec<bool> = gt.values.data().iter().map(|&v| is_data(v)).collect();
        let delta = dsm
            .values
            .data()
            .iter()
            .zip(gt.values.data())
            .map(|(&a, &b)| if is_data(a) && is_data(b) { a - b } else { f64::NAN })
            .collect();
        Ok(Self {
            width: gt.width(),
            height: gt.height(),
            delta,
            gt_valid,
        })
    }

    pub fn gt_valid_count(&self) -> usize {
        self.gt_valid.iter().filter(|&&v| v).count()
    }

    /// Valid errors of the cells selected by `mask`.
    pub fn errors_where(&self, mask: impl Fn(usize) -> bool) -> Vec<f64> {
        self.delta
            .iter()
            .enumerate()
            .filter(|&(i, d)| !d.is_nan() && mask(i))
            .map(|(_, &d)| d)
            .collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.errors_where(|_| true)
    }
}

/// Subtract the median of `dsm − gt` over jointly valid cells.
pub fn vertical_align(dsm: &DsmGrid, gt: &DsmGrid) -> Result<(DsmGrid, f64), EvalError> {
    let (mut out, offset) = vertical_align_pooled(&[(dsm, gt)])?;
    Ok((out.remove(0), offset))
}

/// Cross-scene alignment: one offset, the median of the pooled errors of
/// every scene, applied to all DSMs.
pub fn vertical_align_pooled(scenes: &[(&DsmGrid, &DsmGrid)]) -> Result<(Vec<DsmGrid>, f64), EvalError> {
    let mut pooled = Vec::new();
    for (dsm, gt) in scenes {
        pooled.extend(ErrorField::new(dsm, gt)?.errors());
    }
    if pooled.len() < MIN_ALIGNMENT_CELLS {
        return Err(EvalError::InsufficientOverlap(pooled.len()));
    }
    let offset = median(pooled);
    let aligned = scenes
        .iter()
        .map(|(dsm, _)| DsmGrid {
            spec: dsm.spec,
            values: dsm.values.map(|v| if is_data(v) { v - offset } else { NODATA }),
        })
        .collect();
    Ok((aligned, offset))
}

/// Error statistics of one scope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub p90: f64,
    pub nmad: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// P90 of |Δ| (linear interpolation at index 0.9·(n−1)), NMAD, RMSE and
/// MAE of a set of signed errors.
pub fn compute_metrics(errors: &[f64]) -> Result<Metrics, EvalError> {
    let n = errors.len();
    if n == 0 {
        return Err(EvalError::EmptyField);
    }
    let nf = n as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / nf;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / nf).sqrt();

    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_unstable_by(f64::total_cmp);
    let pos = 0.9 * (nf - 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let p90 = abs[lo] + (pos - lo as f64) * (abs[hi] - abs[lo]);

    let med = median(errors.to_vec());
    let mut dev: Vec<f64> = errors.iter().map(|e| (e - med).abs()).collect();
    dev.sort_unstable_by(f64::total_cmp);
    let nmad = NMAD_SCALE * median_sorted(&dev);
    Ok(Metrics { p90, nmad, rmse, mae })
}

/// `100 · (cells valid in both) / (cells valid in GT)`.
pub fn valid_fraction(dsm: &DsmGrid, gt: &DsmGrid) -> Result<f64, EvalError> {
    let e = ErrorField::new(dsm, gt)?;
    let denom = e.gt_valid_count();
    if denom == 0 {
        return Err(EvalError::EmptyGt);
    }
    Ok(100.0 * e.errors().len() as f64 / denom as f64)
}

/// Class selection of an aggregate scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSet {
    Only(Vec<i32>),
    AllExcept(Vec<i32>),
}

impl ClassSet {
    pub fn contains(&self, id: i32) -> bool {
        match self {
            ClassSet::Only(ids) => ids.contains(&id),
            ClassSet::AllExcept(ids) => !ids.contains(&id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateDef {
    pub name: String,
    pub classes: ClassSet,
}

/// Semantic labels aligned to the GT grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub classes: Raster<i32>,
    pub names: BTreeMap<i32, String>,
    pub aggregates: Vec<AggregateDef>,
}

pub const UNLABELED: &str = "unlabeled";

impl ClassMap {
    pub fn name_of(&self, id: i32) -> &str {
        self.names.get(&id).map(String::as_str).unwrap_or(UNLABELED)
    }

    /// Scope names with their cell masks: one per named class present in
    /// the raster (unknown ids pooled as `unlabeled`), then the aggregates.
    pub fn scopes(&self) -> Vec<(String, Vec<bool>)> {
        let mut by_name: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        let n = self.classes.data().len();
        for (i, &id) in self.classes.data().iter().enumerate() {
            by_name.entry(self.name_of(id).to_string()).or_insert_with(|| vec![false; n])[i] = true;
        }
        let mut out: Vec<(String, Vec<bool>)> = Vec::new();
        // named classes in id order, then the unlabeled bucket
        for name in self.names.values() {
            if let Some(mask) = by_name.remove(name) {
                out.push((name.clone(), mask));
            }
        }
        out.extend(by_name);
        for agg in &self.aggregates {
            let mask = self.classes.data().iter().map(|&id| agg.classes.contains(id)).collect();
            out.push((agg.name.clone(), mask));
        }
        out
    }
}

/// Statistics of one scope of one scene. `metrics` is absent when the
/// scope has no jointly valid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    pub scope: String,
    pub n_cells: usize,
    pub valid_pct: f64,
    pub metrics: Option<Metrics>,
}

pub const OVERALL: &str = "overall";

fn scope_metrics(e: &ErrorField, scope: &str, mask: &dyn Fn(usize) -> bool) -> ScopeMetrics {
    let errors = e.errors_where(mask);
    let gt_valid = (0..e.delta.len()).filter(|&i| e.gt_valid[i] && mask(i)).count();
    ScopeMetrics {
        scope: scope.to_string(),
        n_cells: errors.len(),
        valid_pct: if gt_valid == 0 {
            0.0
        } else {
            100.0 * errors.len() as f64 / gt_valid as f64
        },
        metrics: compute_metrics(&errors).ok(),
    }
}

/// Metrics restricted to each class and aggregate of `cm`.
pub fn classwise_metrics(e: &ErrorField, cm: &ClassMap) -> Result<Vec<ScopeMetrics>, EvalError> {
    if cm.classes.dims() != (e.width, e.height) {
        return Err(EvalError::GridMismatch("class raster is not aligned to the GT grid".into()));
    }
    Ok(cm
        .scopes()
        .into_iter()
        .map(|(name, mask)| scope_metrics(e, &name, &|i| mask[i]))
        .collect())
}

/// Evaluation of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scene: String,
    pub method: String,
    /// Vertical offset subtracted from the DSM, meters.
    pub offset: f64,
    /// Planimetric shift applied to the DSM, cells `(columns, rows)`.
    pub shift: (i32, i32),
    pub scopes: Vec<ScopeMetrics>,
}

impl MetricsReport {
    pub fn scope(&self, name: &str) -> Option<&ScopeMetrics> {
        self.scopes.iter().find(|s| s.scope == name)
    }

    /// One JSON record per scope.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.scopes {
            let rec = serde_json::json!({
                "scene": self.scene,
                "method": self.method,
                "scope": s.scope,
                "p90": s.metrics.map(|m| m.p90),
                "nmad": s.metrics.map(|m| m.nmad),
                "rmse": s.metrics.map(|m| m.rmse),
                "mae": s.metrics.map(|m| m.mae),
                "valid_pct": s.valid_pct,
                "n_cells": s.n_cells,
                "offset": self.offset,
                "shift": [self.shift.0, self.shift.1],
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Search integer planimetric shifts of up to this many cells that
    /// minimize NMAD before reporting; 0 disables.
    pub shift_search: usize,
}

fn shifted(dsm: &DsmGrid, dx: i32, dy: i32) -> DsmGrid {
    let (w, h) = dsm.values.dims();
    DsmGrid {
        spec: dsm.spec,
        values: Raster::from_fn(w, h, |c, r| {
            let sc = c as i64 - dx as i64;
            let sr = r as i64 - dy as i64;
            if sc < 0 || sr < 0 || sc >= w as i64 || sr >= h as i64 {
                NODATA
            } else {
                dsm.values.get(sc as usize, sr as usize)
            }
        }),
    }
}

/// Integer cell shift within `±radius` minimizing the NMAD of the errors.
pub fn best_planimetric_shift(dsm: &DsmGrid, gt: &DsmGrid, radius: usize) -> Result<(i32, i32), EvalError> {
    let r = radius as i32;
    let mut best: ((i32, i32), f64) = ((0, 0), f64::INFINITY);
    for dy in -r..=r {
        for dx in -r..=r {
            let e = ErrorField::new(&shifted(dsm, dx, dy), gt)?;
            if let Ok(m) = compute_metrics(&e.errors()) {
                let better = m.nmad < best.1
                    || (m.nmad == best.1 && (dx.abs() + dy.abs()) < (best.0 .0.abs() + best.0 .1.abs()));
                if better {
                    best = ((dx, dy), m.nmad);
                }
            }
        }
    }
    Ok(best.0)
}

/// Evaluate an already vertically aligned DSM on the GT grid.
pub fn evaluate_aligned(
    aligned: &DsmGrid,
    gt: &DsmGrid,
    classes: Option<&ClassMap>,
) -> Result<Vec<ScopeMetrics>, EvalError> {
    let e = ErrorField::new(aligned, gt)?;
    if e.gt_valid_count() == 0 {
        return Err(EvalError::EmptyGt);
    }
    let mut scopes = vec![scope_metrics(&e, OVERALL, &|_| true)];
    if let Some(cm) = classes {
        scopes.extend(classwise_metrics(&e, cm)?);
    }
    Ok(scopes)
}

/// Single-scene evaluation: resample to GT, optionally shift, align
/// vertically, then report overall and class-wise metrics.
pub fn evaluate(
    dsm: &DsmGrid,
    gt: &DsmGrid,
    classes: Option<&ClassMap>,
    opts: &EvalOptions,
    scene: &str,
    method: &str,
) -> Result<MetricsReport, EvalError> {
    let on_gt = resample_to_gt(dsm, gt)?;
    let shift = if opts.shift_search > 0 {
        best_planimetric_shift(&on_gt, gt, opts.shift_search)?
    } else {
        (0, 0)
    };
    let on_gt = if shift == (0, 0) { on_gt } else { shifted(&on_gt, shift.0, shift.1) };
    let (aligned, offset) = vertical_align(&on_gt, gt)?;
    Ok(MetricsReport {
        scene: scene.to_string(),
        method: method.to_string(),
        offset,
        shift,
        scopes: evaluate_aligned(&aligned, gt, classes)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsm::GridSpec;

    fn spec(origin_e: f64, origin_n: f64, cell: f64, w: usize, h: usize) -> GridSpec {
        GridSpec {
            origin_e,
            origin_n,
            cell,
            width: w,
            height: h,
            zone: "17N".parse().unwrap(),
        }
    }

    fn grid(s: GridSpec, f: impl FnMut(usize, usize) -> f64) -> DsmGrid {
        DsmGrid {
            values: Raster::from_fn(s.width, s.height, f),
            spec: s,
        }
    }

    #[test]
    fn resample_identity_and_shift() {
        let s = spec(0.0, 10.0, 0.5, 6, 4);
        let a = grid(s, |c, r| (r * 10 + c) as f64);
        assert_eq!(resample_to_gt(&a, &a).unwrap(), a);
        let gt = DsmGrid::empty(spec(0.5, 10.0, 0.5, 6, 4));
        let b = resample_to_gt(&a, &gt).unwrap();
        assert_eq!(b.get(0, 2), a.get(1, 2));
        assert_eq!(b.get(5, 0), None);
    }

    #[test]
    fn resample_coarse_to_fine_replicates_blocks() {
        let coarse = grid(spec(0.0, 4.0, 1.0, 4, 4), |c, r| (r * 4 + c) as f64);
        let fine = DsmGrid::empty(spec(0.0, 4.0, 0.5, 8, 8));
        let out = resample_to_gt(&coarse, &fine).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(out.get(c, r), coarse.get(c / 2, r / 2));
            }
        }
    }

    #[test]
    fn resample_disjoint_fails() {
        let a = DsmGrid::empty(spec(0.0, 10.0, 0.5, 4, 4));
        let b = DsmGrid::empty(spec(100.0, 10.0, 0.5, 4, 4));
        assert!(matches!(resample_to_gt(&a, &b), Err(EvalError::NoOverlap)));
    }

    #[test]
    fn alignment_removes_constant_bias() {
        let s = spec(0.0, 10.0, 0.5, 20, 20);
        let gt = grid(s, |c, r| (c + 2 * r) as f64 * 0.25);
        let dsm = grid(s, |c, r| gt.values.get(c, r) + 3.2);
        let (aligned, off) = vertical_align(&dsm, &gt).unwrap();
        assert!((off - 3.2).abs() < 1e-12);
        let e = ErrorField::new(&aligned, &gt).unwrap();
        assert!(e.errors().iter().all(|d| d.abs() < 1e-12));
        let (same, zero) = vertical_align(&gt, &gt).unwrap();
        assert_eq!(zero, 0.0);
        assert_eq!(same, gt);
    }

    #[test]
    fn alignment_needs_overlap() {
        let s = spec(0.0, 10.0, 0.5, 9, 11);
        let gt = grid(s, |_, _| 1.0);
        assert!(matches!(vertical_align(&gt, &gt), Err(EvalError::InsufficientOverlap(99))));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(
            compute_metrics(&[0.0; 5]).unwrap(),
            Metrics {
                p90: 0.0,
                nmad: 0.0,
                rmse: 0.0,
                mae: 0.0
            }
        );
        let m = compute_metrics(&[3.0, -4.0]).unwrap();
        assert_eq!(m.mae, 3.5);
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((m.p90 - 3.9).abs() < 1e-12);
        assert!((m.nmad - 5.1891).abs() < 1e-12);
        let m = compute_metrics(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert!((m.nmad - 1.4826).abs() < 1e-12);
        assert_eq!(m.mae, 22.0);
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyField)));
    }

    #[test]
    fn valid_fraction_denominator_is_gt() {
        let s = spec(0.0, 100.0, 0.5, 40, 30);
        // GT valid on the first 1000 cells, DSM on 785 of them plus 50 others
        let gt = grid(s, |c, r| if r * 40 + c < 1000 { 1.0 } else { NODATA });
        let dsm = grid(s, |c, r| {
            let i = r * 40 + c;
            if i < 785 || (1000..1050).contains(&i) {
                2.0
            } else {
                NODATA
            }
        });
        assert!((valid_fraction(&dsm, &gt).unwrap() - 78.5).abs() < 1e-12);
        assert_eq!(valid_fraction(&gt, &gt).unwrap(), 100.0);
        assert_eq!(valid_fraction(&DsmGrid::empty(s), &gt).unwrap(), 0.0);
        assert!(matches!(valid_fraction(&gt, &DsmGrid::empty(s)), Err(EvalError::EmptyGt)));
    }

    #[test]
    fn classwise_constant_fields() {
        let s = spec(0.0, 10.0, 0.5, 10, 10);
        let gt = grid(s, |_, _| 0.0);
        let dsm = grid(s, |c, _| if c < 5 { 0.0 } else { 5.0 });
        let cm = ClassMap {
            classes: Raster::from_fn(10, 10, |c, _| if c < 5 { 1 } else { 2 }),
            names: BTreeMap::from([(1, "A".to_string()), (2, "B".to_string())]),
            aggregates: vec![AggregateDef {
                name: "All Except B".into(),
                classes: ClassSet::AllExcept(vec![2]),
            }],
        };
        let e = ErrorField::new(&dsm, &gt).unwrap();
        let scopes = classwise_metrics(&e, &cm).unwrap();
        assert_eq!(scopes[0].scope, "A");
        assert_eq!(scopes[0].metrics.unwrap().mae, 0.0);
        let b = scopes[1].metrics.unwrap();
        assert_eq!((b.mae, b.rmse, b.p90, b.nmad), (5.0, 5.0, 5.0, 0.0));
        assert_eq!(scopes[2].scope, "All Except B");
        assert_eq!(scopes[2].metrics, scopes[0].metrics);
    }

    #[test]
    fn empty_scope_has_no_metrics() {
        let s = spec(0.0, 10.0, 0.5, 4, 4);
        let gt = grid(s, |_, _| 0.0);
        let cm = ClassMap {
            classes: Raster::filled(4, 4, 7),
            names: BTreeMap::from([(7, "Ground".to_string())]),
            aggregates: vec![AggregateDef {
                name: "Water".into(),
                classes: ClassSet::Only(vec![9]),
            }],
        };
        let e = ErrorField::new(&gt, &gt).unwrap();
        let scopes = classwise_metrics(&e, &cm).unwrap();
        assert_eq!(scopes[1].scope, "Water");
        assert_eq!(scopes[1].n_cells, 0);
        assert!(scopes[1].metrics.is_none());
    }

    #[test]
    fn planimetric_shift_found() {
        let s = spec(0.0, 20.0, 0.5, 30, 30);
        let h = |c: i64, r: i64| ((c * 7 + r * 13) % 17) as f64 + ((c * c + r) % 5) as f64 * 0.3;
        let gt = grid(s, |c, r| h(c as i64, r as i64));
        let dsm = grid(s, |c, r| h(c as i64 + 1, r as i64 - 2));
        assert_eq!(best_planimetric_shift(&dsm, &gt, 2).unwrap(), (1, -2));
        let rep = evaluate(&dsm, &gt, None, &EvalOptions { shift_search: 2 }, "s", "m").unwrap();
        assert_eq!(rep.shift, (1, -2));
        assert!(rep.scope(OVERALL).unwrap().metrics.unwrap().mae < 1e-12);
    }
}

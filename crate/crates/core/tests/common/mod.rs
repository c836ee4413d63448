#![allow(dead_code)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use satstereo::dsm::{DsmGrid, GridSpec};
use satstereo::pipeline::PipelineConfig;
use satstereo::synthetic::{SceneFiles, SyntheticScene};

pub struct SceneFixture {
    pub scene: SyntheticScene,
    pub files: SceneFiles,
    pub dir: PathBuf,
}

fn render(scene: SyntheticScene, name: &str) -> SceneFixture {
    let dir = tempfile::Builder::new()
        .prefix(name)
        .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
        .unwrap()
        .keep();
    let files = scene.write_inputs(&dir, 0.5).unwrap();
    SceneFixture { scene, files, dir }
}

/// The standard scene rendered once per test binary.
pub fn standard() -> &'static SceneFixture {
    static F: OnceLock<SceneFixture> = OnceLock::new();
    F.get_or_init(|| render(SyntheticScene::standard(), "standard-"))
}

pub fn swapped() -> &'static SceneFixture {
    static F: OnceLock<SceneFixture> = OnceLock::new();
    F.get_or_init(|| render(SyntheticScene::standard().swapped(), "swapped-"))
}

impl SceneFixture {
    pub fn config(&self, out: &str) -> PipelineConfig {
        let f = &self.files;
        let mut cfg = PipelineConfig::new(&f.left_image, &f.right_image, &f.left_rpc, &f.right_rpc, self.scene.roi());
        cfg.output_dir = self.dir.join(out);
        cfg
    }
}

/// Write an executable shell script.
pub fn script(path: &Path, body: &str) -> PathBuf {
    std::fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    let mut p = std::fs::metadata(path).unwrap().permissions();
    p.set_mode(0o755);
    std::fs::set_permissions(path, p).unwrap();
    path.to_path_buf()
}

pub fn cells(spec: &GridSpec) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..spec.height).flat_map(move |r| (0..spec.width).map(move |c| (c, r)))
}

/// `|a - b|` over cells valid in both grids, sorted.
pub fn co_valid_abs_diff(a: &DsmGrid, b: &DsmGrid) -> Vec<f64> {
    assert_eq!(a.spec, b.spec);
    let mut d: Vec<f64> = cells(&a.spec)
        .filter_map(|(c, r)| Some((a.get(c, r)? - b.get(c, r)?).abs()))
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Median of a sorted slice: middle element, or mean of the two middle
/// ones.
pub fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    assert!(n > 0);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scene-level accuracy figures of a DSM against the rendered truth.
#[derive(Debug)]
pub struct SceneAccuracy {
    pub valid_fraction: f64,
    pub mae_off_edges: f64,
    pub box_tops: Vec<(f64, f64)>,
}

/// `edge_band` in meters; box tops are medians over cells at least one
/// meter inside each box.
pub fn scene_accuracy(scene: &SyntheticScene, dsm: &DsmGrid, edge_band: f64) -> SceneAccuracy {
    let spec = dsm.spec;
    let gt = scene.ground_truth(&spec);
    let edge = scene.edge_mask(&spec, edge_band);
    let total = spec.width * spec.height;
    let valid = cells(&spec).filter(|&(c, r)| dsm.get(c, r).is_some()).count();
    let errs: Vec<f64> = cells(&spec)
        .filter(|&(c, r)| !edge.get(c, r))
        .filter_map(|(c, r)| Some((dsm.get(c, r)? - gt.values.get(c, r)).abs()))
        .collect();
    let box_tops = (0..scene.boxes.len())
        .map(|i| {
            let inside = scene.box_interior_mask(&spec, i, 1.0);
            let mut v: Vec<f64> = cells(&spec)
                .filter(|&(c, r)| inside.get(c, r))
                .filter_map(|(c, r)| dsm.get(c, r))
                .collect();
            v.sort_by(f64::total_cmp);
            (median_sorted(&v), scene.ground_alt + scene.boxes[i].height)
        })
        .collect();
    SceneAccuracy {
        valid_fraction: valid as f64 / total as f64,
        mae_off_edges: errs.iter().sum::<f64>() / errs.len() as f64,
        box_tops,
    }
}

/// k-th smallest value (0-based) found by counting ranks, without sorting.
pub fn kth_by_rank(v: &[f64], k: usize) -> f64 {
    for &x in v {
        let below = v.iter().filter(|&&y| y < x).count();
        let equal = v.iter().filter(|&&y| y == x).count();
        if below <= k && k < below + equal {
            return x;
        }
    }
    unreachable!("rank {k} not found among {} values", v.len())
}

pub fn median_by_rank(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        kth_by_rank(v, n / 2)
    } else {
        0.5 * (kth_by_rank(v, n / 2 - 1) + kth_by_rank(v, n / 2))
    }
}

/// `[p90, nmad, rmse, mae]` straight from the textbook definitions.
pub fn brute_metrics(e: &[f64]) -> [f64; 4] {
    let n = e.len() as f64;
    let abs: Vec<f64> = e.iter().map(|x| x.abs()).collect();
    let pos = 0.9 * (n - 1.0);
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    let lo = kth_by_rank(&abs, i);
    let hi = if frac > 0.0 { kth_by_rank(&abs, i + 1) } else { lo };
    let p90 = lo * (1.0 - frac) + hi * frac;
    let med = median_by_rank(e);
    let dev: Vec<f64> = e.iter().map(|x| (x - med).abs()).collect();
    let nmad = 1.4826 * median_by_rank(&dev);
    let rmse = (e.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let mae = abs.iter().sum::<f64>() / n;
    [p90, nmad, rmse, mae]
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use super::tiling::{tile_roi, Tile};
use super::{PipelineConfig, PipelineError, Stage};
use crate::dsm::{disparity_window_to_points, mosaic, rasterize, DsmGrid, GridSpec, PointCloud};
use crate::eval::{evaluate, format_table, aggregate_scenes, ClassMap, EvalOptions, MetricsReport};
use crate::geometry::RpcModel;
use crate::matching::{
    lr_consistency_filter, normalize_sign, remove_speckles, set_max_concurrent_adapters, DisparityMap,
    SignConvention,
};
use crate::raster::{read_geotiff, read_pfm, write_pfm, Raster};
use crate::rectification::{
    build_rectification_detailed, rectify_image, Rectification, RectificationOptions, RectifyingPair,
};

/// Neighbouring disparities closer than this belong to one speckle region.
const SPECKLE_MAX_DIFF: f32 = 1.0;

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TileFailure {
    pub tile: usize,
    pub error: String,
    pub stderr: String,
}

/// Per-tile bookkeeping recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct TileOutcome {
    pub tile: Tile,
    pub ok: bool,
    pub valid_pixels: usize,
    pub points: usize,
    pub match_seconds: f64,
    pub triangulation_seconds: f64,
    pub rasterization_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dsm: DsmGrid,
    pub report: Option<MetricsReport>,
    pub pair: RectifyingPair,
    /// Filtered disparities over the whole rectified frame, canonical sign.
    pub disparity: DisparityMap,
    pub tiles: Vec<TileOutcome>,
    pub failed_tiles: Vec<TileFailure>,
    pub timings: Vec<StageTiming>,
    pub manifest_path: PathBuf,
}

/// Read a single-band image as PFM or (Geo)TIFF, by extension.
pub fn read_image(path: &Path) -> Result<Raster<f32>, PipelineError> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let r = match ext.as_str() {
        "tif" | "tiff" => read_geotiff(path).map(|(r, _)| r),
        _ => read_pfm(path),
    };
    r.map_err(|e| PipelineError::stage(Stage::Input, e))
}

/// Class raster aligned to the GT grid; non-finite cells get id -1.
pub fn read_class_map(
    path: &Path,
    names: &BTreeMap<String, String>,
    aggregates: &[crate::eval::AggregateDef],
) -> Result<ClassMap, PipelineError> {
    let raw = read_image(path)?;
    let names = names
        .iter()
        .map(|(k, v)| {
            k.parse::<i32>()
                .map(|id| (id, v.clone()))
                .map_err(|_| PipelineError::Config(format!("class id '{k}' is not an integer")))
        })
        .collect::<Result<_, _>>()?;
    Ok(ClassMap {
        classes: raw.map(|v| if v.is_finite() { v.round() as i32 } else { -1 }),
        names,
        aggregates: aggregates.to_vec(),
    })
}

struct Inputs {
    left: Raster<f32>,
    right: Raster<f32>,
    rpc1: RpcModel,
    rpc2: RpcModel,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let rpc = |p: &Path| RpcModel::read(p).map_err(|e| PipelineError::stage(Stage::Input, format!("{}: {e}", p.display())));
    Ok(Inputs {
        left: read_image(&cfg.left_image)?,
        right: read_image(&cfg.right_image)?,
        rpc1: rpc(&cfg.left_rpc)?,
        rpc2: rpc(&cfg.right_rpc)?,
    })
}

struct TileContext<'a> {
    cfg: &'a PipelineConfig,
    pair: &'a RectifyingPair,
    rpc1: &'a RpcModel,
    rpc2: &'a RpcModel,
    rect1: &'a Raster<f32>,
    rect2: &'a Raster<f32>,
    grid: &'a GridSpec,
    range: (i32, i32),
}

struct TileResult {
    core: DisparityMap,
    dsm: Option<DsmGrid>,
    outcome: TileOutcome,
}

/// Lattice-aligned sub-grid of `global` covering the points, if any
/// fall inside it.
fn subgrid(global: &GridSpec, pc: &PointCloud) -> Option<GridSpec> {
    if pc.is_empty() {
        return None;
    }
    let (mut e0, mut e1, mut n0, mut n1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &pc.points {
        e0 = e0.min(p.easting);
        e1 = e1.max(p.easting);
        n0 = n0.min(p.northing);
        n1 = n1.max(p.northing);
    }
    let cell = global.cell;
    let c0 = ((e0 - global.origin_e) / cell).floor().max(0.0);
    let c1 = ((e1 - global.origin_e) / cell).floor().min(global.width as f64 - 1.0);
    let r0 = ((global.origin_n - n1) / cell).floor().max(0.0);
    let r1 = ((global.origin_n - n0) / cell).floor().min(global.height as f64 - 1.0);
    if c0 > c1 || r0 > r1 {
        return None;
    }
    Some(GridSpec {
        origin_e: global.origin_e + c0 * cell,
        origin_n: global.origin_n - r0 * cell,
        cell,
        width: (c1 - c0) as usize + 1,
        height: (r1 - r0) as usize + 1,
        zone: global.zone,
    })
}

fn process_tile(ctx: &TileContext<'_>, t: &Tile) -> Result<TileResult, PipelineError> {
    let (lo, hi) = ctx.range;
    let x_start = t.col0 as isize + lo.min(0) as isize;
    let x_end = (t.col0 + t.width) as isize + hi.max(0) as isize;
    let crop_w = (x_end - x_start) as usize;
    let left = ctx.rect1.window(x_start, t.row0 as isize, crop_w, t.height, f32::NAN);
    let right = ctx.rect2.window(x_start, t.row0 as isize, crop_w, t.height, f32::NAN);

    let clock = Instant::now();
    let forward = ctx.cfg.matcher.run(&left, &right, lo, hi).map_err(|e| PipelineError::from_match(t.index, e))?;
    let backward = ctx.cfg.matcher.run(&right, &left, -hi, -lo).map_err(|e| PipelineError::from_match(t.index, e))?;
    let (forward, backward) = (normalize_sign(&forward), normalize_sign(&backward));
    let mut filtered = lr_consistency_filter(&forward, &backward, ctx.cfg.lr_threshold)
        .map_err(|e| PipelineError::from_match(t.index, e))?;
    if ctx.cfg.speckle_size > 0 {
        filtered = remove_speckles(&filtered, ctx.cfg.speckle_size, SPECKLE_MAX_DIFF);
    }
    let c = t.core;
    let core = DisparityMap::new(
        filtered.values.window(
            c.col0 as isize - x_start,
            (c.row0 - t.row0) as isize,
            c.width,
            c.height,
            f32::NAN,
        ),
        SignConvention::RightEqLeftPlusD,
    );
    let match_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let cloud = disparity_window_to_points(&core, (c.col0, c.row0), ctx.pair, ctx.rpc1, ctx.rpc2, &ctx.cfg.roi);
    let triangulation_seconds = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let dsm = match subgrid(ctx.grid, &cloud) {
        Some(spec) => Some(rasterize(&cloud, &spec).map_err(|e| PipelineError::stage(Stage::Rasterization, e))?),
        None => None,
    };
    let rasterization_seconds = clock.elapsed().as_secs_f64();

    log::debug!(
        "tile {}: {} valid disparities, {} points",
        t.index,
        core.valid_count(),
        cloud.len()
    );
    Ok(TileResult {
        outcome: TileOutcome {
            tile: *t,
            ok: true,
            valid_pixels: core.valid_count(),
            points: cloud.len(),
            match_seconds,
            triangulation_seconds,
            rasterization_seconds,
        },
        core,
        dsm,
    })
}

fn write_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::stage(Stage::Output, e)
}

/// Run the full chain on one stereo pair and write the DSM, the
/// rectification, optional evaluation reports and a manifest into
/// `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let mut timed = |stage: Stage, since: Instant| {
        timings.push(StageTiming {
            stage,
            seconds: since.elapsed().as_secs_f64(),
        })
    };
    set_max_concurrent_adapters(cfg.max_adapters);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot build worker pool: {e}")))?;

    let clock = Instant::now();
    let inputs = load_inputs(cfg)?;
    timed(Stage::Input, clock);

    let clock = Instant::now();
    let opts = RectificationOptions {
        polarity_hint: cfg.polarity_hint,
        margin: cfg.margin,
        grid_n: cfg.grid_n,
        ..Default::default()
    };
    let Rectification {
        pair,
        matches,
        epipolar_residual,
    } = pool
        .install(|| build_rectification_detailed(&inputs.rpc1, &inputs.rpc2, &inputs.left, &inputs.right, &cfg.roi, &opts))
        .map_err(|e| PipelineError::stage(Stage::Rectification, e))?;
    timed(Stage::Rectification, clock);
    log::info!(
        "rectified to {}x{}, disparity range [{:.1}, {:.1}], polarity {:+}",
        pair.out_width,
        pair.out_height,
        pair.disp_min,
        pair.disp_max,
        pair.polarity.sign()
    );

    let clock = Instant::now();
    let (rect1, rect2) = pool.install(|| {
        rayon::join(
            || rectify_image(&inputs.left, &pair.h1, pair.out_width, pair.out_height),
            || rectify_image(&inputs.right, &pair.h2, pair.out_width, pair.out_height),
        )
    });
    timed(Stage::Warp, clock);

    let (lo, hi) = pair.signed_range();
    let grid = GridSpec::covering(&cfg.roi, cfg.cell_size).map_err(|e| PipelineError::stage(Stage::Rasterization, e))?;
    let tiles = tile_roi(pair.out_width, pair.out_height, cfg.tile_size, cfg.tile_overlap);
    let ctx = TileContext {
        cfg,
        pair: &pair,
        rpc1: &inputs.rpc1,
        rpc2: &inputs.rpc2,
        rect1: &rect1,
        rect2: &rect2,
        grid: &grid,
        range: (lo.floor() as i32, hi.ceil() as i32),
    };

    let clock = Instant::now();
    let results: Vec<Result<TileResult, PipelineError>> =
        pool.install(|| tiles.par_iter().map(|t| process_tile(&ctx, t)).collect());
    timed(Stage::Matching, clock);

    let mut disparity = Raster::filled(pair.out_width, pair.out_height, f32::NAN);
    let mut grids = Vec::new();
    let mut outcomes = Vec::new();
    let mut failed = Vec::new();
    for (t, r) in tiles.iter().zip(results) {
        match r {
            Ok(res) => {
                let c = t.core;
                for row in 0..c.height {
                    for col in 0..c.width {
                        disparity.set(c.col0 + col, c.row0 + row, res.core.values.get(col, row));
                    }
                }
                grids.extend(res.dsm);
                outcomes.push(res.outcome);
            }
            Err(e) if cfg.skip_failed_tiles => {
                log::warn!("skipping tile {}: {e}", t.index);
                failed.push(TileFailure {
                    tile: t.index,
                    error: e.to_string(),
                    stderr: match &e {
                        PipelineError::Adapter { stderr, .. } => stderr.clone(),
                        _ => String::new(),
                    },
                });
                outcomes.push(TileOutcome {
                    tile: *t,
                    ok: false,
                    valid_pixels: 0,
                    points: 0,
                    match_seconds: 0.0,
                    triangulation_seconds: 0.0,
                    rasterization_seconds: 0.0,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let disparity = DisparityMap::new(disparity, SignConvention::RightEqLeftPlusD);

    let clock = Instant::now();
    let dsm = if grids.is_empty() {
        log::warn!("no tile produced any point");
        DsmGrid::empty(grid)
    } else {
        mosaic(&grids)
            .and_then(|m| m.reframe(&grid))
            .map_err(|e| PipelineError::stage(Stage::Mosaic, e))?
    };
    timed(Stage::Mosaic, clock);

    let clock = Instant::now();
    let report = match &cfg.evaluation {
        None => None,
        Some(ev) => {
            let gt = DsmGrid::read(&ev.gt_dsm).map_err(|e| PipelineError::stage(Stage::Evaluation, e))?;
            let classes = match &ev.class_map {
                Some(p) => Some(read_class_map(p, &ev.class_names, &ev.aggregates)?),
                None => None,
            };
            let opts = EvalOptions {
                shift_search: ev.shift_search,
            };
            Some(
                evaluate(&dsm, &gt, classes.as_ref(), &opts, &cfg.scene, &cfg.method)
                    .map_err(|e| PipelineError::stage(Stage::Evaluation, e))?,
            )
        }
    };
    timed(Stage::Evaluation, clock);

    let clock = Instant::now();
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| write_err(format!("{}: {e}", out.display())))?;
    let mut outputs = BTreeMap::new();
    let mut record = |key: &str, name: &str| {
        outputs.insert(key.to_string(), name.to_string());
        out.join(name)
    };
    dsm.write(&record("dsm", "dsm.pfm")).map_err(write_err)?;
    std::fs::write(record("rectification", "rectification.json"), pair.to_json()).map_err(write_err)?;
    pair.h1.write(&record("h1", "h1.txt")).map_err(write_err)?;
    pair.h2.write(&record("h2", "h2.txt")).map_err(write_err)?;
    if let Some(r) = &report {
        std::fs::write(record("report", "report.jsonl"), r.to_json_lines()).map_err(write_err)?;
        let table = format_table(&aggregate_scenes(std::slice::from_ref(r)));
        std::fs::write(record("report_table", "report.txt"), table).map_err(write_err)?;
    }
    if cfg.save_intermediates {
        write_pfm(&record("rectified_left", "rectified_left.pfm"), &rect1).map_err(write_err)?;
        write_pfm(&record("rectified_right", "rectified_right.pfm"), &rect2).map_err(write_err)?;
        write_pfm(&record("disparity", "disparity.pfm"), &disparity.values).map_err(write_err)?;
    }
    timed(Stage::Output, clock);

    let manifest_path = out.join("manifest.json");
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "rectification": {
            "pair": &pair,
            "sparse_matches": matches.len(),
            "epipolar_residual": epipolar_residual,
        },
        "grid": &grid,
        "tiles": &outcomes,
        "failed_tiles": &failed,
        "timings": &timings,
        "outputs": &outputs,
        "dsm_valid_cells": dsm.valid_count(),
    });
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(write_err)?;

    let total: Duration = timings.iter().map(|t| Duration::from_secs_f64(t.seconds)).sum();
    log::info!(
        "DSM {}x{} with {} valid cells in {:.1} s ({} tiles, {} failed)",
        dsm.width(),
        dsm.height(),
        dsm.valid_count(),
        total.as_secs_f64(),
        tiles.len(),
        failed.len()
    );
    Ok(PipelineOutput {
        dsm,
        report,
        pair,
        disparity,
        tiles: outcomes,
        failed_tiles: failed,
        timings,
        manifest_path,
    })
}

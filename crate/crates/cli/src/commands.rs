use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use satstereo::dsm::{disparity_window_to_points, mosaic, rasterize, DsmGrid, GridSpec, PointCloud};
use satstereo::eval::{
    aggregate_scenes, evaluate, format_table, AggregateDef, ClassMap, ClassSet, EvalOptions,
};
use satstereo::geometry::RpcModel;
use satstereo::matching::{
    lr_consistency_filter, normalize_sign, remove_speckles, DisparityMap, ExternalSpec, MatcherSpec,
    NativeSpec, SignConvention,
};
use satstereo::pipeline::{
    classify_pair, estimate_pair_metadata, read_class_map, read_image, read_pair_metadata, run_pipeline,
    PipelineConfig, PipelineError, Stage,
};
use satstereo::raster::{read_pfm, write_pfm};
use satstereo::rectification::{
    build_rectification_detailed, rectify_image, Polarity, RectificationOptions, RectifyingPair, Roi,
};
use satstereo::synthetic::SyntheticScene;

type Result<T> = std::result::Result<T, PipelineError>;

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::stage(Stage::Input, format!("{}: {e}", path.display()))
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::stage(Stage::Output, format!("{}: {e}", path.display()))
}

fn parse_roi(s: &str) -> std::result::Result<Roi, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [lon_min, lon_max, lat_min, lat_max, alt_lo, alt_hi] = v[..] else {
        return Err("expected lon_min,lon_max,lat_min,lat_max,alt_lo,alt_hi".into());
    };
    Ok(Roi {
        lon_min,
        lon_max,
        lat_min,
        lat_max,
        alt_lo,
        alt_hi,
    })
}

/// Inputs shared by the stages that need the original pair: a config file,
/// explicit flags, or both (flags win).
#[derive(Args)]
pub struct InputArgs {
    /// Pipeline config file (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    left_image: Option<PathBuf>,
    #[arg(long)]
    right_image: Option<PathBuf>,
    #[arg(long)]
    left_rpc: Option<PathBuf>,
    #[arg(long)]
    right_rpc: Option<PathBuf>,
    /// lon_min,lon_max,lat_min,lat_max,alt_lo,alt_hi
    #[arg(long, value_parser = parse_roi, allow_hyphen_values = true)]
    roi: Option<Roi>,
    /// Override any config field, e.g. `--set matcher.p2=120`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl InputArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => {
                let missing: Vec<&str> = [
                    ("--left-image", self.left_image.is_none()),
                    ("--right-image", self.right_image.is_none()),
                    ("--left-rpc", self.left_rpc.is_none()),
                    ("--right-rpc", self.right_rpc.is_none()),
                    ("--roi", self.roi.is_none()),
                ]
                .into_iter()
                .filter_map(|(n, m)| m.then_some(n))
                .collect();
                if !missing.is_empty() {
                    return Err(config_err(format!("without --config, also pass {}", missing.join(", "))));
                }
                PipelineConfig::new(
                    self.left_image.clone().unwrap(),
                    self.right_image.clone().unwrap(),
                    self.left_rpc.clone().unwrap(),
                    self.right_rpc.clone().unwrap(),
                    self.roi.unwrap(),
                )
            }
        };
        if let Some(p) = &self.left_image {
            cfg.left_image = p.clone();
        }
        if let Some(p) = &self.right_image {
            cfg.right_image = p.clone();
        }
        if let Some(p) = &self.left_rpc {
            cfg.left_rpc = p.clone();
        }
        if let Some(p) = &self.right_rpc {
            cfg.right_rpc = p.clone();
        }
        if let Some(r) = self.roi {
            cfg.roi = r;
        }
        let cfg = cfg.with_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_rpc(path: &Path) -> Result<RpcModel> {
    RpcModel::read(path).map_err(|e| input_err(path, e))
}

fn read_pair(path: &Path) -> Result<RectifyingPair> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    RectifyingPair::from_json(&text).map_err(|e| input_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| output_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| output_err(path, e))
}

#[derive(Args)]
pub struct RectifyArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

pub fn rectify(a: RectifyArgs) -> Result<()> {
    let cfg = a.inputs.resolve()?;
    let left = read_image(&cfg.left_image)?;
    let right = read_image(&cfg.right_image)?;
    let rpc1 = read_rpc(&cfg.left_rpc)?;
    let rpc2 = read_rpc(&cfg.right_rpc)?;
    let opts = RectificationOptions {
        polarity_hint: cfg.polarity_hint,
        margin: cfg.margin,
        grid_n: cfg.grid_n,
        ..Default::default()
    };
    let r = build_rectification_detailed(&rpc1, &rpc2, &left, &right, &cfg.roi, &opts)
        .map_err(|e| PipelineError::stage(Stage::Rectification, e))?;
    let p = &r.pair;
    create_dir(&a.out)?;
    write_text(&a.out.join("rectification.json"), &p.to_json())?;
    for (name, h) in [("h1.txt", &p.h1), ("h2.txt", &p.h2)] {
        let path = a.out.join(name);
        h.write(&path).map_err(|e| output_err(&path, e))?;
    }
    for (name, img, h) in [("rectified_left.pfm", &left, &p.h1), ("rectified_right.pfm", &right, &p.h2)] {
        let path = a.out.join(name);
        write_pfm(&path, &rectify_image(img, h, p.out_width, p.out_height)).map_err(|e| output_err(&path, e))?;
    }
    let (lo, hi) = p.signed_range();
    println!(
        "{}",
        serde_json::json!({
            "width": p.out_width,
            "height": p.out_height,
            "disp_min": lo,
            "disp_max": hi,
            "polarity": p.polarity,
            "sparse_matches": r.matches.len(),
            "epipolar_residual": r.epipolar_residual,
        })
    );
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Convention {
    /// x_right = x_left + d
    Plus,
    /// x_right = x_left - d
    Minus,
}

#[derive(Args)]
pub struct MatchArgs {
    /// Rectified left image (PFM).
    #[arg(long)]
    left: PathBuf,
    /// Rectified right image (PFM).
    #[arg(long)]
    right: PathBuf,
    /// Lowest disparity, x_right = x_left + d.
    #[arg(long, allow_hyphen_values = true, requires = "dmax")]
    dmin: Option<i32>,
    #[arg(long, allow_hyphen_values = true, requires = "dmin")]
    dmax: Option<i32>,
    /// Take the disparity range from a rectification.json instead.
    #[arg(long, conflicts_with = "dmin")]
    rectification: Option<PathBuf>,
    /// Matcher table in TOML (`kind = "native"` or `kind = "external"`).
    #[arg(long)]
    matcher: Option<PathBuf>,
    /// External matcher command; shorthand for an external matcher table.
    #[arg(long, conflicts_with = "matcher")]
    external: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "plus")]
    convention: Convention,
    #[arg(long)]
    census_window: Option<usize>,
    #[arg(long)]
    p1: Option<u16>,
    #[arg(long)]
    p2: Option<u16>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    uniqueness: Option<f64>,
    /// Left-right tolerance in pixels.
    #[arg(long, default_value_t = 2.0)]
    lr_threshold: f64,
    /// Skip the left-right check (no reverse matching).
    #[arg(long)]
    no_lr: bool,
    /// Remove disparity regions smaller than this many pixels.
    #[arg(long, default_value_t = 0)]
    speckle_size: usize,
    /// Output disparity map (PFM, x_right = x_left + d, NaN invalid).
    #[arg(short, long)]
    out: PathBuf,
}

fn matcher_from(a: &MatchArgs) -> Result<MatcherSpec> {
    if let Some(path) = &a.matcher {
        let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
        return MatcherSpec::from_toml(&text).map_err(config_err);
    }
    if let Some(cmd) = &a.external {
        let conv = match a.convention {
            Convention::Plus => SignConvention::RightEqLeftPlusD,
            Convention::Minus => SignConvention::RightEqLeftMinusD,
        };
        return Ok(MatcherSpec::External(ExternalSpec::new(cmd, conv)));
    }
    let d = NativeSpec::default();
    let spec = NativeSpec {
        census_window: a.census_window.unwrap_or(d.census_window),
        p1: a.p1.unwrap_or(d.p1),
        p2: a.p2.unwrap_or(d.p2),
        paths: a.paths.unwrap_or(d.paths),
        uniqueness_ratio: a.uniqueness.unwrap_or(d.uniqueness_ratio),
    };
    spec.validate().map_err(config_err)?;
    Ok(MatcherSpec::Native(spec))
}

pub fn match_pair(a: MatchArgs) -> Result<()> {
    let matcher = matcher_from(&a)?;
    let (dmin, dmax) = match (&a.rectification, a.dmin, a.dmax) {
        (Some(path), _, _) => {
            let (lo, hi) = read_pair(path)?.signed_range();
            (lo.floor() as i32, hi.ceil() as i32)
        }
        (None, Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(config_err("pass --dmin/--dmax or --rectification")),
    };
    let left = read_pfm(&a.left).map_err(|e| input_err(&a.left, e))?;
    let right = read_pfm(&a.right).map_err(|e| input_err(&a.right, e))?;
    let fwd = matcher.run(&left, &right, dmin, dmax).map_err(|e| PipelineError::from_match(0, e))?;
    let mut d = if a.no_lr {
        normalize_sign(&fwd)
    } else {
        let bwd = matcher.run(&right, &left, -dmax, -dmin).map_err(|e| PipelineError::from_match(0, e))?;
        lr_consistency_filter(&fwd, &bwd, a.lr_threshold).map_err(|e| PipelineError::from_match(0, e))?
    };
    if a.speckle_size > 0 {
        d = remove_speckles(&d, a.speckle_size, 1.0);
    }
    write_pfm(&a.out, &d.values).map_err(|e| output_err(&a.out, e))?;
    eprintln!("{} of {} pixels valid", d.valid_count(), d.width() * d.height());
    Ok(())
}

#[derive(Args)]
pub struct TriangulateArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Disparity map in the rectified frame (PFM, x_right = x_left + d).
    #[arg(long)]
    disparity: PathBuf,
    /// rectification.json written by `rectify` or `run`.
    #[arg(long)]
    rectification: PathBuf,
    /// Rectified-frame position of the map's first pixel, `col,row`.
    #[arg(long, default_value = "0,0")]
    origin: String,
    /// Output point cloud (text).
    #[arg(short, long)]
    out: PathBuf,
}

pub fn triangulate(a: TriangulateArgs) -> Result<()> {
    let cfg = a.inputs.resolve()?;
    let (c, r) = a
        .origin
        .split_once(',')
        .and_then(|(c, r)| Some((c.trim().parse().ok()?, r.trim().parse().ok()?)))
        .ok_or_else(|| config_err(format!("--origin '{}' is not col,row", a.origin)))?;
    let pair = read_pair(&a.rectification)?;
    let d = read_pfm(&a.disparity).map_err(|e| input_err(&a.disparity, e))?;
    let d = DisparityMap::new(d, SignConvention::RightEqLeftPlusD);
    let rpc1 = read_rpc(&cfg.left_rpc)?;
    let rpc2 = read_rpc(&cfg.right_rpc)?;
    let pc = disparity_window_to_points(&d, (c, r), &pair, &rpc1, &rpc2, &cfg.roi);
    write_text(&a.out, &pc.to_text())?;
    eprintln!("{} points", pc.len());
    Ok(())
}

#[derive(Args)]
pub struct DsmArgs {
    /// Point clouds written by `triangulate`.
    #[arg(long, required = true, num_args = 1..)]
    points: Vec<PathBuf>,
    /// Grid extent: lon_min,lon_max,lat_min,lat_max,alt_lo,alt_hi.
    #[arg(long, value_parser = parse_roi, allow_hyphen_values = true, required_unless_present = "config")]
    roi: Option<Roi>,
    /// Take the ROI and cell size from a pipeline config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Cell size in meters.
    #[arg(long)]
    cell: Option<f64>,
    /// Output DSM (PFM plus .geo sidecar).
    #[arg(short, long)]
    out: PathBuf,
}

pub fn dsm(a: DsmArgs) -> Result<()> {
    let (roi, cell) = match (&a.config, a.roi) {
        (_, Some(roi)) => (roi, a.cell.unwrap_or(satstereo::dsm::DEFAULT_CELL)),
        (Some(path), None) => {
            let cfg = PipelineConfig::from_file(path)?;
            (cfg.roi, a.cell.unwrap_or(cfg.cell_size))
        }
        (None, None) => return Err(config_err("pass --roi or --config")),
    };
    let grid = GridSpec::covering(&roi, cell).map_err(config_err)?;
    let mut tiles = Vec::new();
    for path in &a.points {
        let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
        let pc = PointCloud::from_text(&text).map_err(|e| input_err(path, e))?;
        tiles.push(rasterize(&pc, &grid).map_err(|e| PipelineError::stage(Stage::Rasterization, e))?);
    }
    let dsm = mosaic(&tiles)
        .and_then(|m| m.reframe(&grid))
        .map_err(|e| PipelineError::stage(Stage::Mosaic, e))?;
    dsm.write(&a.out).map_err(|e| output_err(&a.out, e))?;
    eprintln!("{}x{} cells, {} valid", dsm.width(), dsm.height(), dsm.valid_count());
    Ok(())
}

fn parse_class_name(s: &str) -> std::result::Result<(i32, String), String> {
    let (id, name) = s.split_once('=').ok_or("expected ID=NAME")?;
    Ok((id.trim().parse().map_err(|e| format!("{id}: {e}"))?, name.to_string()))
}

/// `NAME=2,6` selects classes 2 and 6; `NAME=!5,9` all but 5 and 9.
fn parse_aggregate(s: &str) -> std::result::Result<AggregateDef, String> {
    let (name, ids) = s.split_once('=').ok_or("expected NAME=IDS or NAME=!IDS")?;
    let (negate, ids) = match ids.strip_prefix('!') {
        Some(rest) => (true, rest),
        None => (false, ids),
    };
    let ids: Vec<i32> = ids
        .split(',')
        .map(|x| x.trim().parse::<i32>().map_err(|e| format!("{x}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    Ok(AggregateDef {
        name: name.to_string(),
        classes: if negate { ClassSet::AllExcept(ids) } else { ClassSet::Only(ids) },
    })
}

#[derive(Args)]
pub struct EvalArgs {
    /// DSM to evaluate (PFM + .geo, or GeoTIFF).
    #[arg(long)]
    dsm: PathBuf,
    /// Ground-truth DSM (PFM + .geo, or GeoTIFF).
    #[arg(long)]
    gt: PathBuf,
    /// Class raster aligned with the ground truth.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Class display name, `ID=NAME`; repeatable.
    #[arg(long = "class-name", value_parser = parse_class_name)]
    class_names: Vec<(i32, String)>,
    /// Aggregate scope, `NAME=2,6` or `NAME=!5,9`; repeatable.
    #[arg(long = "aggregate", value_parser = parse_aggregate)]
    aggregates: Vec<AggregateDef>,
    /// Planimetric shift search radius in cells (0 = off).
    #[arg(long, default_value_t = 0)]
    shift_search: usize,
    #[arg(long, default_value = "scene")]
    scene: String,
    #[arg(long, default_value = "dsm")]
    method: String,
    /// Write the per-scope report as JSON lines.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let read = |p: &Path| DsmGrid::read(p).map_err(|e| input_err(p, e));
    let dsm = read(&a.dsm)?;
    let gt = read(&a.gt)?;
    let classes: Option<ClassMap> = match &a.classes {
        Some(path) => {
            let names: BTreeMap<String, String> =
                a.class_names.iter().map(|(id, n)| (id.to_string(), n.clone())).collect();
            Some(read_class_map(path, &names, &a.aggregates)?)
        }
        None => None,
    };
    let opts = EvalOptions {
        shift_search: a.shift_search,
    };
    let report = evaluate(&dsm, &gt, classes.as_ref(), &opts, &a.scene, &a.method)
        .map_err(|e| PipelineError::stage(Stage::Evaluation, e))?;
    if let Some(out) = &a.out {
        write_text(out, &report.to_json_lines())?;
    }
    println!("vertical offset {:.3} m, shift {:?} cells", report.offset, report.shift);
    print!("{}", format_table(&aggregate_scenes(std::slice::from_ref(&report))));
    Ok(())
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    tile_overlap: Option<usize>,
    /// Tile worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Maximum external matcher processes at once.
    #[arg(long)]
    max_adapters: Option<usize>,
    /// Leave failed tiles empty instead of aborting.
    #[arg(long)]
    skip_failed_tiles: bool,
    /// Also write rectified images and the disparity map.
    #[arg(long)]
    save_intermediates: bool,
    /// Polarity hint, +1 or -1.
    #[arg(long, allow_hyphen_values = true)]
    polarity: Option<i8>,
}

pub fn run(a: RunArgs) -> Result<()> {
    let mut cfg = a.inputs.resolve()?;
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    if let Some(v) = a.tile_size {
        cfg.tile_size = v;
    }
    if let Some(v) = a.tile_overlap {
        cfg.tile_overlap = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = a.max_adapters {
        cfg.max_adapters = v;
    }
    if let Some(p) = a.polarity {
        cfg.polarity_hint = Polarity::try_from(p).map_err(config_err)?;
    }
    cfg.skip_failed_tiles |= a.skip_failed_tiles;
    cfg.save_intermediates |= a.save_intermediates;
    let out = run_pipeline(&cfg)?;
    println!(
        "DSM {}x{} with {} valid cells written to {}",
        out.dsm.width(),
        out.dsm.height(),
        out.dsm.valid_count(),
        cfg.output_dir.join("dsm.pfm").display()
    );
    if !out.failed_tiles.is_empty() {
        println!("{} tile(s) failed and were left empty", out.failed_tiles.len());
    }
    if let Some(r) = &out.report {
        print!("{}", format_table(&aggregate_scenes(std::slice::from_ref(r))));
    }
    Ok(())
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// JSON array of pair records.
    #[arg(long, required_unless_present = "estimate")]
    metadata: Option<PathBuf>,
    /// Estimate the angles of one pair from its RPC models instead.
    #[arg(long)]
    estimate: bool,
    #[command(flatten)]
    inputs: InputArgs,
    /// Print JSON records instead of a table.
    #[arg(long)]
    json: bool,
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    let records = if a.estimate {
        let cfg = a.inputs.resolve()?;
        let rpc1 = read_rpc(&cfg.left_rpc)?;
        let rpc2 = read_rpc(&cfg.right_rpc)?;
        let id = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![estimate_pair_metadata(&id(&cfg.left_image), &id(&cfg.right_image), &rpc1, &rpc2, &cfg.roi)
            .map_err(|e| PipelineError::stage(Stage::Input, e))?]
    } else {
        read_pair_metadata(a.metadata.as_deref().expect("required by clap"))?
    };
    for m in &records {
        let class = classify_pair(m)?;
        if a.json {
            let mut v = serde_json::to_value(m).expect("metadata serializes");
            v["class"] = serde_json::to_value(class).expect("class serializes");
            println!("{v}");
        } else {
            let f = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            println!(
                "{}\t{}\t{}\tbaseline {}\tincidence {}/{}{}",
                m.id_1,
                m.id_2,
                class,
                f(m.baseline_angle),
                f(m.incidence_1),
                f(m.incidence_2),
                if m.approximate { "\t(approximate)" } else { "" }
            );
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for images, RPCs, ground truth and config.toml.
    #[arg(short, long)]
    out: PathBuf,
    /// Random geometry from this seed instead of the standard scene.
    #[arg(long)]
    seed: Option<u64>,
    /// Image size for random scenes.
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// Exchange the two views.
    #[arg(long)]
    swapped: bool,
    /// Ground-truth cell size in meters.
    #[arg(long, default_value_t = 0.5)]
    cell: f64,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut scene = match a.seed {
        Some(s) => SyntheticScene::random(s, a.size),
        None => SyntheticScene::standard(),
    };
    if a.swapped {
        scene = scene.swapped();
    }
    let files = scene
        .write_inputs(&a.out, a.cell)
        .map_err(|e| PipelineError::stage(Stage::Output, e))?;
    let rel = |p: &Path| PathBuf::from(p.file_name().expect("file path"));
    let mut cfg = PipelineConfig::new(
        rel(&files.left_image),
        rel(&files.right_image),
        rel(&files.left_rpc),
        rel(&files.right_rpc),
        scene.roi(),
    );
    cfg.cell_size = a.cell;
    cfg.scene = "synthetic".into();
    cfg.evaluation = Some(satstereo::pipeline::EvaluationConfig {
        gt_dsm: rel(&files.gt_dsm),
        class_map: None,
        class_names: BTreeMap::new(),
        aggregates: vec![],
        shift_search: 0,
    });
    let path = a.out.join("config.toml");
    write_text(&path, &cfg.to_toml())?;
    println!("{}", path.display());
    Ok(())
}

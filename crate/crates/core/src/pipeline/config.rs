use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dsm::DEFAULT_CELL;
use crate::eval::AggregateDef;
use crate::matching::MatcherSpec;
use crate::rectification::{Polarity, Roi, DEFAULT_GRID_N, DEFAULT_MARGIN};

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_lr() -> f64 {
    2.0
}
fn default_polarity() -> Polarity {
    Polarity::Positive
}
fn default_grid_n() -> usize {
    DEFAULT_GRID_N
}
fn default_tile() -> usize {
    1024
}
fn default_overlap() -> usize {
    128
}
fn default_cell() -> f64 {
    DEFAULT_CELL
}
fn default_adapters() -> usize {
    2
}
fn default_scene() -> String {
    "scene".into()
}
fn default_method() -> String {
    "native-sgm".into()
}
fn default_output() -> PathBuf {
    PathBuf::from("output")
}

/// Ground truth and class rasters for the optional evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub gt_dsm: PathBuf,
    #[serde(default)]
    pub class_map: Option<PathBuf>,
    /// Class id (as a string key) to display name.
    #[serde(default)]
    pub class_names: BTreeMap<String, String>,
    #[serde(default)]
    pub aggregates: Vec<AggregateDef>,
    /// Planimetric shift search radius in cells; 0 disables it.
    #[serde(default)]
    pub shift_search: usize,
}

/// Everything a pipeline run needs. All fields except the inputs and the
/// ROI have defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub left_image: PathBuf,
    pub right_image: PathBuf,
    pub left_rpc: PathBuf,
    pub right_rpc: PathBuf,
    pub roi: Roi,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_scene")]
    pub scene: String,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub matcher: MatcherSpec,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_polarity")]
    pub polarity_hint: Polarity,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_lr")]
    pub lr_threshold: f64,
    /// Minimum size of a disparity region to keep; 0 disables speckle
    /// removal.
    #[serde(default)]
    pub speckle_size: usize,
    #[serde(default = "default_tile")]
    pub tile_size: usize,
    #[serde(default = "default_overlap")]
    pub tile_overlap: usize,
    #[serde(default = "default_cell")]
    pub cell_size: f64,
    /// Tile worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_adapters")]
    pub max_adapters: usize,
    #[serde(default)]
    pub skip_failed_tiles: bool,
    #[serde(default)]
    pub save_intermediates: bool,
    #[serde(default)]
    pub evaluation: Option<EvaluationConfig>,
}

impl PipelineConfig {
    /// Config with default settings for the given inputs.
    pub fn new(
        left_image: impl Into<PathBuf>,
        right_image: impl Into<PathBuf>,
        left_rpc: impl Into<PathBuf>,
        right_rpc: impl Into<PathBuf>,
        roi: Roi,
    ) -> Self {
        Self {
            left_image: left_image.into(),
            right_image: right_image.into(),
            left_rpc: left_rpc.into(),
            right_rpc: right_rpc.into(),
            roi,
            output_dir: default_output(),
            scene: default_scene(),
            method: default_method(),
            matcher: MatcherSpec::default(),
            margin: default_margin(),
            polarity_hint: default_polarity(),
            grid_n: default_grid_n(),
            lr_threshold: default_lr(),
            speckle_size: 0,
            tile_size: default_tile(),
            tile_overlap: default_overlap(),
            cell_size: default_cell(),
            workers: 0,
            max_adapters: default_adapters(),
            skip_failed_tiles: false,
            save_intermediates: false,
            evaluation: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Load a TOML config; relative paths are taken relative to the file.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `key=value` overrides; keys may be dotted (`matcher.p2`) and
    /// values are TOML literals, with bare words taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, PipelineError> {
        let mut table = toml::Table::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("override '{o}' is not key=value")))?;
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts.pop().expect("split yields one part");
            let mut node = &mut table;
            for p in parts {
                node = node
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| PipelineError::Config(format!("'{p}' in '{key}' is not a table")))?;
            }
            node.insert(last.to_string(), value);
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.left_image);
        fix(&mut self.right_image);
        fix(&mut self.left_rpc);
        fix(&mut self.right_rpc);
        fix(&mut self.output_dir);
        if let Some(e) = &mut self.evaluation {
            fix(&mut e.gt_dsm);
            if let Some(c) = &mut e.class_map {
                fix(c);
            }
        }
        if let MatcherSpec::External(x) = &mut self.matcher {
            // bare command names are looked up on PATH
            if x.command.components().count() > 1 {
                fix(&mut x.command);
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.roi.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.matcher.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.tile_size == 0 || self.tile_overlap >= self.tile_size {
            return bad(format!(
                "tile_overlap ({}) must be smaller than tile_size ({})",
                self.tile_overlap, self.tile_size
            ));
        }
        if !(self.cell_size > 0.0) {
            return bad(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if !(self.lr_threshold >= 0.0) {
            return bad(format!("lr_threshold must be non-negative, got {}", self.lr_threshold));
        }
        if self.grid_n < 3 {
            return bad(format!("grid_n must be at least 3, got {}", self.grid_n));
        }
        if let Some(e) = &self.evaluation {
            for k in e.class_names.keys() {
                if k.parse::<i32>().is_err() {
                    return bad(format!("class id '{k}' is not an integer"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
left_image = "a.pfm"
right_image = "b.pfm"
left_rpc = "a.rpc"
right_rpc = "b.rpc"

[roi]
lon_min = -81.71
lon_max = -81.69
lat_min = 30.29
lat_max = 30.31
alt_lo = 0.0
alt_hi = 40.0
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.margin, 50.0);
        assert_eq!(cfg.lr_threshold, 2.0);
        assert_eq!(cfg.polarity_hint, Polarity::Positive);
        assert_eq!((cfg.tile_size, cfg.tile_overlap), (1024, 128));
        assert_eq!(cfg.cell_size, 0.5);
        assert_eq!(cfg.max_adapters, 2);
        assert!(!cfg.skip_failed_tiles);
        assert_eq!(cfg.matcher, MatcherSpec::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        cfg.polarity_hint = Polarity::Negative;
        cfg.evaluation = Some(EvaluationConfig {
            gt_dsm: "gt.pfm".into(),
            class_map: None,
            class_names: BTreeMap::from([("2".into(), "Ground".into())]),
            aggregates: vec![],
            shift_search: 0,
        });
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(cfg.to_toml().contains("polarity_hint = -1"));
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        let o = cfg
            .with_overrides(&["margin=20", "matcher.p2=120", "output_dir=runs/a", "polarity_hint=-1"])
            .unwrap();
        assert_eq!(o.margin, 20.0);
        assert_eq!(o.output_dir, PathBuf::from("runs/a"));
        assert_eq!(o.polarity_hint, Polarity::Negative);
        let MatcherSpec::Native(n) = &o.matcher else { panic!() };
        assert_eq!(n.p2, 120);
        assert!(cfg.with_overrides(&["nonsense=1"]).is_err());
        assert!(cfg.with_overrides(&["margin"]).is_err());
        assert!(cfg.with_overrides(&["tile_size=\"big\""]).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        cfg.tile_overlap = 1024;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        assert!(PipelineConfig::from_toml(&format!("bogus = 1\n{MINIMAL}")).is_err());
        assert!(PipelineConfig::from_toml(&format!("polarity_hint = 2\n{MINIMAL}")).is_err());
    }
}

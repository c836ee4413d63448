//! From disparities to a georeferenced digital surface model: per-pixel
//! triangulation, median gridding onto a north-up UTM lattice, and
//! mosaicking of tiles.

mod grid;
mod points;

pub use grid::{mosaic, rasterize};
pub use points::{disparity_to_points, disparity_window_to_points, MAX_TRIANGULATION_RESIDUAL};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{geodetic_to_utm_in_zone, GeoPoint, GeometryError, UtmZone};
use crate::raster::{read_geotiff, read_pfm, write_pfm, Raster, RasterError};
use crate::rectification::Roi;

/// Elevation written for empty cells.
pub const NODATA: f64 = -9999.0;
pub const DEFAULT_CELL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DsmError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no tiles to mosaic")]
    NoTiles,
    #[error("malformed georeferencing sidecar {path}: {reason}")]
    Sidecar { path: String, reason: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A triangulated point in UTM coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub easting: f64,
    pub northing: f64,
    pub alt: f64,
    /// Distance between the two viewing rays at the solution, meters.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub zone: Option<UtmZone>,
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whitespace-separated text, one `easting northing alt residual`
    /// record per line after a `# zone` header.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(z) = self.zone {
            writeln!(s, "# zone {z}").unwrap();
        }
        for p in &self.points {
            writeln!(s, "{:.4} {:.4} {:.4} {:.4}", p.easting, p.northing, p.alt, p.residual).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut cloud = PointCloud::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(z) = rest.trim().strip_prefix("zone") {
                    cloud.zone = Some(z.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            if v.len() != 4 {
                return Err(format!("line {}: expected 4 values, got {}", i + 1, v.len()));
            }
            cloud.points.push(Point {
                easting: v[0],
                northing: v[1],
                alt: v[2],
                residual: v[3],
            });
        }
        Ok(cloud)
    }
}

/// North-up lattice; `origin_e, origin_n` is the upper-left corner of the
/// upper-left cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_e: f64,
    pub origin_n: f64,
    pub cell: f64,
    pub width: usize,
    pub height: usize,
    pub zone: UtmZone,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), DsmError> {
        if !(self.cell > 0.0 && self.cell.is_finite()) {
            return Err(DsmError::InvalidGrid(format!("cell size {} is not positive", self.cell)));
        }
        if !(self.origin_e.is_finite() && self.origin_n.is_finite()) {
            return Err(DsmError::InvalidGrid("non-finite origin".into()));
        }
        Ok(())
    }

    /// Lattice-aligned grid covering the ROI footprint, in the UTM zone of
    /// the ROI centre.
    pub fn covering(roi: &Roi, cell: f64) -> Result<Self, DsmError> {
        let c = roi.center(0.0);
        let zone = UtmZone::for_point(c.lon, c.lat);
        let (mut e0, mut e1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut n0, mut n1) = (f64::INFINITY, f64::NEG_INFINITY);
        for lon in [roi.lon_min, roi.lon_max] {
            for lat in [roi.lat_min, roi.lat_max] {
                let u = geodetic_to_utm_in_zone(&GeoPoint::new(lon, lat, 0.0), zone)?;
                e0 = e0.min(u.easting);
                e1 = e1.max(u.easting);
                n0 = n0.min(u.northing);
                n1 = n1.max(u.northing);
            }
        }
        Self::bounding(e0, e1, n0, n1, cell, zone)
    }

    /// Smallest lattice-aligned grid containing `[e0, e1] × [n0, n1]`.
    pub fn bounding(e0: f64, e1: f64, n0: f64, n1: f64, cell: f64, zone: UtmZone) -> Result<Self, DsmError> {
        if !(cell > 0.0) {
            return Err(DsmError::InvalidGrid(format!("cell size {cell} is not positive")));
        }
        let origin_e = (e0 / cell).floor() * cell;
        let origin_n = (n1 / cell).ceil() * cell;
        let width = (((e1 - origin_e) / cell).floor() as usize + 1).max(1);
        let height = (((origin_n - n0) / cell).floor() as usize + 1).max(1);
        Ok(Self {
            origin_e,
            origin_n,
            cell,
            width,
            height,
            zone,
        })
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_e + (col as f64 + 0.5) * self.cell,
            self.origin_n - (row as f64 + 0.5) * self.cell,
        )
    }

    /// Cell containing `(e, n)`; boundaries belong to the cell they open.
    pub fn locate(&self, e: f64, n: f64) -> Option<(usize, usize)> {
        let c = ((e - self.origin_e) / self.cell).floor();
        let r = ((self.origin_n - n) / self.cell).floor();
        if c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64 {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }

    /// Integer cell offset of `other`'s origin in this lattice, if both
    /// grids share cell size, zone and lattice.
    pub fn lattice_offset(&self, other: &GridSpec) -> Result<(i64, i64), DsmError> {
        if self.zone != other.zone {
            return Err(DsmError::GridMismatch(format!("zones {} and {}", self.zone, other.zone)));
        }
        if (self.cell - other.cell).abs() > 1e-9 * self.cell {
            return Err(DsmError::GridMismatch(format!("cell sizes {} and {}", self.cell, other.cell)));
        }
        let dc = (other.origin_e - self.origin_e) / self.cell;
        let dr = (self.origin_n - other.origin_n) / self.cell;
        if (dc - dc.round()).abs() > 1e-6 || (dr - dr.round()).abs() > 1e-6 {
            return Err(DsmError::GridMismatch("origins are not on a common lattice".into()));
        }
        Ok((dc.round() as i64, dr.round() as i64))
    }
}

/// Elevation raster on a [`GridSpec`]; empty cells hold [`NODATA`].
#[derive(Debug, Clone, PartialEq)]
pub struct DsmGrid {
    pub spec: GridSpec,
    pub values: Raster<f64>,
}

#[inline]
pub fn is_data(v: f64) -> bool {
    v != NODATA && v.is_finite()
}

impl DsmGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            values: Raster::filled(spec.width, spec.height, NODATA),
            spec,
        }
    }

    pub fn from_values(spec: GridSpec, values: Raster<f64>) -> Result<Self, DsmError> {
        if values.dims() != (spec.width, spec.height) {
            return Err(DsmError::GridMismatch(format!(
                "raster {:?} does not match grid {}x{}",
                values.dims(),
                spec.width,
                spec.height
            )));
        }
        Ok(Self {
            spec,
            values: values.map(|v| if is_data(v) { v } else { NODATA }),
        })
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.values.get(col, row);
        is_data(v).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.values.data().iter().filter(|&&v| is_data(v)).count()
    }

    /// Copy onto another grid of the same lattice; cells outside this grid
    /// become nodata.
    pub fn reframe(&self, spec: &GridSpec) -> Result<DsmGrid, DsmError> {
        let (dc, dr) = self.spec.lattice_offset(spec)?;
        let values = Raster::from_fn(spec.width, spec.height, |c, r| {
            let sc = c as i64 + dc;
            let sr = r as i64 + dr;
            if sc < 0 || sr < 0 || sc >= self.spec.width as i64 || sr >= self.spec.height as i64 {
                NODATA
            } else {
                self.values.get(sc as usize, sr as usize)
            }
        });
        Ok(DsmGrid { spec: *spec, values })
    }

    /// Elevations as `f32` with NaN for nodata.
    pub fn to_f32(&self) -> Raster<f32> {
        self.values.map(|v| if is_data(v) { v as f32 } else { f32::NAN })
    }

    /// Write the raster as PFM and its georeferencing to `<path>.geo`.
    pub fn write(&self, path: &Path) -> Result<(), DsmError> {
        write_pfm(path, &self.values.map(|v| v as f32))?;
        let sidecar = sidecar_path(path);
        let text = format!(
            "{}\n{}\n{}\n{}\n{}\n",
            self.spec.origin_e, self.spec.origin_n, self.spec.cell, self.spec.zone, NODATA
        );
        std::fs::write(&sidecar, text).map_err(|source| RasterError::Io {
            path: sidecar.display().to_string(),
            source,
        })?;
        Ok(())
    }

    /// Read a PFM DSM with its `.geo` sidecar, or a GeoTIFF (by extension).
    pub fn read(path: &Path) -> Result<DsmGrid, DsmError> {
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if ext == "tif" || ext == "tiff" {
            return Self::read_geotiff(path);
        }
        let raster = read_pfm(path)?;
        let sidecar = sidecar_path(path);
        let bad = |reason: String| DsmError::Sidecar {
            path: sidecar.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(&sidecar).map_err(|e| bad(e.to_string()))?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 values, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, DsmError> {
            fields[i].parse::<f64>().map_err(|e| bad(format!("'{}': {e}", fields[i])))
        };
        let zone: UtmZone = fields[3].parse().map_err(|e: GeometryError| bad(e.to_string()))?;
        let nodata = num(4)?;
        let spec = GridSpec {
            origin_e: num(0)?,
            origin_n: num(1)?,
            cell: num(2)?,
            width: raster.width(),
            height: raster.height(),
            zone,
        };
        spec.validate()?;
        let values = raster.map(|v| {
            let v = v as f64;
            if v == nodata || !v.is_finite() {
                NODATA
            } else {
                v
            }
        });
        Ok(DsmGrid { spec, values })
    }

    fn read_geotiff(path: &Path) -> Result<DsmGrid, DsmError> {
        let (raster, info) = read_geotiff(path)?;
        let info = info.ok_or_else(|| DsmError::InvalidGrid("GeoTIFF has no georeferencing tags".into()))?;
        if (info.pixel_size_x - info.pixel_size_y.abs()).abs() > 1e-9 * info.pixel_size_x {
            return Err(DsmError::InvalidGrid("non-square GeoTIFF pixels".into()));
        }
        let zone = match info.epsg {
            Some(code @ 32601..=32660) => UtmZone {
                number: (code - 32600) as u8,
                north: true,
            },
            Some(code @ 32701..=32760) => UtmZone {
                number: (code - 32700) as u8,
                north: false,
            },
            other => {
                return Err(DsmError::InvalidGrid(format!(
                    "GeoTIFF CRS {other:?} is not a WGS84 UTM zone"
                )))
            }
        };
        let spec = GridSpec {
            origin_e: info.origin_x,
            origin_n: info.origin_y,
            cell: info.pixel_size_x,
            width: raster.width(),
            height: raster.height(),
            zone,
        };
        spec.validate()?;
        let values = raster.map(|v| {
            let v = v as f64;
            if Some(v) == info.nodata || !v.is_finite() {
                NODATA
            } else {
                v
            }
        });
        Ok(DsmGrid { spec, values })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".geo");
    PathBuf::from(s)
}

//! Synthetic stereo scenes with exact ground truth: flat terrain with
//! axis-aligned boxes, seen by two affine pushbroom-like cameras exposed as
//! RPC models, rendered by analytic ray casting.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dsm::{DsmError, DsmGrid, GridSpec};
use crate::geometry::{
    utm_to_geodetic, GeoPoint, GeometryError, PixelCoord, RpcModel, RpcNormalization, UtmCoord, WGS84_A,
};
use crate::raster::{write_pfm, Raster, RasterError};
use crate::rectification::Roi;

const METERS_PER_DEGREE: f64 = WGS84_A * std::f64::consts::PI / 180.0;

/// Tangent-plane approximation around a reference lon/lat, matching the
/// equirectangular metric used by triangulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub lon0: f64,
    pub lat0: f64,
}

impl LocalFrame {
    pub fn to_local(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            (lon - self.lon0) * self.lat0.to_radians().cos() * METERS_PER_DEGREE,
            (lat - self.lat0) * METERS_PER_DEGREE,
        )
    }

    pub fn to_geo(&self, x: f64, y: f64, alt: f64) -> GeoPoint {
        GeoPoint::new(
            self.lon0 + x / (self.lat0.to_radians().cos() * METERS_PER_DEGREE),
            self.lat0 + y / METERS_PER_DEGREE,
            alt,
        )
    }
}

/// Parallel-projection camera. A point at height `z` above the reference
/// plane images like the ground point displaced by `z · tan(incidence)`
/// away from the sensor azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineCamera {
    pub incidence_deg: f64,
    /// Direction from the scene to the sensor, clockwise from north.
    pub azimuth_deg: f64,
    /// Ground sample distance, meters per pixel.
    pub gsd: f64,
    /// Rotation of the image axes relative to east/south.
    pub rotation_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl AffineCamera {
    /// Horizontal ray slope: ground displacement per meter of height.
    fn lean(&self) -> (f64, f64) {
        let t = self.incidence_deg.to_radians().tan();
        let a = self.azimuth_deg.to_radians();
        (t * a.sin(), t * a.cos())
    }

    /// Unit vector from the scene towards the sensor (east, north, up).
    pub fn view_vector(&self) -> [f64; 3] {
        let i = self.incidence_deg.to_radians();
        let a = self.azimuth_deg.to_radians();
        [i.sin() * a.sin(), i.sin() * a.cos(), i.cos()]
    }

    /// Image position of local point `(x, y)` at height `z` over the plane.
    pub fn project(&self, x: f64, y: f64, z: f64) -> PixelCoord {
        let (lx, ly) = self.lean();
        let (gx, gy) = (x - z * lx, y - z * ly);
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        PixelCoord::new(
            0.5 * self.width as f64 + (c * gx + s * gy) / self.gsd,
            0.5 * self.height as f64 + (s * gx - c * gy) / self.gsd,
        )
    }

    /// Where the viewing ray of pixel `(col, row)` meets the plane.
    pub fn ground_intercept(&self, col: f64, row: f64) -> (f64, f64) {
        let u = (col - 0.5 * self.width as f64) * self.gsd;
        let v = (row - 0.5 * self.height as f64) * self.gsd;
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (c * u + s * v, s * u - c * v)
    }

    /// Angle between two cameras' viewing directions, degrees.
    pub fn baseline_deg(&self, other: &AffineCamera) -> f64 {
        let a = self.view_vector();
        let b = other.view_vector();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        dot.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

/// Axis-aligned box standing on the ground, local meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub height: f64,
}

impl SceneBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Distance from `(x, y)` to the nearest footprint edge.
    pub fn edge_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(x - self.x1);
        let dy = (self.y0 - y).max(y - self.y1);
        if dx <= 0.0 && dy <= 0.0 {
            (-dx).min(-dy)
        } else {
            dx.max(0.0).hypot(dy.max(0.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub frame: LocalFrame,
    /// Ellipsoidal altitude of the flat terrain, meters.
    pub ground_alt: f64,
    pub boxes: Vec<SceneBox>,
    pub cameras: [AffineCamera; 2],
    /// Half side of the square region of interest, meters.
    pub roi_half: f64,
    pub texture_seed: u64,
}

/// Files written by [`SyntheticScene::write_inputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub left_image: PathBuf,
    pub right_image: PathBuf,
    pub left_rpc: PathBuf,
    pub right_rpc: PathBuf,
    pub gt_dsm: PathBuf,
}

fn splitmix(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(i as u64 ^ splitmix(j as u64 ^ splitmix(k as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise with smoothstep weights, in [0, 1).
fn value_noise(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (fx, fy, fz) = (x.floor(), y.floor(), z.floor());
    let (i, j, k) = (fx as i64, fy as i64, fz as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (u, v, w) = (s(x - fx), s(y - fy), s(z - fz));
    let mut acc = 0.0;
    for (dk, wk) in [(0, 1.0 - w), (1, w)] {
        for (dj, wj) in [(0, 1.0 - v), (1, v)] {
            for (di, wi) in [(0, 1.0 - u), (1, u)] {
                acc += wi * wj * wk * lattice(seed, i + di, j + dj, k + dk);
            }
        }
    }
    acc
}

impl SyntheticScene {
    /// 512×512 views at 0.3 m of flat ground with a 10 m and a 20 m box,
    /// from two sensors about 22° apart.
    pub fn standard() -> Self {
        let cam = AffineCamera {
            incidence_deg: 10.0,
            azimuth_deg: 270.0,
            gsd: 0.3,
            rotation_deg: 0.0,
            width: 512,
            height: 512,
        };
        Self {
            frame: LocalFrame {
                lon0: -81.7,
                lat0: 30.3,
            },
            ground_alt: 10.0,
            boxes: vec![
                SceneBox {
                    x0: -40.0,
                    x1: -15.0,
                    y0: -10.0,
                    y1: 20.0,
                    height: 10.0,
                },
                SceneBox {
                    x0: 10.0,
                    x1: 40.0,
                    y0: -35.0,
                    y1: -8.0,
                    height: 20.0,
                },
            ],
            cameras: [
                cam,
                AffineCamera {
                    incidence_deg: 12.0,
                    azimuth_deg: 90.0,
                    rotation_deg: 3.0,
                    ..cam
                },
            ],
            roi_half: 55.0,
            texture_seed: 42,
        }
    }

    /// Randomized convergent geometry derived from `seed`, with
    /// `size × size` images.
    pub fn random(seed: u64, size: usize) -> Self {
        let mut state = seed;
        let mut next = move || {
            state = splitmix(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let gsd = 0.3 + 0.2 * next();
        let az1 = 360.0 * next();
        let az2 = az1 + 180.0 + 120.0 * (next() - 0.5);
        let base = AffineCamera {
            incidence_deg: 8.0 + 12.0 * next(),
            azimuth_deg: az1,
            gsd,
            rotation_deg: 20.0 * (next() - 0.5),
            width: size,
            height: size,
        };
        let cam2 = AffineCamera {
            incidence_deg: 8.0 + 12.0 * next(),
            azimuth_deg: az2 % 360.0,
            rotation_deg: 20.0 * (next() - 0.5),
            ..base
        };
        let extent = 0.5 * size as f64 * gsd;
        let roi_half = 0.6 * extent;
        let mut boxes = Vec::new();
        for k in 0..2 {
            let w = roi_half * (0.2 + 0.15 * next());
            let cx = roi_half * (if k == 0 { -0.45 } else { 0.45 }) + 0.1 * roi_half * (next() - 0.5);
            let cy = roi_half * 0.6 * (next() - 0.5);
            boxes.push(SceneBox {
                x0: cx - 0.5 * w,
                x1: cx + 0.5 * w,
                y0: cy - 0.6 * w,
                y1: cy + 0.6 * w,
                height: 5.0 + 15.0 * next(),
            });
        }
        Self {
            frame: LocalFrame {
                lon0: -81.7 + 0.01 * (next() - 0.5),
                lat0: 30.3 + 0.01 * (next() - 0.5),
            },
            ground_alt: 20.0 * next(),
            boxes,
            cameras: [base, cam2],
            roi_half,
            texture_seed: seed,
        }
    }

    /// The same scene with the two views exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            cameras: [self.cameras[1], self.cameras[0]],
            ..self.clone()
        }
    }

    pub fn max_height(&self) -> f64 {
        self.boxes.iter().map(|b| b.height).fold(0.0, f64::max)
    }

    /// Surface altitude at local `(x, y)`.
    pub fn surface_alt(&self, x: f64, y: f64) -> f64 {
        self.ground_alt
            + self
                .boxes
                .iter()
                .filter(|b| b.contains(x, y))
                .map(|b| b.height)
                .fold(0.0, f64::max)
    }

    /// Distance from `(x, y)` to the nearest box edge.
    pub fn edge_distance(&self, x: f64, y: f64) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.edge_distance(x, y))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn roi(&self) -> Roi {
        let a = self.frame.to_geo(-self.roi_half, -self.roi_half, 0.0);
        let b = self.frame.to_geo(self.roi_half, self.roi_half, 0.0);
        Roi {
            lon_min: a.lon,
            lon_max: b.lon,
            lat_min: a.lat,
            lat_max: b.lat,
            alt_lo: self.ground_alt - 5.0,
            alt_hi: self.ground_alt + self.max_height() + 5.0,
        }
    }

    /// RPC model of camera `view` (0 or 1), fitted to the exact projection
    /// over the image footprint and a generous altitude range.
    pub fn rpc(&self, view: usize) -> Result<RpcModel, GeometryError> {
        let cam = &self.cameras[view];
        let half = 0.75 * cam.width.max(cam.height) as f64 * cam.gsd;
        let mut samples = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..5 {
                    let x = -half + 2.0 * half * i as f64 / 9.0;
                    let y = -half + 2.0 * half * j as f64 / 9.0;
                    let z = -50.0 + 150.0 * k as f64 / 4.0;
                    let g = self.frame.to_geo(x, y, self.ground_alt + z);
                    samples.push((g, cam.project(x, y, z)));
                }
            }
        }
        RpcModel::fit(&samples, RpcNormalization::from_samples(&samples), false)
    }

    /// Height above ground where the ray through the plane point `(gx, gy)`
    /// first meets the scene, with the hit point.
    fn cast(&self, cam: &AffineCamera, gx: f64, gy: f64) -> (f64, f64, f64) {
        let (lx, ly) = cam.lean();
        let mut hit = 0.0f64;
        for b in &self.boxes {
            let (mut lo, mut hi) = (0.0f64, b.height);
            for (g, l, a, c) in [(gx, lx, b.x0, b.x1), (gy, ly, b.y0, b.y1)] {
                if l.abs() < 1e-12 {
                    if g < a || g > c {
                        hi = -1.0;
                    }
                } else {
                    let (t0, t1) = ((a - g) / l, (c - g) / l);
                    lo = lo.max(t0.min(t1));
                    hi = hi.min(t0.max(t1));
                }
            }
            if lo <= hi {
                hit = hit.max(hi);
            }
        }
        (gx + hit * lx, gy + hit * ly, hit)
    }

    fn texture(&self, x: f64, y: f64, z: f64) -> f64 {
        let s = self.texture_seed;
        let n1 = value_noise(s, x / 0.7, y / 0.7, z / 0.7);
        let n2 = value_noise(s ^ 0xA5A5, x / 2.3, y / 2.3, z / 2.3);
        let n3 = value_noise(s ^ 0x5A5A, x / 7.0, y / 7.0, z / 7.0);
        40.0 + 140.0 * n1 + 60.0 * n2 + 40.0 * n3
    }

    /// Render camera `view` with 2×2 supersampling.
    pub fn render(&self, view: usize) -> Raster<f32> {
        let cam = self.cameras[view];
        let (w, h) = (cam.width, cam.height);
        let mut data = vec![0f32; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(r, line)| {
            for (c, out) in line.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (dx, dy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let (gx, gy) = cam.ground_intercept(c as f64 + dx, r as f64 + dy);
                    let (x, y, z) = self.cast(&cam, gx, gy);
                    acc += self.texture(x, y, z);
                }
                *out = (0.25 * acc) as f32;
            }
        });
        Raster::from_vec(w, h, data).expect("sized buffer")
    }

    /// Grid covering the ROI at `cell` meters.
    pub fn grid(&self, cell: f64) -> Result<GridSpec, DsmError> {
        GridSpec::covering(&self.roi(), cell)
    }

    fn cell_local(&self, spec: &GridSpec, c: usize, r: usize) -> (f64, f64) {
        let (e, n) = spec.cell_center(c, r);
        let g = utm_to_geodetic(&UtmCoord {
            easting: e,
            northing: n,
            zone: spec.zone,
        });
        self.frame.to_local(g.lon, g.lat)
    }

    /// Exact surface altitude sampled at the cell centres of `spec`.
    pub fn ground_truth(&self, spec: &GridSpec) -> DsmGrid {
        DsmGrid {
            spec: *spec,
            values: Raster::from_fn(spec.width, spec.height, |c, r| {
                let (x, y) = self.cell_local(spec, c, r);
                self.surface_alt(x, y)
            }),
        }
    }

    /// Cells whose centre lies within `band` meters of a box edge.
    pub fn edge_mask(&self, spec: &GridSpec, band: f64) -> Raster<bool> {
        Raster::from_fn(spec.width, spec.height, |c, r| {
            let (x, y) = self.cell_local(spec, c, r);
            self.edge_distance(x, y) <= band
        })
    }

    /// Cells whose centre lies inside box `i`, at least `inset` meters from
    /// its edges.
    pub fn box_interior_mask(&self, spec: &GridSpec, i: usize, inset: f64) -> Raster<bool> {
        let b = self.boxes[i];
        Raster::from_fn(spec.width, spec.height, |c, r| {
            let (x, y) = self.cell_local(spec, c, r);
            b.contains(x, y) && b.edge_distance(x, y) >= inset
        })
    }

    /// Write both images and RPCs plus a ground-truth DSM at `cell` meters.
    pub fn write_inputs(&self, dir: &Path, cell: f64) -> Result<SceneFiles, SyntheticError> {
        std::fs::create_dir_all(dir).map_err(|source| RasterError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let files = SceneFiles {
            left_image: dir.join("left.pfm"),
            right_image: dir.join("right.pfm"),
            left_rpc: dir.join("left_rpc.txt"),
            right_rpc: dir.join("right_rpc.txt"),
            gt_dsm: dir.join("gt_dsm.pfm"),
        };
        write_pfm(&files.left_image, &self.render(0))?;
        write_pfm(&files.right_image, &self.render(1))?;
        for (view, path) in [(0, &files.left_rpc), (1, &files.right_rpc)] {
            std::fs::write(path, self.rpc(view)?.to_rpc_text()).map_err(|source| RasterError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        self.ground_truth(&self.grid(cell)?).write(&files.gt_dsm)?;
        Ok(files)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dsm(#[from] DsmError),
}

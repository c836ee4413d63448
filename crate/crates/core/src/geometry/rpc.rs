use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GeoPoint, GeometryError, PixelCoord};

/// Number of terms of the cubic RPC polynomial.
pub const RPC_TERMS: usize = 20;

const VALIDITY_BOX: f64 = 2.0;
const ALT_VALIDITY: f64 = 3.0;
const DEN_EPS_EVAL: f64 = 1e-10;
const DEN_EPS_LOAD: f64 = 1e-8;
const LOCALIZE_MAX_ITER: usize = 100;
const LOCALIZE_TOL_PX: f64 = 1e-6;

/// Raw RPC00B coefficient set, as read from a file.
///
/// Terms are ordered `1, L, P, H, LP, LH, PH, L², P², H², PLH, L³, LP², LH²,
/// L²P, P³, PH², L²H, P²H, H³` with `L` the normalized latitude, `P` the
/// normalized longitude and `H` the normalized height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcCoefficients {
    pub line_num: [f64; RPC_TERMS],
    pub line_den: [f64; RPC_TERMS],
    pub samp_num: [f64; RPC_TERMS],
    pub samp_den: [f64; RPC_TERMS],
    pub line_off: f64,
    pub line_scale: f64,
    pub samp_off: f64,
    pub samp_scale: f64,
    pub lat_off: f64,
    pub lat_scale: f64,
    pub lon_off: f64,
    pub lon_scale: f64,
    pub alt_off: f64,
    pub alt_scale: f64,
}

impl RpcCoefficients {
    /// Coefficients of the identity-scaled affine model: `samp = P`,
    /// `line = L`, unit denominators, zero offsets, unit scales.
    pub fn affine_identity() -> Self {
        let mut c = Self {
            line_num: [0.0; RPC_TERMS],
            line_den: [0.0; RPC_TERMS],
            samp_num: [0.0; RPC_TERMS],
            samp_den: [0.0; RPC_TERMS],
            line_off: 0.0,
            line_scale: 1.0,
            samp_off: 0.0,
            samp_scale: 1.0,
            lat_off: 0.0,
            lat_scale: 1.0,
            lon_off: 0.0,
            lon_scale: 1.0,
            alt_off: 0.0,
            alt_scale: 1.0,
        };
        c.line_num[1] = 1.0;
        c.samp_num[2] = 1.0;
        c.line_den[0] = 1.0;
        c.samp_den[0] = 1.0;
        c
    }
}

/// Validated rational polynomial camera model.
///
/// Both denominators are rescaled at construction so that their constant
/// term is exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RpcCoefficients", into = "RpcCoefficients")]
pub struct RpcModel {
    c: RpcCoefficients,
}

impl TryFrom<RpcCoefficients> for RpcModel {
    type Error = GeometryError;
    fn try_from(c: RpcCoefficients) -> Result<Self, Self::Error> {
        RpcModel::new(c)
    }
}

impl From<RpcModel> for RpcCoefficients {
    fn from(m: RpcModel) -> Self {
        m.c
    }
}

#[inline]
fn monomials(l: f64, p: f64, h: f64) -> [f64; RPC_TERMS] {
    [
        1.0,
        l,
        p,
        h,
        l * p,
        l * h,
        p * h,
        l * l,
        p * p,
        h * h,
        p * l * h,
        l * l * l,
        l * p * p,
        l * h * h,
        l * l * p,
        p * p * p,
        p * h * h,
        l * l * h,
        p * p * h,
        h * h * h,
    ]
}

#[inline]
fn d_monomials_dl(l: f64, p: f64, h: f64) -> [f64; RPC_TERMS] {
    [
        0.0,
        1.0,
        0.0,
        0.0,
        p,
        h,
        0.0,
        2.0 * l,
        0.0,
        0.0,
        p * h,
        3.0 * l * l,
        p * p,
        h * h,
        2.0 * l * p,
        0.0,
        0.0,
        2.0 * l * h,
        0.0,
        0.0,
    ]
}

#[inline]
fn d_monomials_dp(l: f64, p: f64, h: f64) -> [f64; RPC_TERMS] {
    [
        0.0,
        0.0,
        1.0,
        0.0,
        l,
        0.0,
        h,
        0.0,
        2.0 * p,
        0.0,
        l * h,
        0.0,
        2.0 * l * p,
        0.0,
        l * l,
        3.0 * p * p,
        h * h,
        0.0,
        2.0 * p * h,
        0.0,
    ]
}

#[inline]
fn dot(c: &[f64; RPC_TERMS], m: &[f64; RPC_TERMS]) -> f64 {
    c.iter().zip(m).map(|(a, b)| a * b).sum()
}

/// Normalized image coordinates and their derivatives w.r.t. (P, L).
struct NormEval {
    samp: f64,
    line: f64,
    // d samp / dP, d samp / dL, d line / dP, d line / dL
    jac: [f64; 4],
}

impl RpcModel {
    pub fn new(mut c: RpcCoefficients) -> Result<Self, GeometryError> {
        for (name, v) in [
            ("line_scale", c.line_scale),
            ("samp_scale", c.samp_scale),
            ("lat_scale", c.lat_scale),
            ("lon_scale", c.lon_scale),
            ("alt_scale", c.alt_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GeometryError::InvalidRpc(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        let offsets = [c.line_off, c.samp_off, c.lat_off, c.lon_off, c.alt_off];
        let mut all = c
            .line_num
            .iter()
            .chain(&c.line_den)
            .chain(&c.samp_num)
            .chain(&c.samp_den)
            .chain(&offsets);
        if all.any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidRpc("non-finite coefficient".into()));
        }
        // the denominator at the normalized domain centre is its constant term
        for (num, den) in [
            (&mut c.line_num, &mut c.line_den),
            (&mut c.samp_num, &mut c.samp_den),
        ] {
            let k = den[0];
            if k.abs() <= DEN_EPS_LOAD {
                return Err(GeometryError::InvalidRpc(format!(
                    "denominator vanishes at the domain centre ({k:e})"
                )));
            }
            if k != 1.0 {
                num.iter_mut().for_each(|v| *v /= k);
                den.iter_mut().for_each(|v| *v /= k);
                den[0] = 1.0;
            }
        }
        Ok(Self { c })
    }

    pub fn coefficients(&self) -> &RpcCoefficients {
        &self.c
    }

    /// Normalized (P, L, H) for a ground point.
    #[inline]
    fn normalize(&self, p: &GeoPoint) -> (f64, f64, f64) {
        (
            (p.lon - self.c.lon_off) / self.c.lon_scale,
            (p.lat - self.c.lat_off) / self.c.lat_scale,
            (p.alt - self.c.alt_off) / self.c.alt_scale,
        )
    }

    #[inline]
    fn eval_norm(&self, pn: f64, ln: f64, hn: f64) -> Result<NormEval, GeometryError> {
        let m = monomials(ln, pn, hn);
        let dl = d_monomials_dl(ln, pn, hn);
        let dp = d_monomials_dp(ln, pn, hn);
        let c = &self.c;
        let ratio = |num: &[f64; RPC_TERMS], den: &[f64; RPC_TERMS]| {
            let n = dot(num, &m);
            let d = dot(den, &m);
            if d.abs() < DEN_EPS_EVAL {
                return Err(GeometryError::DenominatorNearZero(d));
            }
            let v = n / d;
            let dvp = (dot(num, &dp) - v * dot(den, &dp)) / d;
            let dvl = (dot(num, &dl) - v * dot(den, &dl)) / d;
            Ok((v, dvp, dvl))
        };
        let (samp, sp, sl) = ratio(&c.samp_num, &c.samp_den)?;
        let (line, lp, ll) = ratio(&c.line_num, &c.line_den)?;
        Ok(NormEval {
            samp,
            line,
            jac: [sp, sl, lp, ll],
        })
    }

    #[inline]
    fn eval_ratio(&self, pn: f64, ln: f64, hn: f64) -> Result<(f64, f64), GeometryError> {
        let m = monomials(ln, pn, hn);
        let c = &self.c;
        let sd = dot(&c.samp_den, &m);
        let ld = dot(&c.line_den, &m);
        for d in [sd, ld] {
            if d.abs() < DEN_EPS_EVAL {
                return Err(GeometryError::DenominatorNearZero(d));
            }
        }
        Ok((dot(&c.samp_num, &m) / sd, dot(&c.line_num, &m) / ld))
    }

    /// Ground-to-image projection.
    pub fn project(&self, p: &GeoPoint) -> Result<PixelCoord, GeometryError> {
        let (pn, ln, hn) = self.normalize(p);
        let worst = pn.abs().max(ln.abs()).max(hn.abs());
        if !(worst <= VALIDITY_BOX) {
            return Err(GeometryError::OutOfValidityBox(worst));
        }
        let (s, l) = self.eval_ratio(pn, ln, hn)?;
        Ok(PixelCoord {
            col: s * self.c.samp_scale + self.c.samp_off,
            row: l * self.c.line_scale + self.c.line_off,
        })
    }

    /// Image-to-ground localization at a fixed altitude.
    pub fn localize(&self, px: &PixelCoord, alt: f64) -> Result<GeoPoint, GeometryError> {
        self.localize_from(px, alt, None)
    }

    /// Localization with an optional starting point (normally the solution
    /// at a nearby altitude). Without a guess the affine part of the model
    /// seeds the iteration.
    pub(crate) fn localize_from(
        &self,
        px: &PixelCoord,
        alt: f64,
        guess: Option<&GeoPoint>,
    ) -> Result<GeoPoint, GeometryError> {
        let c = &self.c;
        let hn = (alt - c.alt_off) / c.alt_scale;
        if !(hn.abs() <= ALT_VALIDITY) {
            return Err(GeometryError::OutOfValidityBox(hn));
        }
        let target_s = (px.col - c.samp_off) / c.samp_scale;
        let target_l = (px.row - c.line_off) / c.line_scale;

        let (mut pn, mut ln) = match guess {
            Some(g) => {
                let (p, l, _) = self.normalize(g);
                (p, l)
            }
            None => self.affine_initializer(target_s, target_l, hn),
        };

        let px_residual = |s: f64, l: f64| {
            ((s - target_s) * c.samp_scale).hypot((l - target_l) * c.line_scale)
        };

        let mut ev = self.eval_norm(pn, ln, hn)?;
        let mut res = px_residual(ev.samp, ev.line);
        let mut iterations = 0;
        while iterations < LOCALIZE_MAX_ITER {
            if res <= LOCALIZE_TOL_PX * 1e-3 {
                break;
            }
            iterations += 1;
            let [a, b, cc, d] = ev.jac;
            let det = a * d - b * cc;
            if det.abs() < 1e-300 {
                return Err(GeometryError::NoConvergence {
                    residual: res,
                    iterations,
                });
            }
            let rs = target_s - ev.samp;
            let rl = target_l - ev.line;
            let dp = (d * rs - b * rl) / det;
            let dl = (a * rl - cc * rs) / det;

            // backtracking on the pixel residual
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let (np, nl) = (pn + step * dp, ln + step * dl);
                if let Ok(ne) = self.eval_norm(np, nl, hn) {
                    let nr = px_residual(ne.samp, ne.line);
                    if nr < res {
                        pn = np;
                        ln = nl;
                        ev = ne;
                        res = nr;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !(res <= LOCALIZE_TOL_PX) {
            return Err(GeometryError::NoConvergence {
                residual: res,
                iterations,
            });
        }
        let worst = pn.abs().max(ln.abs());
        if !(worst <= VALIDITY_BOX) {
            return Err(GeometryError::OutOfValidityBox(worst));
        }
        Ok(GeoPoint {
            lon: pn * c.lon_scale + c.lon_off,
            lat: ln * c.lat_scale + c.lat_off,
            alt,
        })
    }

    /// Solve the first-order expansion of the model for (P, L).
    fn affine_initializer(&self, target_s: f64, target_l: f64, hn: f64) -> (f64, f64) {
        let c = &self.c;
        // num/den ≈ n0 + (n_k - n0 d_k) x_k around the centre
        let lin = |num: &[f64; RPC_TERMS], den: &[f64; RPC_TERMS]| {
            let n0 = num[0];
            (
                n0 + (num[3] - n0 * den[3]) * hn,
                num[1] - n0 * den[1],
                num[2] - n0 * den[2],
            )
        };
        let (s0, s_l, s_p) = lin(&c.samp_num, &c.samp_den);
        let (l0, l_l, l_p) = lin(&c.line_num, &c.line_den);
        let det = s_p * l_l - s_l * l_p;
        if det.abs() < 1e-12 {
            return (0.0, 0.0);
        }
        let rs = target_s - s0;
        let rl = target_l - l0;
        let pn = (l_l * rs - s_l * rl) / det;
        let ln = (s_p * rl - l_p * rs) / det;
        (pn, ln)
    }

    /// Least-squares fit of an RPC to ground/image samples.
    ///
    /// With `rational = false` the denominators are fixed to 1 and the fit
    /// is an ordinary cubic polynomial regression. With `rational = true`
    /// the linearized formulation `num(x) - y·den'(x) = y` (with
    /// `den = 1 + den'`) is solved, which is exact for data generated by a
    /// rational model of the same degree.
    pub fn fit(
        samples: &[(GeoPoint, PixelCoord)],
        norm: RpcNormalization,
        rational: bool,
    ) -> Result<Self, GeometryError> {
        let unknowns = if rational { 39 } else { 20 };
        if samples.len() < unknowns {
            return Err(GeometryError::InvalidRpc(format!(
                "{} samples cannot determine {unknowns} coefficients",
                samples.len()
            )));
        }
        let mut c = RpcCoefficients {
            line_num: [0.0; RPC_TERMS],
            line_den: [0.0; RPC_TERMS],
            samp_num: [0.0; RPC_TERMS],
            samp_den: [0.0; RPC_TERMS],
            line_off: norm.line_off,
            line_scale: norm.line_scale,
            samp_off: norm.samp_off,
            samp_scale: norm.samp_scale,
            lat_off: norm.lat_off,
            lat_scale: norm.lat_scale,
            lon_off: norm.lon_off,
            lon_scale: norm.lon_scale,
            alt_off: norm.alt_off,
            alt_scale: norm.alt_scale,
        };
        c.line_den[0] = 1.0;
        c.samp_den[0] = 1.0;

        let n = samples.len();
        let mut design = DMatrix::<f64>::zeros(n, unknowns);
        let mut rhs_s = DVector::<f64>::zeros(n);
        let mut rhs_l = DVector::<f64>::zeros(n);
        let mut design_l = if rational {
            Some(DMatrix::<f64>::zeros(n, unknowns))
        } else {
            None
        };
        for (i, (g, px)) in samples.iter().enumerate() {
            let pn = (g.lon - c.lon_off) / c.lon_scale;
            let ln = (g.lat - c.lat_off) / c.lat_scale;
            let hn = (g.alt - c.alt_off) / c.alt_scale;
            let s = (px.col - c.samp_off) / c.samp_scale;
            let l = (px.row - c.line_off) / c.line_scale;
            let m = monomials(ln, pn, hn);
            for k in 0..RPC_TERMS {
                design[(i, k)] = m[k];
            }
            if let Some(dl) = design_l.as_mut() {
                for k in 0..RPC_TERMS {
                    dl[(i, k)] = m[k];
                }
                for k in 1..RPC_TERMS {
                    design[(i, RPC_TERMS + k - 1)] = -s * m[k];
                    dl[(i, RPC_TERMS + k - 1)] = -l * m[k];
                }
            }
            rhs_s[i] = s;
            rhs_l[i] = l;
        }
        let solve = |a: DMatrix<f64>, b: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
            let svd = a.svd(true, true);
            svd.solve(b, 1e-12)
                .map_err(|e| GeometryError::InvalidRpc(format!("fit failed: {e}")))
        };
        let xs = solve(design.clone(), &rhs_s)?;
        let xl = solve(design_l.unwrap_or(design), &rhs_l)?;
        for k in 0..RPC_TERMS {
            c.samp_num[k] = xs[k];
            c.line_num[k] = xl[k];
        }
        if rational {
            for k in 1..RPC_TERMS {
                c.samp_den[k] = xs[RPC_TERMS + k - 1];
                c.line_den[k] = xl[RPC_TERMS + k - 1];
            }
        }
        Self::new(c)
    }

    pub fn from_rpc_text(text: &str) -> Result<Self, GeometryError> {
        Self::new(parse_rpc_text(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::RpcParse(format!("{}: {e}", path.display())))?;
        Self::from_rpc_text(&text)
    }

    /// RPC00B-style key/value text.
    pub fn to_rpc_text(&self) -> String {
        let c = &self.c;
        let mut out = String::new();
        let units = [
            ("LINE_OFF", c.line_off, "pixels"),
            ("SAMP_OFF", c.samp_off, "pixels"),
            ("LAT_OFF", c.lat_off, "degrees"),
            ("LONG_OFF", c.lon_off, "degrees"),
            ("HEIGHT_OFF", c.alt_off, "meters"),
            ("LINE_SCALE", c.line_scale, "pixels"),
            ("SAMP_SCALE", c.samp_scale, "pixels"),
            ("LAT_SCALE", c.lat_scale, "degrees"),
            ("LONG_SCALE", c.lon_scale, "degrees"),
            ("HEIGHT_SCALE", c.alt_scale, "meters"),
        ];
        for (k, v, u) in units {
            let _ = writeln!(out, "{k}: {v:.17e} {u}");
        }
        for (name, arr) in [
            ("LINE_NUM_COEFF", &c.line_num),
            ("LINE_DEN_COEFF", &c.line_den),
            ("SAMP_NUM_COEFF", &c.samp_num),
            ("SAMP_DEN_COEFF", &c.samp_den),
        ] {
            for (i, v) in arr.iter().enumerate() {
                let _ = writeln!(out, "{name}_{}: {v:.17e}", i + 1);
            }
        }
        out
    }
}

/// Offsets and scales used when fitting an RPC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcNormalization {
    pub line_off: f64,
    pub line_scale: f64,
    pub samp_off: f64,
    pub samp_scale: f64,
    pub lat_off: f64,
    pub lat_scale: f64,
    pub lon_off: f64,
    pub lon_scale: f64,
    pub alt_off: f64,
    pub alt_scale: f64,
}

impl RpcNormalization {
    /// Normalization spanning the bounding box of the samples.
    pub fn from_samples(samples: &[(GeoPoint, PixelCoord)]) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let off = 0.5 * (lo + hi);
            let scale = (0.5 * (hi - lo)).max(1e-9);
            (off, scale)
        };
        let (lon_off, lon_scale) = span(&mut samples.iter().map(|s| s.0.lon));
        let (lat_off, lat_scale) = span(&mut samples.iter().map(|s| s.0.lat));
        let (alt_off, alt_scale) = span(&mut samples.iter().map(|s| s.0.alt));
        let (samp_off, samp_scale) = span(&mut samples.iter().map(|s| s.1.col));
        let (line_off, line_scale) = span(&mut samples.iter().map(|s| s.1.row));
        Self {
            line_off,
            line_scale,
            samp_off,
            samp_scale,
            lat_off,
            lat_scale,
            lon_off,
            lon_scale,
            alt_off,
            alt_scale,
        }
    }
}

/// Parse RPC00B-style text. Keys are case-insensitive, separators and
/// trailing unit words are tolerated.
pub fn parse_rpc_text(text: &str) -> Result<RpcCoefficients, GeometryError> {
    let mut scalars: HashMap<&'static str, f64> = HashMap::new();
    let mut arrays: HashMap<&'static str, [Option<f64>; RPC_TERMS]> = HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = match line.split_once(':') {
            Some(kv) => kv,
            None => match line.split_once(char::is_whitespace) {
                Some(kv) => kv,
                None => {
                    return Err(GeometryError::RpcParse(format!(
                        "line {}: expected 'KEY: value'",
                        lineno + 1
                    )))
                }
            },
        };
        let key = key.trim().to_ascii_uppercase();
        let value_tok = rest.split_whitespace().next().ok_or_else(|| {
            GeometryError::RpcParse(format!("line {}: missing value for {key}", lineno + 1))
        })?;
        let value: f64 = value_tok.parse().map_err(|_| {
            GeometryError::RpcParse(format!(
                "line {}: bad number '{value_tok}' for {key}",
                lineno + 1
            ))
        })?;

        let scalar = match key.as_str() {
            "LINE_OFF" => Some("line_off"),
            "SAMP_OFF" => Some("samp_off"),
            "LAT_OFF" => Some("lat_off"),
            "LONG_OFF" | "LON_OFF" => Some("lon_off"),
            "HEIGHT_OFF" | "ALT_OFF" => Some("alt_off"),
            "LINE_SCALE" => Some("line_scale"),
            "SAMP_SCALE" => Some("samp_scale"),
            "LAT_SCALE" => Some("lat_scale"),
            "LONG_SCALE" | "LON_SCALE" => Some("lon_scale"),
            "HEIGHT_SCALE" | "ALT_SCALE" => Some("alt_scale"),
            _ => None,
        };
        if let Some(name) = scalar {
            if scalars.insert(name, value).is_some() {
                return Err(GeometryError::RpcParse(format!("duplicate key {key}")));
            }
            continue;
        }
        let array = ["LINE_NUM_COEFF", "LINE_DEN_COEFF", "SAMP_NUM_COEFF", "SAMP_DEN_COEFF"]
            .into_iter()
            .find(|p| key.starts_with(p) && key[p.len()..].starts_with('_'));
        if let Some(prefix) = array {
            let idx: usize = key[prefix.len() + 1..].parse().map_err(|_| {
                GeometryError::RpcParse(format!("bad coefficient index in {key}"))
            })?;
            if !(1..=RPC_TERMS).contains(&idx) {
                return Err(GeometryError::RpcParse(format!(
                    "coefficient index {idx} out of range 1..=20 in {key}"
                )));
            }
            let slot = &mut arrays.entry(prefix).or_insert([None; RPC_TERMS])[idx - 1];
            if slot.replace(value).is_some() {
                return Err(GeometryError::RpcParse(format!("duplicate key {key}")));
            }
        }
        // other keys (ERR_BIAS, ERR_RAND, ...) are ignored
    }

    let scalar = |name: &str| {
        scalars
            .get(name)
            .copied()
            .ok_or_else(|| GeometryError::RpcParse(format!("missing {name}")))
    };
    let array = |prefix: &str| -> Result<[f64; RPC_TERMS], GeometryError> {
        let slots = arrays
            .get(prefix)
            .ok_or_else(|| GeometryError::RpcParse(format!("missing {prefix}_*")))?;
        let mut out = [0.0; RPC_TERMS];
        for (i, s) in slots.iter().enumerate() {
            out[i] = s.ok_or_else(|| {
                GeometryError::RpcParse(format!("missing {prefix}_{}", i + 1))
            })?;
        }
        Ok(out)
    };
    Ok(RpcCoefficients {
        line_num: array("LINE_NUM_COEFF")?,
        line_den: array("LINE_DEN_COEFF")?,
        samp_num: array("SAMP_NUM_COEFF")?,
        samp_den: array("SAMP_DEN_COEFF")?,
        line_off: scalar("line_off")?,
        line_scale: scalar("line_scale")?,
        samp_off: scalar("samp_off")?,
        samp_scale: scalar("samp_scale")?,
        lat_off: scalar("lat_off")?,
        lat_scale: scalar("lat_scale")?,
        lon_off: scalar("lon_off")?,
        lon_scale: scalar("lon_scale")?,
        alt_off: scalar("alt_off")?,
        alt_scale: scalar("alt_scale")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> RpcModel {
        RpcModel::new(RpcCoefficients::affine_identity()).unwrap()
    }

    #[test]
    fn identity_affine_projection() {
        let px = identity().project(&GeoPoint::new(0.25, -0.5, 0.0)).unwrap();
        assert_eq!(px, PixelCoord::new(0.25, -0.5));
    }

    #[test]
    fn sample_denormalization() {
        let mut c = RpcCoefficients::affine_identity();
        c.samp_off = 1000.0;
        c.samp_scale = 500.0;
        let px = RpcModel::new(c)
            .unwrap()
            .project(&GeoPoint::new(0.25, -0.5, 0.0))
            .unwrap();
        assert_eq!(px.col, 1125.0);
    }

    #[test]
    fn identity_affine_localization() {
        let g = identity()
            .localize(&PixelCoord::new(0.25, -0.5), 0.0)
            .unwrap();
        assert!((g.lon - 0.25).abs() < 1e-12);
        assert!((g.lat + 0.5).abs() < 1e-12);
    }

    #[test]
    fn altitude_outside_validity_is_rejected() {
        let err = identity()
            .localize(&PixelCoord::new(0.0, 0.0), 10.0)
            .unwrap_err();
        assert!(matches!(
            err,
            GeometryError::OutOfValidityBox(_) | GeometryError::NoConvergence { .. }
        ));
    }

    #[test]
    fn projection_outside_box_is_rejected() {
        let err = identity()
            .project(&GeoPoint::new(2.5, 0.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, GeometryError::OutOfValidityBox(_)));
    }

    #[test]
    fn denominators_normalized_at_load() {
        let mut c = RpcCoefficients::affine_identity();
        c.samp_den[0] = 2.0;
        c.samp_num[2] = 2.0;
        let m = RpcModel::new(c).unwrap();
        assert_eq!(m.coefficients().samp_den[0], 1.0);
        assert_eq!(m.coefficients().samp_num[2], 1.0);
    }

    #[test]
    fn vanishing_denominator_rejected_at_load() {
        let mut c = RpcCoefficients::affine_identity();
        c.line_den[0] = 1e-9;
        assert!(matches!(RpcModel::new(c), Err(GeometryError::InvalidRpc(_))));
    }

    #[test]
    fn nonpositive_scale_rejected() {
        let mut c = RpcCoefficients::affine_identity();
        c.alt_scale = 0.0;
        assert!(RpcModel::new(c).is_err());
    }

    #[test]
    fn denominator_near_zero_during_projection() {
        let mut c = RpcCoefficients::affine_identity();
        // den = 1 - P vanishes at P = 1
        c.samp_den[2] = -1.0;
        let m = RpcModel::new(c).unwrap();
        assert!(matches!(
            m.project(&GeoPoint::new(1.0, 0.0, 0.0)),
            Err(GeometryError::DenominatorNearZero(_))
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut c = RpcCoefficients::affine_identity();
        c.line_num[7] = 1.0 / 3.0;
        c.samp_den[19] = -2.5e-4;
        c.lat_off = 30.123456789;
        let m = RpcModel::new(c).unwrap();
        let back = RpcModel::from_rpc_text(&m.to_rpc_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parser_is_case_and_whitespace_tolerant() {
        let m = identity();
        let text = m
            .to_rpc_text()
            .lines()
            .map(|l| format!("   {}  ", l.to_ascii_lowercase().replace(": ", " :\t")))
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(RpcModel::from_rpc_text(&text).unwrap(), m);
    }

    #[test]
    fn parser_rejects_missing_and_extra_coefficients() {
        let text = identity().to_rpc_text();
        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("SAMP_DEN_COEFF_20"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(RpcModel::from_rpc_text(&missing).is_err());
        let extra = format!("{text}LINE_NUM_COEFF_21: 0.0\n");
        assert!(RpcModel::from_rpc_text(&extra).is_err());
        let dup = format!("{text}LINE_NUM_COEFF_3: 0.0\n");
        assert!(RpcModel::from_rpc_text(&dup).is_err());
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geometry::{GeoPoint, GeometryError, RpcModel};
use crate::rectification::Roi;

const WGS84_A: f64 = 6_378_137.0;

/// Acquisition geometry of a stereo pair. Missing angles make the pair
/// unclassifiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMetadata {
    pub id_1: String,
    pub id_2: String,
    /// Convergence angle between the two views, degrees.
    pub baseline_angle: Option<f64>,
    /// Off-nadir angles, degrees.
    pub incidence_1: Option<f64>,
    pub incidence_2: Option<f64>,
    /// Seconds between acquisitions.
    #[serde(default)]
    pub acquisition_gap: Option<f64>,
    /// Set when the angles were estimated from the camera models rather
    /// than read from image metadata.
    #[serde(default)]
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairClass {
    Favorable,
    Challenging,
}

impl std::fmt::Display for PairClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairClass::Favorable => "favorable",
            PairClass::Challenging => "challenging",
        })
    }
}

pub const MIN_BASELINE_DEG: f64 = 5.0;
pub const MAX_BASELINE_DEG: f64 = 45.0;
pub const MAX_INCIDENCE_DEG: f64 = 40.0;

fn missing(m: &PairMetadata, what: &str) -> PipelineError {
    PipelineError::MissingMetadata(format!("{}/{}: {what}", m.id_1, m.id_2))
}

/// Favorable iff `5 ≤ baseline ≤ 45` and both incidences are below 40°.
pub fn classify_pair(m: &PairMetadata) -> Result<PairClass, PipelineError> {
    let baseline = m.baseline_angle.ok_or_else(|| missing(m, "baseline_angle"))?;
    let i1 = m.incidence_1.ok_or_else(|| missing(m, "incidence_1"))?;
    let i2 = m.incidence_2.ok_or_else(|| missing(m, "incidence_2"))?;
    for (name, a) in [("baseline_angle", baseline), ("incidence_1", i1), ("incidence_2", i2)] {
        if !(0.0..=90.0).contains(&a) {
            return Err(PipelineError::Config(format!(
                "{}/{}: {name} = {a} is outside [0, 90]",
                m.id_1, m.id_2
            )));
        }
    }
    if let Some(gap) = m.acquisition_gap {
        if !(gap >= 0.0) {
            return Err(PipelineError::Config(format!(
                "{}/{}: negative acquisition gap {gap}",
                m.id_1, m.id_2
            )));
        }
    }
    let ok = (MIN_BASELINE_DEG..=MAX_BASELINE_DEG).contains(&baseline) && i1.max(i2) < MAX_INCIDENCE_DEG;
    Ok(if ok { PairClass::Favorable } else { PairClass::Challenging })
}

/// Read a JSON array of pair records.
pub fn read_pair_metadata(path: &Path) -> Result<Vec<PairMetadata>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Unit vector from the ground towards the sensor at the ROI centre, in
/// local east/north/up, by localizing one pixel at two altitudes.
pub fn view_vector(rpc: &RpcModel, roi: &Roi) -> Result<[f64; 3], GeometryError> {
    let (lo, hi) = (roi.alt_lo, roi.alt_hi);
    let px = rpc.project(&roi.center(0.5 * (lo + hi)))?;
    let a: GeoPoint = rpc.localize(&px, lo)?;
    let b: GeoPoint = rpc.localize(&px, hi)?;
    let lat = a.lat.to_radians();
    let de = (b.lon - a.lon).to_radians() * WGS84_A * lat.cos();
    let dn = (b.lat - a.lat).to_radians() * WGS84_A;
    let du = hi - lo;
    let n = (de * de + dn * dn + du * du).sqrt();
    Ok([de / n, dn / n, du / n])
}

fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Approximate pair geometry from the camera models alone. The
/// acquisition gap is unknown.
pub fn estimate_pair_metadata(
    id_1: &str,
    id_2: &str,
    rpc1: &RpcModel,
    rpc2: &RpcModel,
    roi: &Roi,
) -> Result<PairMetadata, GeometryError> {
    let v1 = view_vector(rpc1, roi)?;
    let v2 = view_vector(rpc2, roi)?;
    let up = [0.0, 0.0, 1.0];
    Ok(PairMetadata {
        id_1: id_1.to_string(),
        id_2: id_2.to_string(),
        baseline_angle: Some(angle_deg(v1, v2)),
        incidence_1: Some(angle_deg(v1, up)),
        incidence_2: Some(angle_deg(v2, up)),
        acquisition_gap: None,
        approximate: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticScene;

    fn meta(b: Option<f64>, i1: f64, i2: f64) -> PairMetadata {
        PairMetadata {
            id_1: "a".into(),
            id_2: "b".into(),
            baseline_angle: b,
            incidence_1: Some(i1),
            incidence_2: Some(i2),
            acquisition_gap: Some(0.0),
            approximate: false,
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_pair(&meta(Some(20.0), 25.0, 30.0)).unwrap(), PairClass::Favorable);
        assert_eq!(classify_pair(&meta(Some(3.0), 25.0, 30.0)).unwrap(), PairClass::Challenging);
        assert_eq!(classify_pair(&meta(Some(45.0), 39.9, 10.0)).unwrap(), PairClass::Favorable);
        assert_eq!(classify_pair(&meta(Some(5.0), 10.0, 10.0)).unwrap(), PairClass::Favorable);
        assert_eq!(classify_pair(&meta(Some(45.01), 10.0, 10.0)).unwrap(), PairClass::Challenging);
        assert_eq!(classify_pair(&meta(Some(20.0), 40.0, 10.0)).unwrap(), PairClass::Challenging);
    }

    #[test]
    fn missing_angles_are_reported() {
        assert!(matches!(
            classify_pair(&meta(None, 1.0, 1.0)),
            Err(PipelineError::MissingMetadata(_))
        ));
        assert!(matches!(
            classify_pair(&meta(Some(95.0), 1.0, 1.0)),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn json_records_parse() {
        let text = r#"[{"id_1": "x", "id_2": "y", "baseline_angle": 12.5,
                       "incidence_1": 20, "incidence_2": 30, "acquisition_gap": 60}]"#;
        let v: Vec<PairMetadata> = serde_json::from_str(text).unwrap();
        assert_eq!(v[0].baseline_angle, Some(12.5));
        assert!(!v[0].approximate);
    }

    #[test]
    fn estimate_matches_synthetic_cameras() {
        let s = SyntheticScene::standard();
        let roi = s.roi();
        let m = estimate_pair_metadata("l", "r", &s.rpc(0).unwrap(), &s.rpc(1).unwrap(), &roi).unwrap();
        let [c1, c2] = &s.cameras;
        assert!((m.incidence_1.unwrap() - c1.incidence_deg).abs() < 0.05, "{m:?}");
        assert!((m.incidence_2.unwrap() - c2.incidence_deg).abs() < 0.05, "{m:?}");
        assert!((m.baseline_angle.unwrap() - c1.baseline_deg(c2)).abs() < 0.05, "{m:?}");
        assert!(m.approximate);
    }
}

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, PixelCoord};

const W_EPS: f64 = 1e-12;

/// Invertible plane projective transform acting on `(col, row, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = GeometryError;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        Homography::from_rows(rows)
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.to_rows()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        let m = Matrix3::from_row_slice(&[
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        ]);
        Self::from_matrix(m)
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() < 1e-300 || m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::SingularHomography);
        }
        Ok(Self(m))
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// `x' = x + s·y`.
    pub fn shear_x(s: f64) -> Self {
        Self(Matrix3::new(1.0, s, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0))
    }

    /// Counter-clockwise rotation by `angle` radians about `(cx, cy)`, in
    /// image axes (x right, y down).
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self(Self::translation(cx, cy).0 * r * Self::translation(-cx, -cy).0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn is_affine(&self) -> bool {
        self.0[(2, 0)] == 0.0 && self.0[(2, 1)] == 0.0 && self.0[(2, 2)] != 0.0
    }

    pub fn apply(&self, p: &PixelCoord) -> Result<PixelCoord, GeometryError> {
        let m = &self.0;
        let w = m[(2, 0)] * p.col + m[(2, 1)] * p.row + m[(2, 2)];
        if w.abs() < W_EPS {
            return Err(GeometryError::PointAtInfinity);
        }
        let x = m[(0, 0)] * p.col + m[(0, 1)] * p.row + m[(0, 2)];
        let y = m[(1, 0)] * p.col + m[(1, 1)] * p.row + m[(1, 2)];
        if w == 1.0 {
            Ok(PixelCoord::new(x, y))
        } else {
            Ok(PixelCoord::new(x / w, y / w))
        }
    }

    pub fn inverse(&self) -> Self {
        // invertibility is a construction invariant
        Self(self.0.try_inverse().expect("homography is invertible"))
    }

    /// `self` followed by `next`: `next ∘ self`.
    pub fn then(&self, next: &Homography) -> Self {
        Self(next.0 * self.0)
    }

    /// Rotation angle (radians) of the linear part, assuming it is a
    /// rotation possibly combined with an axis scale.
    pub fn rotation_angle(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Plain-text sidecar: three lines of three numbers, row-major.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.to_rows() {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", row[0], row[1], row[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GeometryError> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| GeometryError::RpcParse(format!("bad matrix entry '{t}'")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != 9 {
            return Err(GeometryError::RpcParse(format!(
                "homography sidecar needs 9 numbers, found {}",
                values.len()
            )));
        }
        Self::from_matrix(Matrix3::from_row_slice(&values))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::RpcParse(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_translation() {
        let p = PixelCoord::new(3.5, -2.0);
        assert_eq!(Homography::identity().apply(&p).unwrap(), p);
        let t = Homography::translation(53.0, 0.0);
        assert_eq!(
            t.apply(&PixelCoord::new(10.0, 10.0)).unwrap(),
            PixelCoord::new(63.0, 10.0)
        );
    }

    #[test]
    fn singular_rejected() {
        assert!(Homography::from_rows([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn point_at_infinity() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        assert_eq!(
            h.apply(&PixelCoord::new(-1.0, 5.0)),
            Err(GeometryError::PointAtInfinity)
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let h = Homography::rotation_about(0.3, 100.0, 50.0).then(&Homography::shear_x(-0.01));
        let back = Homography::from_text(&h.to_text()).unwrap();
        assert_eq!(back, h);
        assert_eq!(h.to_text().lines().count(), 3);
    }

    #[test]
    fn rotation_about_fixes_centre() {
        let h = Homography::rotation_about(0.7, 12.0, -4.0);
        let c = h.apply(&PixelCoord::new(12.0, -4.0)).unwrap();
        assert!((c.col - 12.0).abs() < 1e-12 && (c.row + 4.0).abs() < 1e-12);
        assert!((h.rotation_angle() - 0.7).abs() < 1e-12);
    }

    fn arb_homography() -> impl Strategy<Value = Homography> {
        (
            prop::array::uniform6(-2.0f64..2.0),
            prop::array::uniform2(-1e-3f64..1e-3),
        )
            .prop_filter_map("invertible", |(a, p)| {
                let m = [[a[0] + 3.0, a[1], a[2] * 100.0], [a[3], a[4] + 3.0, a[5] * 100.0], [p[0], p[1], 1.0]];
                Homography::from_rows(m).ok().filter(|h| h.matrix().determinant().abs() > 0.5)
            })
    }

    proptest! {
        #[test]
        fn inverse_undoes_apply(h in arb_homography(), x in -300.0f64..300.0, y in -300.0f64..300.0) {
            let p = PixelCoord::new(x, y);
            if let Ok(q) = h.apply(&p) {
                let back = h.inverse().apply(&q).unwrap();
                prop_assert!(back.distance(&p) < 1e-9 * (1.0 + x.abs().max(y.abs())));
            }
        }

        #[test]
        fn affine_composition_consistent(a in prop::array::uniform6(-2.0f64..2.0), b in prop::array::uniform6(-2.0f64..2.0),
                                         x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let mk = |a: [f64; 6]| Homography::from_rows([[a[0] + 3.0, a[1], a[2]], [a[3], a[4] + 3.0, a[5]], [0.0, 0.0, 1.0]]).unwrap();
            let (h, g) = (mk(a), mk(b));
            let p = PixelCoord::new(x, y);
            let seq = g.apply(&h.apply(&p).unwrap()).unwrap();
            let comp = h.then(&g).apply(&p).unwrap();
            let scale = 1.0 + seq.col.abs().max(seq.row.abs());
            prop_assert!(seq.distance(&comp) <= 1e-9 * scale);
            let ident = h.then(&h.inverse()).apply(&p).unwrap();
            prop_assert!(ident.distance(&p) <= 1e-9 * (1.0 + x.abs().max(y.abs())));
        }
    }
}

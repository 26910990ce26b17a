//! Ellipsoid patient model used as the haptic proxy on the leader side.
//!
//! The patient's abdomen is approximated by an axis-aligned ellipsoid fitted
//! from four pressed calibration points. The leader's virtual transducer is
//! tested against it every tick; while the tip is inside, a spring-damper force
//! along the outward surface normal is rendered back to the leader.
//!
//! Axis pairing: the lateral semi-axis `a` runs along z, the vertical semi-axis
//! `b` along y and the longitudinal semi-axis `c` along x.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{is_finite_vec, Vec3};

/// Longitudinal semi-axis used when fitting. Only the transverse shape
/// matters for scanning, so the ellipsoid is made very long along x.
pub const DEFAULT_LONGITUDINAL_SEMI_AXIS: f64 = 10.0;

/// Depth reported when the normal ray misses the ellipsoid entirely.
pub const NO_INTERSECTION_DEPTH: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    #[error("surface normal undefined at the ellipsoid center")]
    DegeneratePoint,
    #[error("normal ray does not intersect the ellipsoid")]
    NoIntersection,
    #[error("invalid ellipsoid model: {0}")]
    InvalidModel(String),
}

/// The four pressed landmarks, in the order they are collected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSet {
    pub xiphoid: Vec3,
    pub left: Vec3,
    pub right: Vec3,
    pub bed: Vec3,
}

impl CalibrationSet {
    pub fn new(xiphoid: Vec3, left: Vec3, right: Vec3, bed: Vec3) -> Self {
        Self {
            xiphoid,
            left,
            right,
            bed,
        }
    }

    pub fn from_points(points: [Vec3; 4]) -> Self {
        Self::new(points[0], points[1], points[2], points[3])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, p) in [
            ("xiphoid", &self.xiphoid),
            ("left", &self.left),
            ("right", &self.right),
            ("bed", &self.bed),
        ] {
            if !is_finite_vec(p) {
                return Err(GeometryError::DegenerateCalibration(format!(
                    "{name} point is not finite"
                )));
            }
        }
        if self.right.z <= self.left.z {
            return Err(GeometryError::DegenerateCalibration(format!(
                "right z ({}) must exceed left z ({})",
                self.right.z, self.left.z
            )));
        }
        if self.xiphoid.y <= self.bed.y {
            return Err(GeometryError::DegenerateCalibration(format!(
                "xiphoid height ({}) must exceed bed height ({})",
                self.xiphoid.y, self.bed.y
            )));
        }
        Ok(())
    }
}

/// Semi-axis lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiAxes {
    /// Lateral, along z.
    pub a: f64,
    /// Vertical, along y.
    pub b: f64,
    /// Longitudinal, along x.
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidModel {
    pub center: Vec3,
    pub semi_axes: SemiAxes,
}

impl EllipsoidModel {
    pub fn new(center: Vec3, semi_axes: SemiAxes) -> Result<Self, GeometryError> {
        let m = Self { center, semi_axes };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let SemiAxes { a, b, c } = self.semi_axes;
        if !is_finite_vec(&self.center) || ![a, b, c].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidModel("non-finite parameter".into()));
        }
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(GeometryError::InvalidModel(format!(
                "semi-axes must be positive (a={a}, b={b}, c={c})"
            )));
        }
        if c < a.max(b) {
            return Err(GeometryError::InvalidModel(format!(
                "longitudinal semi-axis {c} is smaller than the transverse ones"
            )));
        }
        Ok(())
    }

    /// Diagonal of the inverse shape matrix in (x, y, z) component order.
    fn inv_shape_diag(&self) -> Vec3 {
        let SemiAxes { a, b, c } = self.semi_axes;
        Vec3::new(1.0 / (c * c), 1.0 / (b * b), 1.0 / (a * a))
    }

    /// Quadratic form of the ellipsoid: 1 on the surface, < 1 strictly inside.
    pub fn implicit_value(&self, p: &Vec3) -> f64 {
        implicit_value(self, p)
    }

    /// Height of the upper surface above the point (x, z), if it lies within
    /// the ellipsoid's footprint.
    pub fn surface_height(&self, x: f64, z: f64) -> Option<f64> {
        let SemiAxes { a, b, c } = self.semi_axes;
        let dz = (z - self.center.z) / a;
        let dx = (x - self.center.x) / c;
        let s = 1.0 - dz * dz - dx * dx;
        (s >= 0.0).then(|| self.center.y + b * s.sqrt())
    }
}

/// Fit with the default longitudinal semi-axis.
pub fn fit_ellipsoid(cal: &CalibrationSet) -> Result<EllipsoidModel, GeometryError> {
    fit_ellipsoid_with(cal, DEFAULT_LONGITUDINAL_SEMI_AXIS)
}

/// Fit the ellipsoid to the four landmarks. The lateral extent comes from the
/// left/right points, the height from the xiphoid and the bed, and the model
/// is tangent to the bed plane.
pub fn fit_ellipsoid_with(
    cal: &CalibrationSet,
    longitudinal: f64,
) -> Result<EllipsoidModel, GeometryError> {
    cal.validate()?;
    let a = (cal.right.z - cal.left.z) / 2.0;
    let b = (cal.xiphoid.y - cal.bed.y) / 2.0;
    let center = Vec3::new(
        cal.xiphoid.x,
        (cal.xiphoid.y + cal.bed.y) / 2.0,
        (cal.right.z + cal.left.z) / 2.0,
    );
    EllipsoidModel::new(
        center,
        SemiAxes {
            a,
            b,
            c: longitudinal,
        },
    )
}

pub fn implicit_value(m: &EllipsoidModel, p: &Vec3) -> f64 {
    let u = p - m.center;
    let q = m.inv_shape_diag();
    u.component_mul(&u).dot(&q)
}

/// Outward unit normal of the uniformly scaled ellipsoid passing through `p`.
pub fn surface_normal(m: &EllipsoidModel, p: &Vec3) -> Result<Vec3, GeometryError> {
    let u = p - m.center;
    let n = u.component_mul(&m.inv_shape_diag());
    let norm = n.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(GeometryError::DegeneratePoint);
    }
    Ok(n / norm)
}

/// Signed distance along the outward normal from `p` to the ellipsoid surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    /// Positive when `p` is inside.
    pub depth: f64,
    pub normal: Vec3,
}

/// Solve `(u + d n)^T Q (u + d n) = 1` for `d` and return the root of smaller
/// magnitude, i.e. the near-side intersection.
pub fn penetration_depth(m: &EllipsoidModel, p: &Vec3) -> Result<Penetration, GeometryError> {
    let normal = surface_normal(m, p)?;
    let q = m.inv_shape_diag();
    let u = p - m.center;
    let qn = normal.component_mul(&q);
    let a2 = normal.dot(&qn);
    let half_b = u.dot(&qn);
    let c0 = u.component_mul(&u).dot(&q) - 1.0;

    let disc = half_b * half_b - a2 * c0;
    if disc < 0.0 || !disc.is_finite() {
        return Err(GeometryError::NoIntersection);
    }
    // Stable form: avoid cancellation between half_b and sqrt(disc).
    let sq = disc.sqrt();
    let t = -(half_b + half_b.signum() * sq);
    let (r1, r2) = if t == 0.0 {
        // half_b == 0 and disc == 0: a double root at zero.
        (0.0, 0.0)
    } else {
        (t / a2, c0 / t)
    };
    let depth = if r1.abs() <= r2.abs() { r1 } else { r2 };
    Ok(Penetration { depth, normal })
}

/// Diagonal spring and damper gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// N/m per axis.
    pub kp: [f64; 3],
    /// N·s/m per axis.
    pub kd: [f64; 3],
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            kp: [500.0; 3],
            kd: [5.0; 3],
        }
    }
}

impl ContactParams {
    pub fn uniform(kp: f64, kd: f64) -> Self {
        Self {
            kp: [kp; 3],
            kd: [kd; 3],
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self
            .kp
            .iter()
            .chain(self.kd.iter())
            .any(|g| !g.is_finite() || *g < 0.0)
        {
            return Err(GeometryError::InvalidModel(
                "contact gains must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn kp_vec(&self) -> Vec3 {
        Vec3::from(self.kp)
    }

    pub fn kd_vec(&self) -> Vec3 {
        Vec3::from(self.kd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactResult {
    pub penetrating: bool,
    pub depth: f64,
    pub normal: Vec3,
    pub force: Vec3,
}

/// Spring-damper contact force for a tool at `p` moving with velocity `v`.
/// Zero whenever the tool is not inside the ellipsoid.
pub fn contact_force(
    m: &EllipsoidModel,
    p: &Vec3,
    v: &Vec3,
    params: &ContactParams,
) -> Result<ContactResult, GeometryError> {
    let pen = match penetration_depth(m, p) {
        Ok(pen) => pen,
        Err(GeometryError::NoIntersection) => {
            return Ok(ContactResult {
                penetrating: false,
                depth: NO_INTERSECTION_DEPTH,
                normal: surface_normal(m, p)?,
                force: Vec3::zeros(),
            })
        }
        Err(e) => return Err(e),
    };
    if pen.depth > 0.0 {
        let force = pen.depth * params.kp_vec().component_mul(&pen.normal)
            - params.kd_vec().component_mul(v);
        Ok(ContactResult {
            penetrating: true,
            depth: pen.depth,
            normal: pen.normal,
            force,
        })
    } else {
        Ok(ContactResult {
            penetrating: false,
            depth: pen.depth,
            normal: pen.normal,
            force: Vec3::zeros(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example_cal() -> CalibrationSet {
        CalibrationSet::new(
            Vec3::new(0.5, 0.25, 0.0),
            Vec3::new(0.6, 0.15, -0.15),
            Vec3::new(0.4, 0.15, 0.15),
            Vec3::new(0.9, 0.05, 0.3),
        )
    }

    fn example_model() -> EllipsoidModel {
        fit_ellipsoid(&example_cal()).unwrap()
    }

    // Independent depth oracle: march along +n until the quadratic form
    // crosses 1, then bisect.
    fn bisection_depth(m: &EllipsoidModel, p: &Vec3) -> f64 {
        let n = surface_normal(m, p).unwrap();
        let f = |t: f64| implicit_value(m, &(p + n * t)) - 1.0;
        let (mut lo, mut hi) = (0.0, m.semi_axes.a.min(m.semi_axes.b) * 1e-3);
        while f(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fit_matches_direct_substitution() {
        let m = example_model();
        assert!((m.semi_axes.a - 0.15).abs() < 1e-15);
        assert!((m.semi_axes.b - 0.10).abs() < 1e-15);
        assert_eq!(m.semi_axes.c, 10.0);
        assert!((m.center - Vec3::new(0.5, 0.15, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_width_patient_is_degenerate() {
        let mut cal = example_cal();
        cal.left.z = 0.0;
        cal.right.z = 0.0;
        assert!(matches!(
            fit_ellipsoid(&cal),
            Err(GeometryError::DegenerateCalibration(_))
        ));
        let mut cal = example_cal();
        cal.bed.y = 0.3;
        assert!(matches!(
            fit_ellipsoid(&cal),
            Err(GeometryError::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn short_longitudinal_axis_rejected() {
        assert!(matches!(
            fit_ellipsoid_with(&example_cal(), 0.05),
            Err(GeometryError::InvalidModel(_))
        ));
    }

    #[test]
    fn implicit_value_examples() {
        let m = example_model();
        let b = m.semi_axes.b;
        assert_eq!(implicit_value(&m, &m.center), 0.0);
        assert!((implicit_value(&m, &(m.center + Vec3::new(0.0, b, 0.0))) - 1.0).abs() < 1e-12);
        assert!(
            (implicit_value(&m, &(m.center + Vec3::new(0.0, 2.0 * b, 0.0))) - 4.0).abs() < 1e-12
        );
    }

    #[test]
    fn normal_examples() {
        let m = example_model();
        let b = m.semi_axes.b;
        let n = surface_normal(&m, &(m.center + Vec3::new(0.0, b / 2.0, 0.0))).unwrap();
        assert_eq!(n, Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(
            surface_normal(&m, &m.center),
            Err(GeometryError::DegeneratePoint)
        );
        assert_eq!(
            penetration_depth(&m, &m.center),
            Err(GeometryError::DegeneratePoint)
        );
    }

    #[test]
    fn axis_aligned_depths() {
        let m = example_model();
        let b = m.semi_axes.b;
        let inside = penetration_depth(&m, &(m.center + Vec3::new(0.0, b - 0.01, 0.0))).unwrap();
        assert!((inside.depth - 0.01).abs() < 1e-12);
        assert_eq!(inside.normal, Vec3::new(0.0, 1.0, 0.0));
        let outside = penetration_depth(&m, &(m.center + Vec3::new(0.0, b + 0.01, 0.0))).unwrap();
        assert!((outside.depth + 0.01).abs() < 1e-12);
    }

    #[test]
    fn force_examples() {
        let m = example_model();
        let b = m.semi_axes.b;
        let params = ContactParams::uniform(500.0, 5.0);
        let p = m.center + Vec3::new(0.0, b - 0.01, 0.0);
        let r = contact_force(&m, &p, &Vec3::zeros(), &params).unwrap();
        assert!(r.penetrating);
        assert!((r.force - Vec3::new(0.0, 5.0, 0.0)).norm() < 1e-9);

        let out = m.center + Vec3::new(0.0, b + 0.01, 0.0);
        let r = contact_force(&m, &out, &Vec3::new(3.0, -2.0, 1.0), &params).unwrap();
        assert!(!r.penetrating);
        assert_eq!(r.force, Vec3::zeros());
    }

    #[test]
    fn far_outside_miss_is_non_penetrating() {
        // Very flat ellipsoid, point far out along a diagonal.
        let m = EllipsoidModel::new(
            Vec3::zeros(),
            SemiAxes {
                a: 0.01,
                b: 1.0,
                c: 10.0,
            },
        )
        .unwrap();
        let p = Vec3::new(0.0, 5.0, 5.0);
        let pen = penetration_depth(&m, &p);
        if let Err(e) = pen {
            assert_eq!(e, GeometryError::NoIntersection);
        }
        let r = contact_force(&m, &p, &Vec3::zeros(), &ContactParams::default()).unwrap();
        assert!(!r.penetrating);
        assert_eq!(r.force, Vec3::zeros());
    }

    fn arb_model() -> impl Strategy<Value = EllipsoidModel> {
        (
            -1.0..1.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
            0.05..0.4f64,
            0.03..0.3f64,
        )
            .prop_map(|(x, y, z, a, b)| {
                EllipsoidModel::new(Vec3::new(x, y, z), SemiAxes { a, b, c: 10.0 }).unwrap()
            })
    }

    fn arb_interior(m: EllipsoidModel) -> impl Strategy<Value = (EllipsoidModel, Vec3)> {
        (0.01..0.999f64, -1.0..1.0f64, -1.0..1.0f64, -0.05..0.05f64).prop_map(
            move |(r, s, t, xf)| {
                let dir = Vec3::new(xf, s, t);
                let dir = if dir.norm() < 1e-6 {
                    Vec3::new(0.0, 1.0, 0.0)
                } else {
                    dir.normalize()
                };
                let SemiAxes { a, b, c } = m.semi_axes;
                let scaled = Vec3::new(dir.x * c, dir.y * b, dir.z * a) * r;
                (m, m.center + scaled / dir.norm())
            },
        )
    }

    proptest! {
        #[test]
        fn fit_identities(
            x1 in -1.0..1.0f64, y1 in 0.1..0.5f64,
            zl in -0.4..-0.01f64, zr in 0.01..0.4f64,
            y4 in -0.2..0.09f64, yl in -1.0..1.0f64, yr in -1.0..1.0f64,
            x4 in -1.0..1.0f64, z4 in -1.0..1.0f64,
        ) {
            let cal = CalibrationSet::new(
                Vec3::new(x1, y1, 0.0),
                Vec3::new(0.0, yl, zl),
                Vec3::new(0.0, yr, zr),
                Vec3::new(x4, y4, z4),
            );
            let m = fit_ellipsoid(&cal).unwrap();
            let SemiAxes { a, b, .. } = m.semi_axes;
            prop_assert!((m.center.y - b - y4).abs() <= 1e-12);
            prop_assert!((m.center.y + b - y1).abs() <= 1e-12);
            prop_assert!((m.center.z + a - zr).abs() <= 1e-12);
            prop_assert!((m.center.z - a - zl).abs() <= 1e-12);
            prop_assert_eq!(m.center.x, x1);
        }

        #[test]
        fn depth_matches_bisection((m, p) in arb_model().prop_flat_map(arb_interior)) {
            prop_assume!((p - m.center).norm() > 1e-9);
            let d = penetration_depth(&m, &p).unwrap().depth;
            let oracle = bisection_depth(&m, &p);
            let SemiAxes { a, b, .. } = m.semi_axes;
            prop_assert!((d - oracle).abs() <= 1e-6 * a.min(b), "d={} oracle={}", d, oracle);
        }

        #[test]
        fn surface_consistency(m in arb_model(), dx in -0.5..0.5f64, dy in -0.5..0.5f64, dz in -0.5..0.5f64) {
            let p = m.center + Vec3::new(dx, dy, dz);
            prop_assume!((p - m.center).norm() > 1e-6);
            if let Ok(pen) = penetration_depth(&m, &p) {
                let on = p + pen.normal * pen.depth;
                prop_assert!((implicit_value(&m, &on) - 1.0).abs() <= 1e-9);
                prop_assert_eq!(pen.depth > 0.0, implicit_value(&m, &p) < 1.0);
            } else {
                prop_assert!(implicit_value(&m, &p) > 1.0);
            }
        }

        #[test]
        fn normal_follows_gradient((m, p) in arb_model().prop_flat_map(arb_interior)) {
            prop_assume!((p - m.center).norm() > 1e-4);
            let h = 1e-7;
            let grad = Vec3::from_fn(|i, _| {
                let mut e = Vec3::zeros();
                e[i] = h;
                (implicit_value(&m, &(p + e)) - implicit_value(&m, &(p - e))) / (2.0 * h)
            });
            let n = surface_normal(&m, &p).unwrap();
            prop_assert!((n.norm() - 1.0).abs() <= 1e-9);
            prop_assert!(n.dot(&grad.normalize()) >= 0.999);
        }

        #[test]
        fn force_recomposes(
            (m, p) in arb_model().prop_flat_map(arb_interior),
            v in prop::array::uniform3(-1.0..1.0f64),
            kp in prop::array::uniform3(0.0..2000.0f64),
            kd in prop::array::uniform3(0.0..20.0f64),
        ) {
            prop_assume!((p - m.center).norm() > 1e-9);
            let params = ContactParams { kp, kd };
            let v = Vec3::from(v);
            let r = contact_force(&m, &p, &v, &params).unwrap();
            let pen = penetration_depth(&m, &p).unwrap();
            let expect = Vec3::new(
                pen.depth * kp[0] * pen.normal.x - kd[0] * v.x,
                pen.depth * kp[1] * pen.normal.y - kd[1] * v.y,
                pen.depth * kp[2] * pen.normal.z - kd[2] * v.z,
            );
            prop_assert!(r.penetrating);
            for i in 0..3 {
                prop_assert!((r.force[i] - expect[i]).abs() <= 1e-12);
            }
            let kp_max = kp.iter().cloned().fold(0.0, f64::max);
            let kd_max = kd.iter().cloned().fold(0.0, f64::max);
            prop_assert!(r.force.norm() <= kp_max * pen.depth.max(0.0) + kd_max * v.norm() + 1e-12);
        }
    }

    #[test]
    fn force_vanishes_at_onset() {
        let m = example_model();
        let b = m.semi_axes.b;
        let params = ContactParams::default();
        for eps in [1e-3, 1e-6, 1e-9] {
            let p = m.center + Vec3::new(0.0, b - eps, 0.0);
            let r = contact_force(&m, &p, &Vec3::zeros(), &params).unwrap();
            assert!(r.force.norm() <= 500.0 * eps * (1.0 + 1e-6));
        }
    }
}

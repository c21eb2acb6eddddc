//! Shared domain types: angles, helicopter pose, the keypoint skeleton, the
//! landing-area tolerance box and the per-axis pose error metric.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
    #[error("pose component `{0}` is not finite")]
    NonFinitePose(&'static str),
    #[error("pitch {0} rad is gimbal-degenerate (|pitch| must be < pi/2)")]
    GimbalDegenerate(f64),
    #[error("rotation matrix is not orthonormal")]
    NotOrthonormal,
    #[error("skeleton model is invalid: {0}")]
    InvalidSkeleton(String),
    #[error("landing area tolerance `{0}` must be finite and > 0")]
    InvalidTolerance(&'static str),
}

/// Wraps an angle into `[-pi, pi)`.
///
/// Values already inside the interval are returned bit-for-bit, which makes
/// the function exactly idempotent.
pub fn wrap_angle(theta: f64) -> Result<f64, ModelError> {
    if !theta.is_finite() {
        return Err(ModelError::NonFiniteAngle(theta));
    }
    Ok(wrap(theta))
}

/// Infallible wrap for values already known to be finite.
pub(crate) fn wrap(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let turns = ((theta + PI) / TAU).floor();
    let mut r = theta - TAU * turns;
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r += TAU;
    }
    // Rounding can land exactly on +pi after the correction above.
    if r >= PI {
        r = -PI;
    }
    r
}

/// Rotation angle between two rotation matrices, accurate for tiny angles.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let d = a.transpose() * b;
    let s = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm() * 0.5;
    let c = (d.trace() - 1.0) * 0.5;
    s.atan2(c)
}

/// Max-abs deviation of `RᵀR` from identity.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// 6-DoF helicopter pose in the deck frame (origin at the securing device,
/// x athwartships, y fore-aft, z up).
///
/// Angles follow the intrinsic Z-Y-X convention: `R = Rz(yaw) * Ry(pitch) *
/// Rx(roll)` maps body coordinates into the deck frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct HeliPose {
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

impl TryFrom<RawPose> for HeliPose {
    type Error = ModelError;

    fn try_from(r: RawPose) -> Result<Self, Self::Error> {
        HeliPose::new(r.x, r.y, r.z, r.roll, r.pitch, r.yaw)
    }
}

impl From<HeliPose> for RawPose {
    fn from(p: HeliPose) -> Self {
        RawPose { x: p.x, y: p.y, z: p.z, roll: p.roll, pitch: p.pitch, yaw: p.yaw }
    }
}

impl HeliPose {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Result<Self, ModelError> {
        for (name, v) in [("x", x), ("y", y), ("z", z), ("roll", roll), ("pitch", pitch), ("yaw", yaw)] {
            if !v.is_finite() {
                return Err(ModelError::NonFinitePose(name));
            }
        }
        let pitch = wrap(pitch);
        if pitch.abs() >= PI / 2.0 {
            return Err(ModelError::GimbalDegenerate(pitch));
        }
        Ok(Self { x, y, z, roll: wrap(roll), pitch, yaw: wrap(yaw) })
    }

    /// Level pose at `(x, y, z)` with the given heading.
    pub fn level(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, ModelError> {
        Self::new(x, y, z, 0.0, 0.0, yaw)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn roll(&self) -> f64 {
        self.roll
    }
    pub fn pitch(&self) -> f64 {
        self.pitch
    }
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Body-to-deck rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    /// Inverse of [`HeliPose::rotation`]/[`HeliPose::translation`].
    pub fn from_rotation_translation(r: &Matrix3<f64>, t: &Vector3<f64>) -> Result<Self, ModelError> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinitePose("rotation"));
        }
        if orthonormality_error(r) > 1e-6 || r.determinant() <= 0.0 {
            return Err(ModelError::NotOrthonormal);
        }
        let sp = -r[(2, 0)];
        let cp = r[(2, 1)].hypot(r[(2, 2)]);
        let pitch = sp.atan2(cp);
        if cp < 1e-9 {
            return Err(ModelError::GimbalDegenerate(pitch));
        }
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        Self::new(t.x, t.y, t.z, roll, pitch, yaw)
    }

    /// Transforms a body-frame point into the deck frame.
    pub fn transform_point(&self, p_body: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p_body + self.translation()
    }
}

/// Per-axis absolute pose error: x and y in meters, wrapped yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
}

pub fn pose_error(nominal: &HeliPose, estimated: &HeliPose) -> PoseError {
    PoseError {
        dx: (nominal.x - estimated.x).abs(),
        dy: (nominal.y - estimated.y).abs(),
        dyaw: wrap(nominal.yaw - estimated.yaw).abs(),
    }
}

/// Rectangular landing-area tolerance box in the deck frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DlaSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub tol_x: f64,
    pub tol_y: f64,
    pub tol_yaw: f64,
    /// Heading the helicopter should hold over the securing device.
    #[serde(default)]
    pub yaw_ref: f64,
}

impl Default for DlaSpec {
    fn default() -> Self {
        Self { center_x: 0.0, center_y: 0.0, tol_x: 0.1524, tol_y: 0.1524, tol_yaw: 0.5, yaw_ref: 0.0 }
    }
}

impl DlaSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("tol_x", self.tol_x), ("tol_y", self.tol_y), ("tol_yaw", self.tol_yaw)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidTolerance(name));
            }
        }
        if !(self.center_x.is_finite() && self.center_y.is_finite() && self.yaw_ref.is_finite()) {
            return Err(ModelError::InvalidTolerance("center"));
        }
        Ok(())
    }

    /// Raw (unlatched) inside test.
    pub fn contains(&self, x: f64, y: f64, yaw: f64) -> bool {
        (x - self.center_x).abs() <= self.tol_x
            && (y - self.center_y).abs() <= self.tol_y
            && wrap(yaw - self.yaw_ref).abs() <= self.tol_yaw
    }
}

/// A detected (or simulated) 2D keypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointObservation {
    pub name: String,
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl BoundingBox {
    /// Hull of `points`, each side pushed out by `pad` times the extent.
    pub fn padded_hull(points: impl IntoIterator<Item = (f64, f64)>, pad: f64) -> Option<Self> {
        let mut it = points.into_iter();
        let (u, v) = it.next()?;
        let mut b = BoundingBox { u0: u, v0: v, u1: u, v1: v };
        for (u, v) in it {
            b.u0 = b.u0.min(u);
            b.v0 = b.v0.min(v);
            b.u1 = b.u1.max(u);
            b.v1 = b.v1.max(v);
        }
        let (pu, pv) = ((b.u1 - b.u0) * pad, (b.v1 - b.v0) * pad);
        Some(BoundingBox { u0: b.u0 - pu, v0: b.v0 - pv, u1: b.u1 + pu, v1: b.v1 + pv })
    }

    pub fn width(&self) -> f64 {
        self.u1 - self.u0
    }

    pub fn height(&self) -> f64 {
        self.v1 - self.v0
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.u0 <= u && u <= self.u1 && self.v0 <= v && v <= self.v1
    }

    pub fn is_finite(&self) -> bool {
        [self.u0, self.v0, self.u1, self.v1].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonKeypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SkeletonKeypoint {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

pub const SKELETON_LEN: usize = 19;

/// Canonical keypoint vocabulary, in feature order.
pub const KEYPOINT_NAMES: [&str; SKELETON_LEN] = [
    "nose",
    "cockpit_center",
    "rotor_hub",
    "rotor_tip_fore",
    "rotor_tip_aft",
    "rotor_tip_left",
    "rotor_tip_right",
    "tail_rotor_hub",
    "tail_fin_top",
    "tail_boom_mid",
    "left_main_gear",
    "right_main_gear",
    "tail_gear",
    "left_sponson",
    "right_sponson",
    "engine_housing_fore",
    "engine_housing_aft",
    "left_stabilator",
    "right_stabilator",
];

/// Body frame: origin on the ground-contact plane below the rotor mast,
/// x right, y forward, z up; meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub version: u32,
    pub name: String,
    pub keypoints: Vec<SkeletonKeypoint>,
}

pub const SKELETON_VERSION: u32 = 1;

const BUNDLED_SKELETON: &str = include_str!("../data/skeleton.json");

/// Relative singular-value floor below which a point set is treated as planar.
pub const COPLANARITY_RATIO: f64 = 1e-6;

impl Skeleton {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let skeleton: Skeleton = serde_json::from_str(text).map_err(|e| ModelError::InvalidSkeleton(e.to_string()))?;
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != SKELETON_VERSION {
            return Err(ModelError::InvalidSkeleton(format!("unsupported version {}", self.version)));
        }
        if self.keypoints.len() != SKELETON_LEN {
            return Err(ModelError::InvalidSkeleton(format!(
                "expected {SKELETON_LEN} keypoints, found {}",
                self.keypoints.len()
            )));
        }
        let mut seen = HashSet::new();
        for kp in &self.keypoints {
            if !seen.insert(kp.name.as_str()) {
                return Err(ModelError::InvalidSkeleton(format!("duplicate keypoint `{}`", kp.name)));
            }
            if !(kp.x.is_finite() && kp.y.is_finite() && kp.z.is_finite()) {
                return Err(ModelError::InvalidSkeleton(format!("keypoint `{}` is not finite", kp.name)));
            }
        }
        if !self.is_non_coplanar() {
            return Err(ModelError::InvalidSkeleton("keypoints are coplanar".into()));
        }
        Ok(())
    }

    /// Singular values of the centered coordinate matrix, descending.
    pub fn principal_spread(&self) -> [f64; 3] {
        principal_spread(self.keypoints.iter().map(SkeletonKeypoint::position))
    }

    pub fn is_non_coplanar(&self) -> bool {
        let s = self.principal_spread();
        s[0] > 0.0 && s[2] >= COPLANARITY_RATIO * s[0]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.keypoints.iter().position(|k| k.name == name)
    }

    pub fn points(&self) -> Vec<Vector3<f64>> {
        self.keypoints.iter().map(SkeletonKeypoint::position).collect()
    }
}

/// Singular values (descending) of the centered `n x 3` matrix of `points`.
pub fn principal_spread(points: impl Iterator<Item = Vector3<f64>> + Clone) -> [f64; 3] {
    let n = points.clone().count();
    if n == 0 {
        return [0.0; 3];
    }
    let centroid = points.clone().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// The bundled 19-keypoint helicopter model.
pub fn default_skeleton() -> Result<Skeleton, ModelError> {
    Skeleton::from_json(BUNDLED_SKELETON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_eq!(wrap_angle(TAU).unwrap(), 0.0);
        assert!((wrap_angle(3.5 * PI).unwrap() + 0.5 * PI).abs() < 1e-15);
        assert_eq!(wrap_angle(PI).unwrap(), -PI);
        assert_eq!(wrap_angle(-PI).unwrap(), -PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn pose_error_examples() {
        let a = HeliPose::level(1.0, 2.0, 3.0, 0.4).unwrap();
        assert_eq!(pose_error(&a, &a), PoseError { dx: 0.0, dy: 0.0, dyaw: 0.0 });

        let n = HeliPose::level(0.0, 0.0, 0.0, 3.1).unwrap();
        let e = HeliPose::level(0.0, 0.0, 0.0, -3.1).unwrap();
        let err = pose_error(&n, &e);
        assert_eq!((err.dx, err.dy), (0.0, 0.0));
        assert!((err.dyaw - (TAU - 6.2)).abs() < 1e-12);
        assert!((err.dyaw - 0.08319).abs() < 1e-5);

        let n = HeliPose::level(0.0, 0.0, 0.0, 0.0).unwrap();
        let e = HeliPose::level(0.1524, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(pose_error(&n, &e), PoseError { dx: 0.1524, dy: 0.0, dyaw: 0.0 });
    }

    #[test]
    fn bundled_skeleton() {
        let s = default_skeleton().unwrap();
        assert_eq!(s.keypoints.len(), 19);
        let names: Vec<&str> = s.keypoints.iter().map(|k| k.name.as_str()).collect();
        assert_eq!(names, KEYPOINT_NAMES);
        let unique: HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), 19);
        // Rank of the centered coordinate matrix is 3 by a wide margin.
        let spread = s.principal_spread();
        assert!(spread[2] / spread[0] > 0.1, "{spread:?}");
    }

    #[test]
    fn skeleton_rejects_bad_models() {
        let mut s = default_skeleton().unwrap();
        s.keypoints[1].name = "nose".into();
        assert!(matches!(s.validate(), Err(ModelError::InvalidSkeleton(_))));

        let mut s = default_skeleton().unwrap();
        s.keypoints.pop();
        assert!(s.validate().is_err());

        let mut s = default_skeleton().unwrap();
        for k in &mut s.keypoints {
            k.z = 1.0;
        }
        assert!(s.validate().is_err());

        assert!(Skeleton::from_json("{").is_err());
        assert!(Skeleton::from_json(r#"{"version":1,"name":"x","keypoints":[]}"#).is_err());
    }

    #[test]
    fn gimbal_poses_rejected() {
        assert!(matches!(HeliPose::new(0.0, 0.0, 0.0, 0.0, PI / 2.0, 0.0), Err(ModelError::GimbalDegenerate(_))));
        assert!(HeliPose::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn dla_validation() {
        assert!(DlaSpec::default().validate().is_ok());
        let bad = DlaSpec { tol_x: 0.0, ..DlaSpec::default() };
        assert!(bad.validate().is_err());
    }

    fn angle() -> impl Strategy<Value = f64> {
        -50.0f64..50.0
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(x in -1e6f64..1e6) {
            let w = wrap_angle(x).unwrap();
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((x - w) / TAU).round();
            prop_assert!((x - w - k * TAU).abs() < 1e-9 * x.abs().max(1.0));
        }

        #[test]
        fn pose_error_symmetric_and_periodic(
            x1 in -5.0f64..5.0, y1 in -5.0f64..5.0, a1 in angle(),
            x2 in -5.0f64..5.0, y2 in -5.0f64..5.0, a2 in angle(),
            k in -3i32..3,
        ) {
            let p = HeliPose::level(x1, y1, 0.0, a1).unwrap();
            let q = HeliPose::level(x2, y2, 0.0, a2).unwrap();
            let e1 = pose_error(&p, &q);
            let e2 = pose_error(&q, &p);
            prop_assert_eq!(e1.dx, e2.dx);
            prop_assert_eq!(e1.dy, e2.dy);
            prop_assert!((e1.dyaw - e2.dyaw).abs() < 1e-12);
            prop_assert!(e1.dyaw <= PI);
            let shifted = HeliPose::level(x2, y2, 0.0, a2 + k as f64 * TAU).unwrap();
            prop_assert!((pose_error(&p, &shifted).dyaw - e1.dyaw).abs() < 1e-9);
        }

        #[test]
        fn pose_error_triangle(
            a in angle(), b in angle(), c in angle(),
            xa in -5.0f64..5.0, xb in -5.0f64..5.0, xc in -5.0f64..5.0,
        ) {
            let pa = HeliPose::level(xa, -xa, 0.0, a).unwrap();
            let pb = HeliPose::level(xb, -xb, 0.0, b).unwrap();
            let pc = HeliPose::level(xc, -xc, 0.0, c).unwrap();
            let ab = pose_error(&pa, &pb);
            let bc = pose_error(&pb, &pc);
            let ac = pose_error(&pa, &pc);
            prop_assert!(ac.dx <= ab.dx + bc.dx + 1e-12);
            prop_assert!(ac.dy <= ab.dy + bc.dy + 1e-12);
            prop_assert!(ac.dyaw <= ab.dyaw + bc.dyaw + 1e-12);
        }

        #[test]
        fn rotation_round_trip(
            roll in -3.1f64..3.1, pitch in -1.55f64..1.55, yaw in -3.1f64..3.1,
            x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0,
        ) {
            let p = HeliPose::new(x, y, z, roll, pitch, yaw).unwrap();
            let r = p.rotation();
            prop_assert!(orthonormality_error(&r) < 1e-14);
            let q = HeliPose::from_rotation_translation(&r, &p.translation()).unwrap();
            prop_assert!((q.rotation() - r).amax() < 1e-12);
            prop_assert!(wrap(q.roll() - roll).abs() < 1e-12);
            prop_assert!((q.pitch() - pitch).abs() < 1e-12);
            prop_assert!(wrap(q.yaw() - yaw).abs() < 1e-12);
            prop_assert_eq!(q.translation(), p.translation());
        }
    }
}

//! Pinhole projection and pose recovery from 2D-3D keypoint correspondences.

mod camera;
mod epnp;
mod refine;

pub use camera::{project_point, Camera, CameraExtrinsics, CameraIntrinsics, RigidTransform, BEHIND_EPSILON};
pub use epnp::{epnp_solve, procrustes};
pub use refine::{refine_pose_gn, reprojection_jacobian, reprojection_residuals, RefineOptions, RefineReport};

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::model::{HeliPose, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} m)")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(&'static str),
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("correspondence {0} is not finite")]
    NonFinite(usize),
    #[error("model points are (near-)coplanar: spread ratio {ratio:e}")]
    Coplanar { ratio: f64 },
    #[error("measurement system is rank deficient")]
    RankDeficient,
    #[error("no correspondences")]
    Empty,
    #[error(transparent)]
    Pose(#[from] ModelError),
}

/// A model-frame point paired with its pixel observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub model: Vector3<f64>,
    pub uv: Vector2<f64>,
}

impl Correspondence {
    pub fn new(model: Vector3<f64>, uv: Vector2<f64>) -> Self {
        Self { model, uv }
    }

    pub fn is_finite(&self) -> bool {
        self.model.iter().chain(self.uv.iter()).all(|v| v.is_finite())
    }
}

/// Object pose in the camera frame plus its reprojection RMS (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnPSolution {
    pub pose: RigidTransform,
    pub reproj_rms: f64,
}

/// Root-mean-square pixel residual of `pose` over `corrs`.
pub fn reprojection_error(
    pose: &RigidTransform,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Result<f64, GeometryError> {
    if corrs.is_empty() {
        return Err(GeometryError::Empty);
    }
    let mut sum = 0.0;
    for c in corrs {
        let uv = intr.project(&pose.apply(&c.model))?;
        sum += (uv - c.uv).norm_squared();
    }
    Ok((sum / corrs.len() as f64).sqrt())
}

/// Composes the object-in-camera solution with the camera-in-deck mounting to
/// give the helicopter pose in the deck frame.
pub fn deck_pose_from_camera(sol: &PnPSolution, extr: &CameraExtrinsics) -> Result<HeliPose, GeometryError> {
    let deck_from_object = extr.transform().inverse().compose(&sol.pose);
    Ok(HeliPose::from_rotation_translation(&deck_from_object.rotation, &deck_from_object.translation)?)
}

/// Object-in-camera transform implied by a deck-frame pose.
pub fn camera_from_pose(pose: &HeliPose, extr: &CameraExtrinsics) -> RigidTransform {
    extr.transform().compose(&RigidTransform::new(pose.rotation(), pose.translation()))
}

/// Projection of `R` onto the nearest proper rotation (Frobenius sense).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        // Smallest singular value is last after the descending sort.
        let smallest = (0..3).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
        u.column_mut(smallest).neg_mut();
        r = u * v_t;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_skeleton, rotation_angle_between};

    fn exact_corrs(pose: &RigidTransform, intr: &CameraIntrinsics) -> Vec<Correspondence> {
        default_skeleton()
            .unwrap()
            .points()
            .into_iter()
            .map(|p| Correspondence::new(p, intr.project(&pose.apply(&p)).unwrap()))
            .collect()
    }

    #[test]
    fn reprojection_error_examples() {
        let cam = Camera::pinned();
        let pose = camera_from_pose(&HeliPose::level(0.0, 0.0, 0.5, 0.3).unwrap(), &cam.extrinsics);
        let mut corrs = exact_corrs(&pose, &cam.intrinsics);
        assert_eq!(reprojection_error(&pose, &corrs, &cam.intrinsics).unwrap(), 0.0);

        corrs.truncate(9);
        corrs[4].uv.x += 3.0;
        let rms = reprojection_error(&pose, &corrs, &cam.intrinsics).unwrap();
        assert!((rms - 1.0).abs() < 1e-9, "{rms}");

        // Independent per-point recomputation.
        let mut sum = 0.0;
        for c in &corrs {
            let pc = cam.extrinsics.rotation * (pose_rot(&cam, &c.model)) + cam.extrinsics.translation;
            let du = cam.intrinsics.fx * pc.x / pc.z + cam.intrinsics.cx - c.uv.x;
            let dv = cam.intrinsics.fy * pc.y / pc.z + cam.intrinsics.cy - c.uv.y;
            sum += du * du + dv * dv;
        }
        assert!(((sum / 9.0).sqrt() - rms).abs() < 1e-12);

        assert_eq!(reprojection_error(&pose, &[], &cam.intrinsics), Err(GeometryError::Empty));
    }

    fn pose_rot(_cam: &Camera, p: &Vector3<f64>) -> Vector3<f64> {
        let pose = HeliPose::level(0.0, 0.0, 0.5, 0.3).unwrap();
        pose.transform_point(p)
    }

    #[test]
    fn deck_pose_composition_with_identity() {
        // Overhead camera at the deck origin's vertical, object identity in camera.
        let down = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let extr = CameraExtrinsics::new(down, Vector3::new(0.0, 0.0, 10.0)).unwrap();
        let sol = PnPSolution { pose: RigidTransform::identity(), reproj_rms: 0.0 };
        let pose = deck_pose_from_camera(&sol, &extr).unwrap();
        // Object frame equals camera frame: camera x is deck x, so heading 0,
        // and the object is upside down (roll pi) at the camera center.
        assert!(pose.yaw().abs() < 1e-15);
        assert!((pose.roll().abs() - std::f64::consts::PI).abs() < 1e-15);
        assert!((pose.z() - 10.0).abs() < 1e-15);

        let truth = HeliPose::new(0.4, -0.2, 1.0, 0.01, -0.02, 1.1).unwrap();
        let sol = PnPSolution { pose: camera_from_pose(&truth, &extr), reproj_rms: 0.0 };
        let back = deck_pose_from_camera(&sol, &extr).unwrap();
        assert!(rotation_angle_between(&back.rotation(), &truth.rotation()) < 1e-14);
        assert!((back.translation() - truth.translation()).norm() < 1e-14);
    }

    #[test]
    fn nearest_rotation_is_proper() {
        let m = Matrix3::new(0.9, 0.1, 0.0, -0.1, 1.1, 0.05, 0.0, 0.0, -1.0);
        let r = nearest_rotation(&m);
        assert!(crate::model::orthonormality_error(&r) < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-14);
    }
}

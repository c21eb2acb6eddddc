use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::model::orthonormality_error;

/// Default depth below which a point counts as behind the camera (meters).
pub const BEHIND_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite value"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(0.0 < self.cx && self.cx < self.width && 0.0 < self.cy && self.cy < self.height) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..self.width).contains(&u) && (0.0..self.height).contains(&v)
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    /// Projects a camera-frame point.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if !(p_cam.z > BEHIND_EPSILON) {
            return Err(GeometryError::BehindCamera { depth: p_cam.z });
        }
        Ok(Vector2::new(self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy))
    }
}

/// Rigid transform `p_dst = R * p_src + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Deck-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let e = Self { rotation, translation };
        e.validate()?;
        Ok(e)
    }

    /// Camera at `center` (deck frame) looking along deck `+y`, pitched down
    /// by `pitch_down` radians, image x to deck `+x`.
    pub fn looking_forward(center: Vector3<f64>, pitch_down: f64) -> Result<Self, GeometryError> {
        let (s, c) = pitch_down.sin_cos();
        let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s);
        Self::new(rotation, -(rotation * center))
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidExtrinsics("non-finite value"));
        }
        if orthonormality_error(&self.rotation) > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidExtrinsics("rotation is not a proper orthonormal matrix"));
        }
        if self.center().z <= 0.0 {
            return Err(GeometryError::InvalidExtrinsics("camera is not above the deck"));
        }
        if self.optical_axis().z >= 0.0 {
            return Err(GeometryError::InvalidExtrinsics("deck plane is not in front of the camera"));
        }
        Ok(())
    }

    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }

    /// Camera center in deck coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction in deck coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn to_camera(&self, p_deck: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_deck + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    /// The representative installation: 10 m aft of the landing-area center,
    /// 5 m above the deck, pitched down 20 degrees, 1400 px focal length at
    /// 1280x720.
    pub fn pinned() -> Self {
        let intrinsics =
            CameraIntrinsics { fx: 1400.0, fy: 1400.0, cx: 640.0, cy: 360.0, width: 1280.0, height: 720.0 };
        let extrinsics = CameraExtrinsics::looking_forward(Vector3::new(0.0, -10.0, 5.0), 20f64.to_radians())
            .expect("pinned camera is valid");
        Self { intrinsics, extrinsics }
    }

    pub fn project(&self, p_deck: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        project_point(p_deck, &self.intrinsics, &self.extrinsics)
    }
}

/// Projects a deck-frame point through the camera; points with depth at or
/// below [`BEHIND_EPSILON`] are reported, never projected.
pub fn project_point(
    p_world: &Vector3<f64>,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<Vector2<f64>, GeometryError> {
    intr.project(&extr.to_camera(p_world))
}

use nalgebra::Vector3;

use crate::geometry::Camera;
use crate::model::{wrap, BoundingBox};

/// Deck-frame heading of the viewing ray through pixel `(u, v)`, in the same
/// convention as pose yaw (0 along +y, positive counter-clockwise).
pub fn ray_heading(camera: &Camera, u: f64, v: f64) -> f64 {
    let k = &camera.intrinsics;
    let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let d = camera.extrinsics.rotation.transpose() * d_cam;
    (-d.x).atan2(d.y)
}

/// Heading of the ray through the box center.
pub fn bbox_heading(camera: &Camera, bbox: &BoundingBox) -> f64 {
    ray_heading(camera, 0.5 * (bbox.u0 + bbox.u1), 0.5 * (bbox.v0 + bbox.v1))
}

/// Yaw as seen along the viewing ray: what the keypoint layout inside the
/// box actually encodes.
pub fn relative_yaw(deck_yaw: f64, heading: f64) -> f64 {
    wrap(deck_yaw - heading)
}

pub fn deck_yaw(relative: f64, heading: f64) -> f64 {
    wrap(relative + heading)
}

use super::net::{FEATURES_PER_KEYPOINT, FEATURE_DIM};
use crate::model::{BoundingBox, KeypointObservation, KEYPOINT_NAMES};

/// Smallest bbox extent used for normalization, in pixels.
const MIN_EXTENT: f64 = 1.0;

/// Visible keypoints normalized into the bounding box, in canonical skeleton
/// order: `(u', v', 1)` for visible keypoints and zeros otherwise.
pub fn keypoint_features(observations: &[KeypointObservation], bbox: &BoundingBox) -> Vec<f64> {
    let mut features = vec![0.0; FEATURE_DIM];
    let w = bbox.width().max(MIN_EXTENT);
    let h = bbox.height().max(MIN_EXTENT);
    for obs in observations.iter().filter(|o| o.visible && o.u.is_finite() && o.v.is_finite()) {
        let Some(idx) = KEYPOINT_NAMES.iter().position(|n| *n == obs.name) else { continue };
        let slot = &mut features[idx * FEATURES_PER_KEYPOINT..(idx + 1) * FEATURES_PER_KEYPOINT];
        slot[0] = ((obs.u - bbox.u0) / w).clamp(0.0, 1.0);
        slot[1] = ((obs.v - bbox.v0) / h).clamp(0.0, 1.0);
        slot[2] = 1.0;
    }
    features
}

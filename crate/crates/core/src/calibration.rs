//! Camera extrinsic recalibration from deck paint markings.
//!
//! Markings lie on the deck plane, so the classical 11-parameter DLT is
//! degenerate. Instead a deck-to-image homography is estimated with a
//! Hartley-normalized DLT and decomposed with the known intrinsics; the
//! result is then polished by Gauss-Newton on the marking reprojection error.

use std::collections::HashSet;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    nearest_rotation, refine_pose_gn, Camera, CameraExtrinsics, CameraIntrinsics, Correspondence, GeometryError,
    PnPSolution, RefineOptions,
};
use crate::model::rotation_angle_between;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 4 markings, got {0}")]
    NotEnoughMarkings(usize),
    #[error("marking `{0}` is not finite")]
    NonFinite(String),
    #[error("duplicate marking id `{0}`")]
    DuplicateId(String),
    #[error("markings are collinear")]
    Collinear,
    #[error("homography system is ill-conditioned")]
    IllConditioned,
    #[error("intrinsics matrix is not invertible")]
    SingularIntrinsics,
    #[error("no sign choice puts the camera above the deck looking at it")]
    PhysicallyInvalid,
    #[error("invalid file: {0}")]
    InvalidFile(String),
    #[error("unknown marking id `{0}`")]
    UnknownMarking(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A deck marking with known deck-plane coordinates and its pixel observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DeckMarking {
    pub id: String,
    pub p_deck: Vector2<f64>,
    pub uv: Vector2<f64>,
}

/// Deck-plane to image homography, scaled to unit Frobenius norm with
/// `h33 >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Self {
        let mut m = m / m.norm();
        if m[(2, 2)] < 0.0 {
            m = -m;
        }
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Maps a deck-plane point to pixels; `None` at infinity.
    pub fn apply(&self, p: &Vector2<f64>) -> Option<Vector2<f64>> {
        let h = self.0 * Vector3::new(p.x, p.y, 1.0);
        (h.z.abs() > f64::EPSILON).then(|| Vector2::new(h.x / h.z, h.y / h.z))
    }

    /// `K [r1 r2 t]` for a camera over the deck plane.
    pub fn from_camera(intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Self {
        let r = &extr.rotation;
        let m = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), extr.translation]);
        Self::new(intr.matrix() * m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Smallest singular value of the normalized design matrix.
    pub algebraic_residual: f64,
    /// Mean pixel distance between observed and mapped markings.
    pub mean_transfer_error: f64,
}

fn hartley(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let c = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-300 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn transform2(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let h = t * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}

fn check_markings(markings: &[DeckMarking]) -> Result<(), CalibrationError> {
    if markings.len() < 4 {
        return Err(CalibrationError::NotEnoughMarkings(markings.len()));
    }
    let mut ids = HashSet::new();
    for m in markings {
        if !m.p_deck.iter().chain(m.uv.iter()).all(|v| v.is_finite()) {
            return Err(CalibrationError::NonFinite(m.id.clone()));
        }
        if !ids.insert(m.id.as_str()) {
            return Err(CalibrationError::DuplicateId(m.id.clone()));
        }
    }
    let pts: Vec<Vector2<f64>> = markings.iter().map(|m| m.p_deck).collect();
    let scale = pts.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let area = |a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>| ((b - a).perp(&(c - a))).abs() / (scale * scale);
    if markings.len() == 4 {
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if area(&pts[i], &pts[j], &pts[k]) < 1e-9 {
                return Err(CalibrationError::Collinear);
            }
        }
    } else {
        let n = pts.len() as f64;
        let c = pts.iter().sum::<Vector2<f64>>() / n;
        let mut scatter = nalgebra::Matrix2::zeros();
        for p in &pts {
            let d = p - c;
            scatter += d * d.transpose();
        }
        let ev = scatter.symmetric_eigenvalues();
        let (lo, hi) = (ev.min().max(0.0).sqrt(), ev.max().sqrt());
        if hi == 0.0 || lo < 1e-9 * hi {
            return Err(CalibrationError::Collinear);
        }
    }
    Ok(())
}

/// Hartley-normalized DLT estimate of the deck-to-image homography.
pub fn homography_dlt(markings: &[DeckMarking]) -> Result<HomographyFit, CalibrationError> {
    check_markings(markings)?;
    let t_deck = hartley(markings.iter().map(|m| m.p_deck));
    let t_img = hartley(markings.iter().map(|m| m.uv));

    let n = markings.len();
    // Pad to at least 9 rows so the SVD returns a full 9x9 V.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in markings.iter().enumerate() {
        let p = transform2(&t_deck, &m.p_deck);
        let q = transform2(&t_img, &m.uv);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(CalibrationError::IllConditioned)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[x].total_cmp(&sv[y]));
    let (smallest, second, largest) = (sv[order[0]], sv[order[1]], sv[order[order.len() - 1]]);
    if !(second > 1e-12 * largest) {
        return Err(CalibrationError::IllConditioned);
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_img_inv = t_img.try_inverse().ok_or(CalibrationError::IllConditioned)?;
    let homography = Homography::new(t_img_inv * hn * t_deck);

    let mut transfer = 0.0;
    for m in markings {
        let mapped = homography.apply(&m.p_deck).ok_or(CalibrationError::IllConditioned)?;
        transfer += (mapped - m.uv).norm();
    }
    Ok(HomographyFit { homography, algebraic_residual: smallest, mean_transfer_error: transfer / n as f64 })
}

/// Recovers extrinsics from a deck-plane homography and known intrinsics.
pub fn decompose_homography(h: &Homography, intr: &CameraIntrinsics) -> Result<CameraExtrinsics, CalibrationError> {
    let k_inv = intr.matrix().try_inverse().ok_or(CalibrationError::SingularIntrinsics)?;
    let g = k_inv * h.matrix();
    let (g1, g2, g3) = (g.column(0).into_owned(), g.column(1).into_owned(), g.column(2).into_owned());
    let denom = g1.norm() + g2.norm();
    if !(denom > 0.0) {
        return Err(CalibrationError::IllConditioned);
    }
    let lambda = 2.0 / denom;
    for sign in [1.0, -1.0] {
        let l = sign * lambda;
        let r1 = g1 * l;
        let r2 = g2 * l;
        let r3 = r1.cross(&r2);
        let rotation = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
        let translation = g3 * l;
        let candidate = CameraExtrinsics { rotation, translation };
        if candidate.center().z > 0.0 && candidate.optical_axis().z < 0.0 {
            return Ok(candidate);
        }
    }
    Err(CalibrationError::PhysicallyInvalid)
}

/// Acceptance gate applied to a fresh calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationGate {
    pub max_rms_px: f64,
    pub max_rotation_change_deg: f64,
}

impl Default for RecalibrationGate {
    fn default() -> Self {
        Self { max_rms_px: 2.0, max_rotation_change_deg: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Residual { rms_px: f64 },
    RotationJump { degrees: f64 },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Residual { rms_px } => write!(f, "marking reprojection RMS {rms_px:.3} px exceeds gate"),
            Rejection::RotationJump { degrees } => write!(f, "rotation change {degrees:.3} deg exceeds gate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecalibrationOutcome {
    /// The new extrinsics when accepted, `previous` otherwise.
    pub extrinsics: CameraExtrinsics,
    /// The freshly estimated extrinsics, whether or not accepted.
    pub candidate: CameraExtrinsics,
    pub reprojection_rms: f64,
    pub rotation_change_deg: f64,
    pub translation_change: f64,
    pub rejection: Option<Rejection>,
}

impl RecalibrationOutcome {
    pub fn accepted(&self) -> bool {
        self.rejection.is_none()
    }
}

fn marking_rms(
    markings: &[DeckMarking],
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<f64, GeometryError> {
    let mut sum = 0.0;
    for m in markings {
        let uv = crate::geometry::project_point(&Vector3::new(m.p_deck.x, m.p_deck.y, 0.0), intr, extr)?;
        sum += (uv - m.uv).norm_squared();
    }
    Ok((sum / markings.len() as f64).sqrt())
}

/// Minimizes marking reprojection error starting from `initial`. Falls back
/// to `initial` if the refined mounting is not physically valid.
pub fn refine_extrinsics(
    markings: &[DeckMarking],
    intr: &CameraIntrinsics,
    initial: &CameraExtrinsics,
) -> CameraExtrinsics {
    let corrs: Vec<Correspondence> =
        markings.iter().map(|m| Correspondence::new(Vector3::new(m.p_deck.x, m.p_deck.y, 0.0), m.uv)).collect();
    let start = PnPSolution { pose: initial.transform(), reproj_rms: f64::NAN };
    match refine_pose_gn(&start, &corrs, intr, &RefineOptions::default()) {
        Ok((sol, _)) => {
            CameraExtrinsics::new(nearest_rotation(&sol.pose.rotation), sol.pose.translation).unwrap_or(*initial)
        }
        Err(_) => *initial,
    }
}

/// Re-estimates the camera mounting from marking observations, keeping
/// `previous` unless the fit is tight and the change plausible.
pub fn recalibrate(
    markings: &[DeckMarking],
    intr: &CameraIntrinsics,
    previous: &CameraExtrinsics,
    gate: &RecalibrationGate,
) -> Result<RecalibrationOutcome, CalibrationError> {
    let fit = homography_dlt(markings)?;
    let candidate = refine_extrinsics(markings, intr, &decompose_homography(&fit.homography, intr)?);
    let reprojection_rms = marking_rms(markings, intr, &candidate).unwrap_or(f64::INFINITY);
    let rotation_change_deg = rotation_angle_between(&candidate.rotation, &previous.rotation).to_degrees();
    let translation_change = (candidate.center() - previous.center()).norm();
    let rejection = if !(reprojection_rms < gate.max_rms_px) {
        Some(Rejection::Residual { rms_px: reprojection_rms })
    } else if !(rotation_change_deg < gate.max_rotation_change_deg) {
        Some(Rejection::RotationJump { degrees: rotation_change_deg })
    } else {
        None
    };
    let extrinsics = if rejection.is_none() { candidate } else { *previous };
    Ok(RecalibrationOutcome {
        extrinsics,
        candidate,
        reprojection_rms,
        rotation_change_deg,
        translation_change,
        rejection,
    })
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsRecord {
    /// Row-major deck-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: ExtrinsicsRecord,
}

impl CameraFile {
    pub fn from_camera(camera: &Camera) -> Self {
        let r = camera.extrinsics.rotation;
        let t = camera.extrinsics.translation;
        Self {
            intrinsics: camera.intrinsics,
            extrinsics: ExtrinsicsRecord {
                rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
                translation: [t.x, t.y, t.z],
            },
        }
    }

    pub fn to_camera(&self) -> Result<Camera, CalibrationError> {
        self.intrinsics.validate()?;
        let r = Matrix3::from_row_slice(&self.extrinsics.rotation);
        let t = Vector3::from_column_slice(&self.extrinsics.translation);
        let extrinsics = CameraExtrinsics::new(r, t)?;
        Ok(Camera { intrinsics: self.intrinsics, extrinsics })
    }
}

/// Parses and validates a camera parameter file.
pub fn parse_camera_file(text: &str) -> Result<Camera, CalibrationError> {
    let file: CameraFile = serde_json::from_str(text).map_err(|e| CalibrationError::InvalidFile(e.to_string()))?;
    file.to_camera()
}

pub fn camera_file_json(camera: &Camera) -> String {
    serde_json::to_string_pretty(&CameraFile::from_camera(camera)).expect("camera serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// Known deck-frame positions of the paint markings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkingMap {
    pub markings: Vec<MapEntry>,
}

/// A pixel observation of a marking by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkingObservation {
    pub id: String,
    pub u: f64,
    pub v: f64,
}

const BUNDLED_MARKINGS: &str = include_str!("../data/markings.json");
const BUNDLED_CAMERA: &str = include_str!("../data/camera.json");

impl MarkingMap {
    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let map: MarkingMap = serde_json::from_str(text).map_err(|e| CalibrationError::InvalidFile(e.to_string()))?;
        let mut ids = HashSet::new();
        for m in &map.markings {
            if !(m.x.is_finite() && m.y.is_finite()) {
                return Err(CalibrationError::NonFinite(m.id.clone()));
            }
            if !ids.insert(m.id.as_str()) {
                return Err(CalibrationError::DuplicateId(m.id.clone()));
            }
        }
        Ok(map)
    }

    /// Twelve markings on a grid around the landing area.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_MARKINGS).expect("bundled marking map is valid")
    }

    pub fn get(&self, id: &str) -> Option<&MapEntry> {
        self.markings.iter().find(|m| m.id == id)
    }

    /// Joins observations with their known positions.
    pub fn associate(&self, observations: &[MarkingObservation]) -> Result<Vec<DeckMarking>, CalibrationError> {
        observations
            .iter()
            .map(|o| {
                let entry = self.get(&o.id).ok_or_else(|| CalibrationError::UnknownMarking(o.id.clone()))?;
                Ok(DeckMarking { id: o.id.clone(), p_deck: Vector2::new(entry.x, entry.y), uv: Vector2::new(o.u, o.v) })
            })
            .collect()
    }
}

/// The bundled camera file (the pinned installation geometry).
pub fn bundled_camera() -> Camera {
    parse_camera_file(BUNDLED_CAMERA).expect("bundled camera file is valid")
}

//! EPnP: pose from n >= 6 correspondences through four virtual control
//! points.
//!
//! Model points are written as barycentric combinations of the control
//! points (centroid plus the three principal axes). The camera-frame control
//! points lie in the nullspace of a `2n x 12` measurement matrix; the
//! nullspace coefficients ("betas") are fixed by requiring that pairwise
//! control-point distances match the model. Candidates for nullspace
//! dimension 1, 2 and 3 are refined with Gauss-Newton on the betas, aligned
//! to the model with Procrustes, and the lowest reprojection RMS wins.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use super::{reprojection_error, CameraIntrinsics, Correspondence, GeometryError, PnPSolution, RigidTransform};
use crate::model::COPLANARITY_RATIO;

pub const MIN_CORRESPONDENCES: usize = 6;

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
const BETA_GN_ITERS: usize = 10;

type Kernel = [SVector<f64, 12>; 4];

pub fn epnp_solve(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<PnPSolution, GeometryError> {
    intr.validate()?;
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(GeometryError::NotEnoughPoints { needed: MIN_CORRESPONDENCES, got: corrs.len() });
    }
    if let Some(i) = corrs.iter().position(|c| !c.is_finite()) {
        return Err(GeometryError::NonFinite(i));
    }
    let n = corrs.len();

    let control_world = control_points(corrs)?;
    let alphas = barycentric(corrs, &control_world)?;

    let mut m = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (c, a)) in corrs.iter().zip(&alphas).enumerate() {
        let un = intr.normalize(&c.uv);
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * un.x;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * un.y;
        }
    }
    let kernel = nullspace_basis(m)?;

    let l = distance_constraint_matrix(&kernel);
    let rho = SVector::<f64, 6>::from_iterator(
        PAIRS.iter().map(|&(a, b)| (control_world[a] - control_world[b]).norm_squared()),
    );

    let mut best: Option<PnPSolution> = None;
    for dim in 1..=3 {
        let Some(betas) = initial_betas(dim, &l, &rho) else { continue };
        let betas = refine_betas(betas, &l, &rho);
        let Some(pose) = pose_from_betas(&betas, &kernel, &alphas, corrs) else { continue };
        let Ok(rms) = reprojection_error(&pose, corrs, intr) else { continue };
        // Strict comparison keeps the lower dimension on ties.
        if best.as_ref().is_none_or(|b| rms < b.reproj_rms) {
            best = Some(PnPSolution { pose, reproj_rms: rms });
        }
    }
    best.ok_or(GeometryError::RankDeficient)
}

fn control_points(corrs: &[Correspondence]) -> Result<[Vector3<f64>; 4], GeometryError> {
    let n = corrs.len() as f64;
    let centroid = corrs.iter().fold(Vector3::zeros(), |acc, c| acc + c.model) / n;
    let mut scatter = Matrix3::zeros();
    for c in corrs {
        let d = c.model - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let smallest = eig.eigenvalues[order[2]].max(0.0).sqrt();
    if largest == 0.0 || smallest < COPLANARITY_RATIO * largest {
        let ratio = if largest == 0.0 { 0.0 } else { smallest / largest };
        return Err(GeometryError::Coplanar { ratio });
    }
    let mut cws = [centroid; 4];
    for (k, &axis) in order.iter().enumerate() {
        let scale = (eig.eigenvalues[axis] / n).sqrt();
        cws[k + 1] = centroid + eig.eigenvectors.column(axis).into_owned() * scale;
    }
    Ok(cws)
}

fn barycentric(corrs: &[Correspondence], cws: &[Vector3<f64>; 4]) -> Result<Vec<[f64; 4]>, GeometryError> {
    let basis = Matrix3::from_columns(&[cws[1] - cws[0], cws[2] - cws[0], cws[3] - cws[0]]);
    let inv = basis.try_inverse().ok_or(GeometryError::RankDeficient)?;
    Ok(corrs
        .iter()
        .map(|c| {
            let a = inv * (c.model - cws[0]);
            [1.0 - a.x - a.y - a.z, a.x, a.y, a.z]
        })
        .collect())
}

/// Right singular vectors for the four smallest singular values, smallest
/// first.
fn nullspace_basis(m: DMatrix<f64>) -> Result<Kernel, GeometryError> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::RankDeficient)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    if order.len() < 12 {
        return Err(GeometryError::RankDeficient);
    }
    // The first eight singular values carry the measurements; anything
    // effectively zero there means the correspondences cannot fix a pose.
    if sv[order[4]] <= 1e-12 * sv[order[11]] {
        return Err(GeometryError::RankDeficient);
    }
    let mut kernel = [SVector::<f64, 12>::zeros(); 4];
    for (k, slot) in kernel.iter_mut().enumerate() {
        *slot = SVector::<f64, 12>::from_iterator(v_t.row(order[k]).iter().copied());
    }
    Ok(kernel)
}

fn control_diff(v: &SVector<f64, 12>, a: usize, b: usize) -> Vector3<f64> {
    Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
}

/// Rows: the six control-point pairs. Columns: coefficients of
/// `b11 b12 b22 b13 b23 b33 b14 b24 b34 b44` with `bij = beta_i * beta_j`.
fn distance_constraint_matrix(kernel: &Kernel) -> SMatrix<f64, 6, 10> {
    let mut l = SMatrix::<f64, 6, 10>::zeros();
    for (row, &(a, b)) in PAIRS.iter().enumerate() {
        let d: [Vector3<f64>; 4] = std::array::from_fn(|k| control_diff(&kernel[k], a, b));
        let vals = [
            d[0].dot(&d[0]),
            2.0 * d[0].dot(&d[1]),
            d[1].dot(&d[1]),
            2.0 * d[0].dot(&d[2]),
            2.0 * d[1].dot(&d[2]),
            d[2].dot(&d[2]),
            2.0 * d[0].dot(&d[3]),
            2.0 * d[1].dot(&d[3]),
            2.0 * d[2].dot(&d[3]),
            d[3].dot(&d[3]),
        ];
        for (col, v) in vals.into_iter().enumerate() {
            l[(row, col)] = v;
        }
    }
    l
}

fn least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).ok()
}

fn columns(l: &SMatrix<f64, 6, 10>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(6, cols.len(), |r, c| l[(r, cols[c])])
}

/// Linearized initial guess for nullspace dimension `dim`.
fn initial_betas(dim: usize, l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> Option<[f64; 4]> {
    let rho = DVector::from_iterator(6, rho.iter().copied());
    let mut betas = [0.0; 4];
    match dim {
        1 => {
            // b11 b12 b13 b14
            let b = least_squares(columns(l, &[0, 1, 3, 6]), rho)?;
            let b0 = b[0].abs().sqrt();
            if b0 == 0.0 {
                return None;
            }
            let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
            betas = [b0, sign * b[1] / b0, sign * b[2] / b0, sign * b[3] / b0];
        }
        2 => {
            // b11 b12 b22
            let b = least_squares(columns(l, &[0, 1, 2]), rho)?;
            let (b0, b1) = split_two(b[0], b[2]);
            betas[0] = if b[1] < 0.0 { -b0 } else { b0 };
            betas[1] = b1;
        }
        3 => {
            // b11 b12 b22 b13 b23
            let b = least_squares(columns(l, &[0, 1, 2, 3, 4]), rho)?;
            let (b0, b1) = split_two(b[0], b[2]);
            let b0 = if b[1] < 0.0 { -b0 } else { b0 };
            if b0 == 0.0 {
                return None;
            }
            betas = [b0, b1, b[3] / b0, 0.0];
        }
        _ => unreachable!("nullspace dimensions 1..=3"),
    }
    betas.iter().all(|b| b.is_finite()).then_some(betas)
}

fn split_two(b11: f64, b22: f64) -> (f64, f64) {
    if b11 < 0.0 {
        ((-b11).sqrt(), if b22 < 0.0 { (-b22).sqrt() } else { 0.0 })
    } else {
        (b11.sqrt(), if b22 > 0.0 { b22.sqrt() } else { 0.0 })
    }
}

fn beta_products(b: &[f64; 4]) -> SVector<f64, 10> {
    SVector::<f64, 10>::from_column_slice(&[
        b[0] * b[0],
        b[0] * b[1],
        b[1] * b[1],
        b[0] * b[2],
        b[1] * b[2],
        b[2] * b[2],
        b[0] * b[3],
        b[1] * b[3],
        b[2] * b[3],
        b[3] * b[3],
    ])
}

fn refine_betas(mut betas: [f64; 4], l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>) -> [f64; 4] {
    let cost = |b: &[f64; 4]| (rho - l * beta_products(b)).norm_squared();
    let mut current = cost(&betas);
    for _ in 0..BETA_GN_ITERS {
        let mut jac = SMatrix::<f64, 6, 4>::zeros();
        let residual = rho - l * beta_products(&betas);
        let b = &betas;
        for r in 0..6 {
            let row = l.row(r);
            jac[(r, 0)] = 2.0 * row[0] * b[0] + row[1] * b[1] + row[3] * b[2] + row[6] * b[3];
            jac[(r, 1)] = row[1] * b[0] + 2.0 * row[2] * b[1] + row[4] * b[2] + row[7] * b[3];
            jac[(r, 2)] = row[3] * b[0] + row[4] * b[1] + 2.0 * row[5] * b[2] + row[8] * b[3];
            jac[(r, 3)] = row[6] * b[0] + row[7] * b[1] + row[8] * b[2] + 2.0 * row[9] * b[3];
        }
        let Ok(step) = jac.svd(true, true).solve(&residual, 1e-14) else { break };
        let candidate: [f64; 4] = std::array::from_fn(|k| betas[k] + step[k]);
        let next = cost(&candidate);
        if !next.is_finite() || next > current {
            break;
        }
        betas = candidate;
        let done = next >= current * (1.0 - 1e-12) || step.norm() < 1e-15;
        current = next;
        if done {
            break;
        }
    }
    betas
}

fn pose_from_betas(
    betas: &[f64; 4],
    kernel: &Kernel,
    alphas: &[[f64; 4]],
    corrs: &[Correspondence],
) -> Option<RigidTransform> {
    let mut flat = SVector::<f64, 12>::zeros();
    for (b, v) in betas.iter().zip(kernel) {
        flat += v * *b;
    }
    let ccs: [Vector3<f64>; 4] = std::array::from_fn(|j| Vector3::new(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]));
    let mut pcs: Vec<Vector3<f64>> =
        alphas.iter().map(|a| ccs[0] * a[0] + ccs[1] * a[1] + ccs[2] * a[2] + ccs[3] * a[3]).collect();
    // The kernel's overall sign is arbitrary; points must end up in front.
    let mean_depth: f64 = pcs.iter().map(|p| p.z).sum::<f64>() / pcs.len() as f64;
    if mean_depth < 0.0 {
        pcs.iter_mut().for_each(|p| *p = -*p);
    }
    let model: Vec<Vector3<f64>> = corrs.iter().map(|c| c.model).collect();
    procrustes(&model, &pcs)
}

/// Least-squares rigid alignment `dst ≈ R * src + t` (Kabsch, reflection
/// corrected).
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let rotation = super::nearest_rotation(&h);
    Some(RigidTransform::new(rotation, cd - rotation * cs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Camera;
    use crate::model::{default_skeleton, orthonormality_error, rotation_angle_between};
    use nalgebra::{Rotation3, Vector2};

    fn intrinsics() -> CameraIntrinsics {
        Camera::pinned().intrinsics
    }

    fn project_all(pose: &RigidTransform, pts: &[Vector3<f64>]) -> Vec<Correspondence> {
        let i = intrinsics();
        pts.iter().map(|p| Correspondence::new(*p, i.project(&pose.apply(p)).unwrap())).collect()
    }

    #[test]
    fn identity_rotation_at_fifteen_meters() {
        let pose = RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 15.0));
        let corrs = project_all(&pose, &default_skeleton().unwrap().points());
        let sol = epnp_solve(&corrs, &intrinsics()).unwrap();
        assert!((sol.pose.translation - pose.translation).norm() < 1e-6);
        assert!(rotation_angle_between(&sol.pose.rotation, &pose.rotation) < 1e-8);
        assert!(orthonormality_error(&sol.pose.rotation) < 1e-9);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let pose = RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 15.0));
        let pts = default_skeleton().unwrap().points();
        let corrs = project_all(&pose, &pts);
        assert_eq!(epnp_solve(&corrs[..5], &intrinsics()), Err(GeometryError::NotEnoughPoints { needed: 6, got: 5 }));

        let planar: Vec<Vector3<f64>> = pts.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect();
        let corrs = project_all(&pose, &planar);
        assert!(matches!(epnp_solve(&corrs, &intrinsics()), Err(GeometryError::Coplanar { .. })));

        let mut corrs = project_all(&pose, &pts);
        corrs[3].uv = Vector2::new(f64::NAN, 1.0);
        assert_eq!(epnp_solve(&corrs, &intrinsics()), Err(GeometryError::NonFinite(3)));
    }

    #[test]
    fn handles_generic_rotations() {
        let rot = Rotation3::from_euler_angles(0.7, -0.4, 2.5).into_inner();
        let pose = RigidTransform::new(rot, Vector3::new(0.5, -0.3, 20.0));
        let corrs = project_all(&pose, &default_skeleton().unwrap().points());
        let sol = epnp_solve(&corrs, &intrinsics()).unwrap();
        assert!(sol.reproj_rms < 1e-8, "{}", sol.reproj_rms);
        assert!(rotation_angle_between(&sol.pose.rotation, &rot) < 1e-8);
    }

    #[test]
    fn procrustes_recovers_transform() {
        let rot = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        let t = RigidTransform::new(rot, Vector3::new(1.0, 2.0, 3.0));
        let src = default_skeleton().unwrap().points();
        let dst: Vec<_> = src.iter().map(|p| t.apply(p)).collect();
        let est = procrustes(&src, &dst).unwrap();
        assert!((est.rotation - rot).amax() < 1e-12);
        assert!((est.translation - t.translation).amax() < 1e-12);
    }
}

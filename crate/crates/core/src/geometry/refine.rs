use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SMatrix, SVector, Vector3};

use super::{CameraIntrinsics, Correspondence, GeometryError, PnPSolution, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub max_iters: usize,
    /// Convergence threshold on the norm of the 6-vector update.
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { max_iters: 20, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineReport {
    pub iterations: usize,
    pub converged: bool,
    /// Three consecutive step halvings failed to reduce the cost.
    pub diverged: bool,
    pub initial_rms: f64,
    pub final_rms: f64,
}

const MAX_HALVINGS: usize = 3;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Applies the update `[omega, tau]`: `R <- exp(omega) R`, `t <- t + tau`.
fn apply_update(pose: &RigidTransform, delta: &SVector<f64, 6>) -> RigidTransform {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let tau = Vector3::new(delta[3], delta[4], delta[5]);
    let rotation = Rotation3::new(omega).into_inner() * pose.rotation;
    RigidTransform::new(rotation, pose.translation + tau)
}

/// Stacked `(du, dv)` residuals, projected minus observed.
pub fn reprojection_residuals(
    pose: &RigidTransform,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Result<DVector<f64>, GeometryError> {
    let mut r = DVector::zeros(2 * corrs.len());
    for (i, c) in corrs.iter().enumerate() {
        let uv = intr.project(&pose.apply(&c.model))?;
        r[2 * i] = uv.x - c.uv.x;
        r[2 * i + 1] = uv.y - c.uv.y;
    }
    Ok(r)
}

/// Jacobian of [`reprojection_residuals`] with respect to the left-composed
/// update `[omega, tau]` at zero.
pub fn reprojection_jacobian(
    pose: &RigidTransform,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Result<DMatrix<f64>, GeometryError> {
    let mut jac = DMatrix::zeros(2 * corrs.len(), 6);
    for (i, c) in corrs.iter().enumerate() {
        let rotated = pose.rotation * c.model;
        let pc = rotated + pose.translation;
        if pc.z <= super::BEHIND_EPSILON {
            return Err(GeometryError::BehindCamera { depth: pc.z });
        }
        let iz = 1.0 / pc.z;
        let proj = SMatrix::<f64, 2, 3>::new(
            intr.fx * iz,
            0.0,
            -intr.fx * pc.x * iz * iz,
            0.0,
            intr.fy * iz,
            -intr.fy * pc.y * iz * iz,
        );
        let d_rot = proj * (-skew(&rotated));
        for k in 0..3 {
            jac[(2 * i, k)] = d_rot[(0, k)];
            jac[(2 * i + 1, k)] = d_rot[(1, k)];
            jac[(2 * i, 3 + k)] = proj[(0, k)];
            jac[(2 * i + 1, 3 + k)] = proj[(1, k)];
        }
    }
    Ok(jac)
}

fn cost(pose: &RigidTransform, corrs: &[Correspondence], intr: &CameraIntrinsics) -> f64 {
    match reprojection_residuals(pose, corrs, intr) {
        Ok(r) => r.norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

/// Gauss-Newton minimization of the squared reprojection residuals.
///
/// Steps that fail to reduce the cost are halved; after three failed halvings
/// in a row the run stops with `diverged` set and returns the best pose seen,
/// which is never worse than `initial`.
pub fn refine_pose_gn(
    initial: &PnPSolution,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    opts: &RefineOptions,
) -> Result<(PnPSolution, RefineReport), GeometryError> {
    if corrs.is_empty() {
        return Err(GeometryError::Empty);
    }
    let n = corrs.len() as f64;
    let mut pose = initial.pose;
    let mut current = cost(&pose, corrs, intr);
    if !current.is_finite() {
        return Err(GeometryError::BehindCamera { depth: f64::NAN });
    }
    let initial_rms = (current / n).sqrt();
    let mut report =
        RefineReport { iterations: 0, converged: false, diverged: false, initial_rms, final_rms: initial_rms };

    for iter in 0..opts.max_iters {
        report.iterations = iter + 1;
        let jac = reprojection_jacobian(&pose, corrs, intr)?;
        let r = reprojection_residuals(&pose, corrs, intr)?;
        let jtj: SMatrix<f64, 6, 6> = SMatrix::from_iterator((jac.transpose() * &jac).iter().copied());
        let jtr: SVector<f64, 6> = SVector::from_iterator((jac.transpose() * &r).iter().copied());
        let step = match jtj.cholesky() {
            Some(ch) => -ch.solve(&jtr),
            None => match jtj.svd(true, true).solve(&(-jtr), 1e-14) {
                Ok(s) => s,
                Err(_) => break,
            },
        };
        if step.norm() < opts.tol {
            report.converged = true;
            break;
        }
        let mut scaled = step;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = apply_update(&pose, &scaled);
            let c = cost(&candidate, corrs, intr);
            if c < current {
                pose = candidate;
                current = c;
                accepted = true;
                break;
            }
            scaled *= 0.5;
        }
        if !accepted {
            report.diverged = true;
            break;
        }
    }
    report.final_rms = (current / n).sqrt();
    Ok((PnPSolution { pose, reproj_rms: report.final_rms }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{epnp_solve, Camera};
    use crate::model::{default_skeleton, rotation_angle_between};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn setup(noise: f64, seed: u64) -> (RigidTransform, Vec<Correspondence>, CameraIntrinsics) {
        let intr = Camera::pinned().intrinsics;
        let pose = RigidTransform::new(
            Rotation3::from_euler_angles(0.3, -0.2, 1.0).into_inner(),
            Vector3::new(0.2, 0.1, 14.0),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let corrs = default_skeleton()
            .unwrap()
            .points()
            .into_iter()
            .map(|p| {
                let mut uv = intr.project(&pose.apply(&p)).unwrap();
                if noise > 0.0 {
                    uv.x += normal.sample(&mut rng);
                    uv.y += normal.sample(&mut rng);
                }
                Correspondence::new(p, uv)
            })
            .collect();
        (pose, corrs, intr)
    }

    #[test]
    fn optimal_input_is_a_fixed_point() {
        let (pose, corrs, intr) = setup(0.0, 0);
        let init = PnPSolution { pose, reproj_rms: 0.0 };
        let (out, report) = refine_pose_gn(&init, &corrs, &intr, &RefineOptions::default()).unwrap();
        assert!(report.converged);
        assert!((out.pose.rotation - pose.rotation).amax() < 1e-10);
        assert!((out.pose.translation - pose.translation).amax() < 1e-10);
    }

    #[test]
    fn converges_from_perturbed_start() {
        let (pose, corrs, intr) = setup(0.0, 0);
        let perturbed = apply_update(&pose, &SVector::<f64, 6>::new(0.06, -0.05, 0.06, 0.12, -0.1, 0.12));
        assert!(rotation_angle_between(&perturbed.rotation, &pose.rotation) > 0.09);
        assert!((perturbed.translation - pose.translation).norm() > 0.19);
        let init = PnPSolution { pose: perturbed, reproj_rms: 0.0 };
        let (out, report) = refine_pose_gn(&init, &corrs, &intr, &RefineOptions::default()).unwrap();
        assert!(report.iterations <= 20);
        assert!(rotation_angle_between(&out.pose.rotation, &pose.rotation) < 1e-6);
        assert!((out.pose.translation - pose.translation).norm() < 1e-6);
    }

    #[test]
    fn never_worse_than_epnp_under_noise() {
        for seed in 0..50 {
            let (_, corrs, intr) = setup(2.0, seed);
            let init = epnp_solve(&corrs, &intr).unwrap();
            let (out, report) = refine_pose_gn(&init, &corrs, &intr, &RefineOptions::default()).unwrap();
            assert!(out.reproj_rms <= init.reproj_rms + 1e-12, "seed {seed}");
            assert!((report.initial_rms - init.reproj_rms).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let intr = Camera::pinned().intrinsics;
        let pts = default_skeleton().unwrap().points();
        for _ in 0..100 {
            let rot = Rotation3::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            )
            .into_inner();
            let pose = RigidTransform::new(
                rot,
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(12.0..25.0)),
            );
            let corrs: Vec<_> =
                pts.iter().map(|p| Correspondence::new(*p, nalgebra::Vector2::new(600.0, 300.0))).collect();
            let analytic = reprojection_jacobian(&pose, &corrs, &intr).unwrap();
            let h = 1e-6;
            let mut numeric = DMatrix::zeros(analytic.nrows(), 6);
            for k in 0..6 {
                let mut d = SVector::<f64, 6>::zeros();
                d[k] = h;
                let plus = reprojection_residuals(&apply_update(&pose, &d), &corrs, &intr).unwrap();
                let minus = reprojection_residuals(&apply_update(&pose, &(-d)), &corrs, &intr).unwrap();
                numeric.set_column(k, &((plus - minus) / (2.0 * h)));
            }
            let rel = (&analytic - &numeric).norm() / analytic.norm().max(numeric.norm());
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }
}

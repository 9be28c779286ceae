//! Malliavin covariance matrix, its spectrum, and the smoothing control.
//!
//! Along a frozen trajectory the response to a control `v` is
//! `A v = sum_m w_m J_{t_m,T} sigma v_m` (trapezoidal weights `w_m`), and
//! the Malliavin matrix is the Gram operator of that map,
//!
//! ```text
//! M = A A* = sum_m w_m (J_{t_m,T} sigma)(J_{t_m,T} sigma)^T.
//! ```
//!
//! Because the adjoint flow is the exact transpose of the discrete forward
//! flow, `M` comes out exactly symmetric and positive semidefinite, and the
//! control `v_m = sigma^T J_{t_m,T}^T (M + beta I)^{-1} J_{0,T} xi` steers
//! the linearized system from `xi` to a terminal residual that vanishes
//! (for `beta = 0`) up to rounding. The smallest eigenvalue of `M` is the
//! quantitative non-degeneracy of the noise as seen through the dynamics;
//! its distribution over paths is what [`spectral_tail`] samples.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::OnceLock;

use crate::error::Error;
use crate::model::BilinearModel;
use crate::sde::{simulate, SimConfig, Trajectory};
use crate::stats::linear_fit;
use crate::variational::{node_weight, StepLinearization};
use crate::Result;

/// Relative eigenvalue floor below which an unregularized solve refuses.
pub const CONDITIONING_TOL: f64 = 1e-10;

/// The Malliavin covariance matrix of one trajectory, with its spectrum
/// computed on first use.
#[derive(Debug, Clone)]
pub struct MalliavinMatrix {
    pub matrix: DMatrix<f64>,
    /// Horizon covered by the quadrature.
    pub t: f64,
    /// Grid spacing of the underlying trapezoidal rule.
    pub dt: f64,
    spectrum: OnceLock<Vec<f64>>,
}

impl MalliavinMatrix {
    /// Eigenvalues in ascending order.
    pub fn spectrum(&self) -> &[f64] {
        self.spectrum.get_or_init(|| {
            let eig = self.matrix.clone().symmetric_eigen();
            let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            vals
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.spectrum()[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.spectrum().last().expect("nonempty spectrum")
    }

    /// Largest entrywise deviation from symmetry, as a diagnostic.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0_f64;
        for i in 0..m.nrows() {
            for j in 0..i {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }
}

/// A control on the trajectory grid, one value per node, together with the
/// target direction it was built for and the regularization used.
#[derive(Debug, Clone)]
pub struct ControlPath {
    /// Node values `v_0 .. v_M`, each of length `noise_dim`.
    pub values: Vec<DVector<f64>>,
    /// The direction `xi` the control steers.
    pub xi: DVector<f64>,
    /// Tikhonov parameter used in the inverse (`0` for the plain solve).
    pub beta: f64,
    pub dt: f64,
}

fn step_matrices(model: &BilinearModel, traj: &Trajectory) -> Result<Vec<DMatrix<f64>>> {
    let ops = StepLinearization::new(model, traj)?;
    Ok(traj.states[..traj.steps()]
        .iter()
        .map(|u| ops.matrix_at(u))
        .collect())
}

fn assemble_from_steps(
    model: &BilinearModel,
    traj: &Trajectory,
    ps: &[DMatrix<f64>],
) -> MalliavinMatrix {
    let steps = traj.steps();
    let dt = traj.dt;
    // w_M sigma sigma^T for the final node, then sweep J_{t_m,T} backward.
    let mut m_mat = node_weight(steps, steps, dt) * (&model.sigma * model.sigma.transpose());
    let mut g = DMatrix::identity(model.dim, model.dim);
    for m in (0..steps).rev() {
        g = &g * &ps[m];
        let r = &g * &model.sigma;
        m_mat += node_weight(m, steps, dt) * (&r * r.transpose());
    }
    MalliavinMatrix {
        matrix: m_mat,
        t: traj.t_end(),
        dt,
        spectrum: OnceLock::new(),
    }
}

/// Assembles `M = sum_m w_m (J_{t_m,T} sigma)(J_{t_m,T} sigma)^T` by one
/// backward sweep over the per-step tangent maps.
pub fn assemble_malliavin(model: &BilinearModel, traj: &Trajectory) -> Result<MalliavinMatrix> {
    let ps = step_matrices(model, traj)?;
    Ok(assemble_from_steps(model, traj, &ps))
}

/// Builds the steering control `v_m = sigma^T J_{t_m,T}^T (M + beta I)^{-1}
/// J_{0,T} xi`.
///
/// With `beta = 0` the matrix must be numerically invertible
/// (`lambda_min > CONDITIONING_TOL * lambda_max`); otherwise the error
/// names the offending eigenvalue and suggests a regularization.
pub fn build_control(
    model: &BilinearModel,
    traj: &Trajectory,
    xi: &DVector<f64>,
    beta: f64,
) -> Result<ControlPath> {
    if xi.len() != model.dim {
        return Err(Error::Dimension(format!(
            "target has length {}, model dimension is {}",
            xi.len(),
            model.dim
        )));
    }
    if !(beta >= 0.0) {
        return Err(Error::Invalid(format!(
            "regularization must be nonnegative, got {beta}"
        )));
    }
    let steps = traj.steps();
    let ps = step_matrices(model, traj)?;
    let mal = assemble_from_steps(model, traj, &ps);

    if beta == 0.0 {
        let (lmin, lmax) = (mal.lambda_min(), mal.lambda_max());
        if !(lmin > CONDITIONING_TOL * lmax) {
            return Err(Error::Singular(format!(
                "Malliavin matrix is numerically singular: lambda_min = {lmin:.3e}, \
                 lambda_max = {lmax:.3e}; retry with beta > 0, for example {:.3e}",
                1e-8 * lmax
            )));
        }
    }

    let n = model.dim;
    let regularized = &mal.matrix + beta * DMatrix::identity(n, n);
    let lu = nalgebra::LU::new(regularized);
    let mut target = xi.clone();
    for p in &ps {
        target = p * target;
    }
    let y = lu.solve(&target).ok_or_else(|| {
        Error::Singular("regularized Malliavin matrix failed to factor".into())
    })?;

    let mut values = vec![DVector::zeros(model.noise_dim); steps + 1];
    let mut z = y;
    values[steps] = model.sigma.transpose() * &z;
    for m in (0..steps).rev() {
        z = ps[m].transpose() * z;
        values[m] = model.sigma.transpose() * &z;
    }

    Ok(ControlPath {
        values,
        xi: xi.clone(),
        beta,
        dt: traj.dt,
    })
}

fn check_control_grid(model: &BilinearModel, traj: &Trajectory, v: &ControlPath) -> Result<()> {
    if v.values.len() != traj.steps() + 1 {
        return Err(Error::Dimension(format!(
            "control has {} nodes, trajectory grid has {}",
            v.values.len(),
            traj.steps() + 1
        )));
    }
    if (v.dt - traj.dt).abs() > 1e-12 * traj.dt {
        return Err(Error::Dimension(format!(
            "control step {} does not match trajectory step {}",
            v.dt, traj.dt
        )));
    }
    if let Some(bad) = v.values.iter().find(|vm| vm.len() != model.noise_dim) {
        return Err(Error::Dimension(format!(
            "control values must have length {}, got {}",
            model.noise_dim,
            bad.len()
        )));
    }
    Ok(())
}

/// Integrates the controlled variational equation
/// `d rho/dt + nu A rho + B(U,rho) + B(rho,U) = -sigma v` from
/// `rho(0) = xi` and returns the terminal norm relative to `|xi|`,
/// equivalently `|J_{0,T} xi - response(v)| / |xi|`.
pub fn verify_control(model: &BilinearModel, traj: &Trajectory, v: &ControlPath) -> Result<f64> {
    check_control_grid(model, traj, v)?;
    let steps = traj.steps();
    let ops = StepLinearization::new(model, traj)?;
    let mut rho = v.xi.clone();
    for m in 0..steps {
        rho -= node_weight(m, steps, traj.dt) * (&model.sigma * &v.values[m]);
        rho = ops.step(&traj.states[m], &rho);
    }
    rho -= node_weight(steps, steps, traj.dt) * (&model.sigma * &v.values[steps]);
    let scale = v.xi.norm();
    Ok(if scale > 0.0 { rho.norm() / scale } else { rho.norm() })
}

/// Discrete control energy `sum_m w_m |v_m|^2`, the squared `L^2(0,T)`
/// norm under the same trapezoidal rule the response uses.
pub fn control_cost(v: &ControlPath) -> f64 {
    let steps = v.values.len() - 1;
    v.values
        .iter()
        .enumerate()
        .map(|(m, vm)| node_weight(m, steps, v.dt) * vm.norm_squared())
        .sum()
}

/// Empirical distribution of the smallest Malliavin eigenvalue over
/// independent paths.
#[derive(Debug, Clone)]
pub struct SpectralTailReport {
    /// The thresholds probed, ascending.
    pub eps: Vec<f64>,
    /// `P(lambda_min >= eps)` per threshold, over successful paths.
    pub prob_at_least: Vec<f64>,
    /// Fitted slope of `log(1 - P)` against `log(eps)`, when at least two
    /// thresholds have nonzero failure mass.
    pub tail_exponent: Option<f64>,
    /// Smallest eigenvalue per successful path, in path order.
    pub lambda_mins: Vec<f64>,
    pub failed_paths: usize,
}

/// Samples `lambda_min(M)` over `n_paths` independent trajectories from
/// `u0` and tabulates `P(lambda_min >= eps)` on the given grid. Paths that
/// fail to integrate are excluded and counted.
pub fn spectral_tail(
    model: &BilinearModel,
    u0: &DVector<f64>,
    cfg: &SimConfig,
    n_paths: usize,
    eps_grid: &[f64],
) -> Result<SpectralTailReport> {
    if n_paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Invalid(
            "thresholds must be positive and nonempty".into(),
        ));
    }
    let mut eps: Vec<f64> = eps_grid.to_vec();
    eps.sort_by(|a, b| a.total_cmp(b));

    let outcomes: Vec<Result<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let cfg_p = cfg.clone().with_stream(cfg.stream + p as u64);
            let traj = simulate(model, u0, &cfg_p)?;
            let mal = assemble_malliavin(model, &traj)?;
            Ok(mal.lambda_min())
        })
        .collect();

    let mut lambda_mins = Vec::with_capacity(n_paths);
    let mut failed_paths = 0;
    for outcome in outcomes {
        match outcome {
            Ok(l) => lambda_mins.push(l),
            Err(_) => failed_paths += 1,
        }
    }
    if lambda_mins.is_empty() {
        return Err(Error::Invalid(format!(
            "all {n_paths} paths failed to integrate"
        )));
    }

    let total = lambda_mins.len() as f64;
    let prob_at_least: Vec<f64> = eps
        .iter()
        .map(|&e| lambda_mins.iter().filter(|&&l| l >= e).count() as f64 / total)
        .collect();

    let fit_pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(&prob_at_least)
        .filter(|&(_, &p)| p < 1.0)
        .map(|(&e, &p)| (e.ln(), (1.0 - p).ln()))
        .collect();
    let tail_exponent = if fit_pts.len() >= 2 {
        Some(linear_fit(&fit_pts).0)
    } else {
        None
    };

    Ok(SpectralTailReport {
        eps,
        prob_at_least,
        tail_exponent,
        lambda_mins,
        failed_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_triad;
    use crate::tensor::BilinearTensor;

    fn triad() -> BilinearModel {
        make_triad([1.0, 1.0, -2.0], 1.0, &[0, 1]).unwrap()
    }

    fn run(model: &BilinearModel, dt: f64, t: f64, seed: u64) -> Trajectory {
        let u0 = DVector::from_fn(model.dim, |i, _| 0.4 - 0.2 * i as f64);
        simulate(model, &u0, &SimConfig::new(t, dt).with_seed(seed)).unwrap()
    }

    fn static_full_noise(n: usize) -> BilinearModel {
        BilinearModel::new(
            1.0,
            DMatrix::zeros(n, n),
            BilinearTensor::zeros(n),
            DMatrix::identity(n, n),
        )
        .unwrap()
    }

    #[test]
    fn static_model_gives_sigma_gram_times_horizon() {
        let model = static_full_noise(2);
        let traj = run(&model, 1e-2, 2.0, 3);
        let mal = assemble_malliavin(&model, &traj).unwrap();
        let expected = 2.0 * DMatrix::<f64>::identity(2, 2);
        assert!((&mal.matrix - &expected).norm() <= 1e-12 * expected.norm());
        for l in mal.spectrum() {
            assert!((l - 2.0).abs() <= 1e-12);
        }
        assert_eq!(mal.asymmetry(), 0.0);
    }

    #[test]
    fn spectrum_sums_to_trace() {
        let model = triad();
        let traj = run(&model, 1e-2, 1.0, 5);
        let mal = assemble_malliavin(&model, &traj).unwrap();
        let sum: f64 = mal.spectrum().iter().sum();
        assert!((sum - mal.matrix.trace()).abs() <= 1e-10 * mal.matrix.trace().abs());
    }

    #[test]
    fn on_axis_single_forcing_is_rank_one() {
        // Forced only along the first axis from an on-axis start, the path
        // stays on the axis and the tangent maps never move that column,
        // so M has exactly one nonzero direction.
        let model = make_triad([1.0, 1.0, -2.0], 1.0, &[0]).unwrap();
        let u0 = DVector::from_vec(vec![0.8, 0.0, 0.0]);
        let traj = simulate(&model, &u0, &SimConfig::new(1.0, 1e-2).with_seed(9)).unwrap();
        let mal = assemble_malliavin(&model, &traj).unwrap();
        let spec = mal.spectrum();
        assert!(spec[0].abs() <= 1e-12 * spec[2]);
        assert!(spec[1].abs() <= 1e-12 * spec[2]);
        assert!(spec[2] > 0.0);

        // The kernel is the plane orthogonal to the forced axis.
        let eig = mal.matrix.clone().symmetric_eigen();
        for k in 0..3 {
            let v = eig.eigenvectors.column(k);
            if eig.eigenvalues[k].abs() <= 1e-12 * spec[2] {
                assert!(v[0].abs() < 1e-8, "kernel vector leaks onto the axis");
            } else {
                assert!(v[0].abs() > 1.0 - 1e-8);
            }
        }
    }

    #[test]
    fn gram_identity_holds_for_random_directions() {
        let model = triad();
        let traj = run(&model, 2e-2, 0.6, 7);
        let steps = traj.steps();
        let mal = assemble_malliavin(&model, &traj).unwrap();
        for etaseed in 0..4 {
            let eta = DVector::from_fn(3, |i, _| {
                ((etaseed * 3 + i) as f64 * 0.7).sin() + 0.2
            });
            let quad = mal.matrix.clone() * &eta;
            let lhs = eta.dot(&quad);
            let mut rhs = 0.0;
            for m in 0..=steps {
                let adj = crate::variational::adjoint_flow(&model, &traj, m, steps).unwrap();
                let pulled = model.sigma.transpose() * adj.apply(&eta);
                rhs += node_weight(m, steps, traj.dt) * pulled.norm_squared();
            }
            assert!(
                (lhs - rhs).abs() <= 1e-10 * rhs.max(1e-30),
                "quadratic form {lhs} vs quadrature {rhs}"
            );
        }
    }

    #[test]
    fn quadrature_error_shrinks_under_refinement() {
        let model = triad();
        let u0 = DVector::from_vec(vec![0.4, 0.2, 0.0]);
        let t_end = 0.5;
        let fine_dt = 1.25e-3;
        let cfg = SimConfig::new(t_end, fine_dt).with_seed(31);
        let noise_fine =
            crate::sde::NoisePath::generate(model.noise_dim, cfg.steps(), fine_dt, 31, 0);
        let assemble_at = |factor: usize| {
            let noise = noise_fine.coarsen(factor).unwrap();
            let cfg_c = SimConfig::new(t_end, fine_dt * factor as f64);
            let traj = crate::sde::simulate_with_noise(
                &model,
                &u0,
                &noise,
                cfg_c.scheme,
                cfg_c.blowup_guard,
            )
            .unwrap();
            assemble_malliavin(&model, &traj).unwrap().matrix
        };
        let m1 = assemble_at(1);
        let m2 = assemble_at(2);
        let m4 = assemble_at(4);
        let e2 = (&m2 - &m1).norm();
        let e4 = (&m4 - &m1).norm();
        assert!(e2 < e4, "halving dt should shrink the defect: {e2} vs {e4}");
    }

    #[test]
    fn control_solves_static_case_in_closed_form() {
        let model = static_full_noise(2);
        let traj = run(&model, 1e-2, 2.0, 13);
        let xi = DVector::from_vec(vec![1.0, -0.5]);
        let control = build_control(&model, &traj, &xi, 0.0).unwrap();
        let expected = &xi / 2.0;
        for vm in &control.values {
            assert!((vm - &expected).norm() <= 1e-12);
        }
        let zero = build_control(&model, &traj, &DVector::zeros(2), 0.0).unwrap();
        assert!(zero.values.iter().all(|vm| vm.norm() == 0.0));
    }

    #[test]
    fn control_steers_spanning_triad_to_small_residual() {
        let model = triad();
        let traj = run(&model, 1e-2, 1.0, 17);
        for s in 0..3 {
            let xi = DVector::from_fn(3, |i, _| ((s * 3 + i) as f64 + 0.3).cos());
            let control = build_control(&model, &traj, &xi, 0.0).unwrap();
            let residual = verify_control(&model, &traj, &control).unwrap();
            assert!(residual <= 1e-6, "residual {residual} for draw {s}");
        }
    }

    #[test]
    fn zero_control_residual_is_flow_norm() {
        let model = triad();
        let traj = run(&model, 1e-2, 1.0, 19);
        let xi = DVector::from_vec(vec![0.3, -0.4, 0.9]);
        let control = ControlPath {
            values: vec![DVector::zeros(2); traj.steps() + 1],
            xi: xi.clone(),
            beta: 0.0,
            dt: traj.dt,
        };
        let residual = verify_control(&model, &traj, &control).unwrap();
        let j = crate::variational::jacobian_flow(&model, &traj, 0, traj.steps()).unwrap();
        let expected = j.apply(&xi).norm() / xi.norm();
        assert!((residual - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn singular_matrix_demands_regularization() {
        let model = make_triad([1.0, 1.0, -2.0], 1.0, &[0]).unwrap();
        let u0 = DVector::from_vec(vec![0.8, 0.0, 0.0]);
        let traj = simulate(&model, &u0, &SimConfig::new(1.0, 1e-2).with_seed(23)).unwrap();
        let xi = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let err = build_control(&model, &traj, &xi, 0.0);
        match err {
            Err(Error::Singular(msg)) => assert!(msg.contains("lambda_min")),
            other => panic!("expected singularity error, got {other:?}"),
        }

        // The regularized solve goes through, with the Tikhonov bias bound
        // |residual| <= beta / (lambda_min(M) + beta) * |J xi| / |xi|.
        let mal = assemble_malliavin(&model, &traj).unwrap();
        let beta = 1e-8 * mal.lambda_max();
        let control = build_control(&model, &traj, &xi, beta).unwrap();
        let residual = verify_control(&model, &traj, &control).unwrap();
        let j = crate::variational::jacobian_flow(&model, &traj, 0, traj.steps()).unwrap();
        let bound =
            beta / (mal.lambda_min().max(0.0) + beta) * j.apply(&xi).norm() / xi.norm();
        assert!(residual <= bound + 1e-10, "residual {residual} vs bound {bound}");
    }

    #[test]
    fn cost_is_quadratic_in_the_target() {
        let model = triad();
        let traj = run(&model, 1e-2, 1.0, 29);
        let xi = DVector::from_vec(vec![0.7, 0.1, -0.6]);
        let c1 = control_cost(&build_control(&model, &traj, &xi, 0.0).unwrap());
        let c2 = control_cost(&build_control(&model, &traj, &(2.0 * &xi), 0.0).unwrap());
        assert_eq!(c2, 4.0 * c1);

        let constant = ControlPath {
            values: vec![DVector::from_vec(vec![0.3, -0.4]); traj.steps() + 1],
            xi: xi.clone(),
            beta: 0.0,
            dt: traj.dt,
        };
        assert!((control_cost(&constant) - 0.25 * 1.0).abs() <= 1e-12);
    }

    #[test]
    fn control_is_the_minimal_norm_steering_solution() {
        // Stack the weighted response map into one wide matrix and compare
        // against its pseudo-inverse solution in the weighted norm.
        let model = triad();
        let traj = run(&model, 5e-2, 0.5, 37);
        let steps = traj.steps();
        let d = model.noise_dim;
        let xi = DVector::from_vec(vec![0.2, -1.0, 0.5]);
        let control = build_control(&model, &traj, &xi, 0.0).unwrap();

        let mut design = DMatrix::zeros(3, (steps + 1) * d);
        for m in 0..=steps {
            let j = crate::variational::jacobian_flow(&model, &traj, m, steps).unwrap();
            let w = node_weight(m, steps, traj.dt);
            let block = w.sqrt() * (j.matrix * &model.sigma);
            design.view_mut((0, m * d), (3, d)).copy_from(&block);
        }
        let mut target = xi.clone();
        let whole = crate::variational::jacobian_flow(&model, &traj, 0, steps).unwrap();
        target = whole.matrix * target;
        let tilde = design
            .clone()
            .svd(true, true)
            .solve(&target, 1e-12)
            .expect("pseudo-inverse solve");
        for m in 0..=steps {
            let w = node_weight(m, steps, traj.dt);
            let vm = tilde.rows(m * d, d) / w.sqrt();
            assert!(
                (&control.values[m] - &vm).norm() <= 1e-8 * vm.norm().max(1.0),
                "node {m} disagrees with least squares"
            );
        }
    }

    #[test]
    fn tail_probe_separates_spanning_from_degenerate() {
        let spanning = triad();
        let u0 = DVector::zeros(3);
        let cfg = SimConfig::new(0.5, 1e-2).with_seed(41);
        let eps = [1e-8, 1e-6, 1e-4, 1e-2];
        let report = spectral_tail(&spanning, &u0, &cfg, 64, &eps).unwrap();
        assert_eq!(report.failed_paths, 0);
        assert!(report.prob_at_least[0] >= report.prob_at_least[3]);
        assert!(
            report.prob_at_least[0] > 0.9,
            "tiny thresholds should pass almost surely, got {}",
            report.prob_at_least[0]
        );

        let degenerate = make_triad([1.0, 1.0, -2.0], 1.0, &[0]).unwrap();
        let axis = DVector::from_vec(vec![0.8, 0.0, 0.0]);
        let dreport = spectral_tail(&degenerate, &axis, &cfg, 16, &eps).unwrap();
        assert!(dreport.prob_at_least.iter().all(|&p| p == 0.0));
    }
}

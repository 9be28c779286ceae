//! Occupation measures, generator checks, and long-time behavior probes.
//!
//! The generator of the diffusion acts on a smooth observable as
//!
//! ```text
//! L phi(U) = <F(U), grad phi(U)> + (1/2) sum_k sigma_k^T hess phi(U) sigma_k,
//! ```
//!
//! and a measure is statistically steady exactly when `E[L phi] = 0` for
//! all test observables. The probes here sample that residual from
//! occupation measures, compare ergodic averages across initial
//! conditions, measure mixing gaps between ensembles, and estimate the
//! reachability of small balls. Standard errors for time-correlated
//! sequences use batch means rather than the i.i.d. formula.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Error;
use crate::model::BilinearModel;
use crate::sde::{simulate, NoisePath, SimConfig, Trajectory};
use crate::stats::batch_means;
use crate::variational::StepLinearization;
use crate::Result;

/// Batch count used for time-correlated standard errors.
pub const BATCH_COUNT: usize = 32;

/// Default burn-in as a fraction of the horizon.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;

/// Cap on stored occupation samples; thinning is chosen to respect it.
pub const MAX_STORED_SAMPLES: usize = 100_000;

type ValueFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type GradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type HessFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A scalar observable with optional derivatives, as needed by the
/// generator. Built-ins cover the standard test functions.
pub struct Observable {
    pub name: String,
    value: Box<ValueFn>,
    gradient: Option<Box<GradFn>>,
    hessian: Option<Box<HessFn>>,
}

impl Observable {
    pub fn new(name: impl Into<String>, value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Observable {
            name: name.into(),
            value: Box::new(value),
            gradient: None,
            hessian: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Some(Box::new(hessian));
        self
    }

    /// `|U|^2`.
    pub fn energy(dim: usize) -> Self {
        Observable::new("energy", |u: &DVector<f64>| u.norm_squared())
            .with_gradient(|u| 2.0 * u)
            .with_hessian(move |_| 2.0 * DMatrix::identity(dim, dim))
    }

    /// `<U, e_k>`.
    pub fn coordinate(dim: usize, k: usize) -> Self {
        Observable::new(format!("coordinate_{k}"), move |u: &DVector<f64>| u[k])
            .with_gradient(move |_| {
                let mut g = DVector::zeros(dim);
                g[k] = 1.0;
                g
            })
            .with_hessian(move |_| DMatrix::zeros(dim, dim))
    }

    /// `<Q U, U>` for a square matrix `Q`.
    pub fn quadratic_form(q: DMatrix<f64>) -> Self {
        assert_eq!(q.nrows(), q.ncols());
        let sym = &q + q.transpose();
        let q_val = q.clone();
        let sym_grad = sym.clone();
        Observable::new("quadratic_form", move |u: &DVector<f64>| {
            (&q_val * u).dot(u)
        })
        .with_gradient(move |u| &sym_grad * u)
        .with_hessian(move |_| sym.clone())
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        (self.value)(u)
    }

    pub fn gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.gradient {
            Some(g) => Ok(g(u)),
            None => Err(Error::Invalid(format!(
                "observable '{}' has no gradient",
                self.name
            ))),
        }
    }

    pub fn hessian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.hessian {
            Some(h) => Ok(h(u)),
            None => Err(Error::Invalid(format!(
                "observable '{}' has no hessian",
                self.name
            ))),
        }
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("has_gradient", &self.gradient.is_some())
            .field("has_hessian", &self.hessian.is_some())
            .finish()
    }
}

/// Pointwise generator application `L phi(U)`.
pub fn generator_apply(model: &BilinearModel, phi: &Observable, u: &DVector<f64>) -> Result<f64> {
    let grad = phi.gradient(u)?;
    let hess = phi.hessian(u)?;
    let drift_term = model.eval_drift(u).dot(&grad);
    let mut trace_term = 0.0;
    for k in 0..model.noise_dim {
        let col = model.sigma_col(k);
        trace_term += (&hess * &col).dot(&col);
    }
    Ok(drift_term + 0.5 * trace_term)
}

/// Uniformly weighted post-burn-in samples of one trajectory.
#[derive(Debug, Clone)]
pub struct OccupationMeasure {
    pub samples: Vec<DVector<f64>>,
    pub burn_in: f64,
    pub thinning: usize,
    /// Span of time the retained samples cover.
    pub t_effective: f64,
}

impl OccupationMeasure {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of an arbitrary function under the measure.
    pub fn expect_fn(&self, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
        self.samples.iter().map(&f).sum::<f64>() / self.len() as f64
    }

    pub fn expect(&self, phi: &Observable) -> f64 {
        self.expect_fn(|u| phi.value(u))
    }

    /// Fraction of mass inside the centered ball of radius `r`.
    pub fn ball_mass(&self, r: f64) -> f64 {
        self.expect_fn(|u| if u.norm() <= r { 1.0 } else { 0.0 })
    }
}

/// Extracts the occupation measure of a trajectory: drop the first
/// `burn_in` of time, then keep every `thinning`-th state.
pub fn occupation_measure(
    traj: &Trajectory,
    burn_in: f64,
    thinning: usize,
) -> Result<OccupationMeasure> {
    if !(burn_in >= 0.0) || burn_in >= traj.t_end() {
        return Err(Error::Invalid(format!(
            "burn-in {burn_in} must lie in [0, {})",
            traj.t_end()
        )));
    }
    if thinning == 0 {
        return Err(Error::Invalid("thinning stride must be positive".into()));
    }
    let first = (burn_in / traj.dt).ceil() as usize;
    let samples: Vec<DVector<f64>> = traj.states[first..]
        .iter()
        .step_by(thinning)
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(Error::Invalid("no samples left after burn-in".into()));
    }
    Ok(OccupationMeasure {
        samples,
        burn_in,
        thinning,
        t_effective: traj.t_end() - first as f64 * traj.dt,
    })
}

/// Occupation measure with the default burn-in fraction and a thinning
/// stride chosen to keep at most [`MAX_STORED_SAMPLES`] samples.
pub fn occupation_measure_auto(traj: &Trajectory) -> Result<OccupationMeasure> {
    let burn_in = DEFAULT_BURN_IN_FRACTION * traj.t_end();
    let first = (burn_in / traj.dt).ceil() as usize;
    let remaining = traj.steps() + 1 - first.min(traj.steps());
    let thinning = remaining.div_ceil(MAX_STORED_SAMPLES).max(1);
    occupation_measure(traj, burn_in, thinning)
}

/// Mean of `L phi` under the measure with a batch-means standard error;
/// both should be near zero for a statistically steady sample.
pub fn stationarity_residual(
    model: &BilinearModel,
    measure: &OccupationMeasure,
    phi: &Observable,
) -> Result<(f64, f64)> {
    let values: Result<Vec<f64>> = measure
        .samples
        .iter()
        .map(|u| generator_apply(model, phi, u))
        .collect();
    Ok(batch_means(&values?, BATCH_COUNT))
}

/// Running time average of an observable along a trajectory.
#[derive(Debug, Clone)]
pub struct ErgodicAverage {
    /// `running[m]` is the average over the first `m + 1` post-initial
    /// states.
    pub running: Vec<f64>,
    pub final_value: f64,
    /// Batch-means standard error of the overall average.
    pub standard_error: f64,
}

pub fn ergodic_average(traj: &Trajectory, phi: &Observable) -> ErgodicAverage {
    let values: Vec<f64> = traj.states[1..].iter().map(|u| phi.value(u)).collect();
    let mut running = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (m, v) in values.iter().enumerate() {
        sum += v;
        running.push(sum / (m + 1) as f64);
    }
    let final_value = *running.last().expect("trajectory has at least one step");
    let (_, standard_error) = batch_means(&values, BATCH_COUNT);
    ErgodicAverage {
        running,
        final_value,
        standard_error,
    }
}

/// Pairwise comparison of ensemble means of `phi(U(T))` across initial
/// conditions.
#[derive(Debug, Clone)]
pub struct MixingReport {
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// `gaps[(i, j)] = |means[i] - means[j]|`.
    pub gaps: DMatrix<f64>,
    /// Combined standard error per pair.
    pub gap_errors: DMatrix<f64>,
}

/// Estimates `E phi(U(T, U0_i))` for each initial condition with
/// `n_paths` independent paths each (disjoint noise streams), and returns
/// all pairwise gaps. For models whose law forgets the initial condition,
/// gaps shrink as `T` grows.
pub fn mixing_probe(
    model: &BilinearModel,
    u0_list: &[DVector<f64>],
    phi: &Observable,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<MixingReport> {
    if u0_list.len() < 2 {
        return Err(Error::Invalid(
            "mixing needs at least two initial conditions".into(),
        ));
    }
    if n_paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    let mut means = Vec::with_capacity(u0_list.len());
    let mut ses = Vec::with_capacity(u0_list.len());
    for (i, u0) in u0_list.iter().enumerate() {
        let base = cfg.stream + (i * n_paths) as u64;
        let values: Result<Vec<f64>> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let cfg_p = cfg.clone().with_stream(base + p as u64);
                let traj = simulate(model, u0, &cfg_p)
                    .map_err(|e| Error::PathFailed { path: p, source: Box::new(e) })?;
                Ok(phi.value(traj.terminal()))
            })
            .collect();
        let values = values?;
        let (mean, var) = crate::stats::mean_var(&values);
        means.push(mean);
        ses.push((var / n_paths as f64).sqrt());
    }
    let k = means.len();
    let mut gaps = DMatrix::zeros(k, k);
    let mut gap_errors = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gaps[(i, j)] = (means[i] - means[j]).abs();
            gap_errors[(i, j)] = (ses[i] * ses[i] + ses[j] * ses[j]).sqrt();
        }
    }
    Ok(MixingReport {
        means,
        standard_errors: ses,
        gaps,
        gap_errors,
    })
}

/// Empirical reachability of the small ball `B_eps(0)` from initial
/// conditions spread over `B_R(0)`.
#[derive(Debug, Clone)]
pub struct IrreducibilityReport {
    /// `(initial condition, empirical P(|U(T)| <= eps))` per grid point.
    pub points: Vec<(DVector<f64>, f64)>,
    pub min_probability: f64,
    /// Grid points whose ensemble never hit the ball.
    pub zero_hit_points: usize,
}

/// Deterministic spread of `n_init` points over the centered ball of
/// radius `r`: the origin first, the rest on directions drawn from the
/// counter-based generator with a fixed seed, radii graded toward the
/// boundary. Reproducible across runs and platforms.
fn ball_grid(dim: usize, r: f64, n_init: usize) -> Vec<DVector<f64>> {
    let mut points = Vec::with_capacity(n_init);
    for i in 0..n_init {
        if i == 0 {
            points.push(DVector::zeros(dim));
            continue;
        }
        let raw = crate::rng::normals_at(0x6772_6964, i as u64, 0, dim);
        let mut dir = DVector::from_vec(raw);
        let norm = dir.norm();
        if norm == 0.0 {
            dir[0] = 1.0;
        } else {
            dir /= norm;
        }
        let radius = r * (i as f64 / (n_init - 1).max(1) as f64).powf(1.0 / dim as f64);
        points.push(radius * dir);
    }
    points
}

/// Minimum over a deterministic ball grid of the empirical probability of
/// landing in `B_eps(0)` at time `T`.
pub fn irreducibility_probe(
    model: &BilinearModel,
    r: f64,
    eps: f64,
    cfg: &SimConfig,
    n_paths: usize,
    n_init: usize,
) -> Result<IrreducibilityReport> {
    if !(eps > 0.0) || !(r > 0.0) {
        return Err(Error::Invalid("radii must be positive".into()));
    }
    if n_paths == 0 || n_init == 0 {
        return Err(Error::Invalid(
            "need at least one path and one grid point".into(),
        ));
    }
    let grid = ball_grid(model.dim, r, n_init);
    let mut points = Vec::with_capacity(n_init);
    let mut zero_hit_points = 0;
    for (i, u0) in grid.into_iter().enumerate() {
        let base = cfg.stream + (i * n_paths) as u64;
        let hits: Result<Vec<bool>> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let cfg_p = cfg.clone().with_stream(base + p as u64);
                let traj = simulate(model, &u0, &cfg_p)
                    .map_err(|e| Error::PathFailed { path: p, source: Box::new(e) })?;
                Ok(traj.terminal().norm() <= eps)
            })
            .collect();
        let hits = hits?;
        let prob = hits.iter().filter(|&&h| h).count() as f64 / n_paths as f64;
        if prob == 0.0 {
            zero_hit_points += 1;
        }
        points.push((u0, prob));
    }
    let min_probability = points
        .iter()
        .map(|&(_, p)| p)
        .fold(f64::INFINITY, f64::min);
    Ok(IrreducibilityReport {
        points,
        min_probability,
        zero_hit_points,
    })
}

/// Two estimates of the semigroup derivative `d/d eps E phi(U(T, U0 + eps
/// xi))` and their paired gap.
#[derive(Debug, Clone)]
pub struct GradientProbe {
    /// Monte Carlo mean of `<grad phi(U_T), J_{0,T} xi>`.
    pub jacobian_estimate: f64,
    pub jacobian_se: f64,
    /// Common-random-number finite difference of `phi(U_T)`.
    pub fd_estimate: f64,
    pub fd_se: f64,
    /// Mean of the per-path difference of the two estimators.
    pub gap: f64,
    /// Standard error of the paired difference.
    pub gap_se: f64,
}

/// Compares the Jacobian representation of the semigroup gradient against
/// a finite difference resimulated with the same noise, path by path.
pub fn gradient_probe(
    model: &BilinearModel,
    u0: &DVector<f64>,
    phi: &Observable,
    xi: &DVector<f64>,
    cfg: &SimConfig,
    n_paths: usize,
    eps_fd: f64,
) -> Result<GradientProbe> {
    if n_paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    if !(eps_fd > 0.0) {
        return Err(Error::Invalid("difference step must be positive".into()));
    }
    let shifted0 = u0 + eps_fd * xi;
    let pairs: Result<Vec<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let stream = cfg.stream + p as u64;
            let noise =
                NoisePath::generate(model.noise_dim, cfg.steps(), cfg.dt, cfg.seed, stream);
            let wrap = |e: Error| Error::PathFailed { path: p, source: Box::new(e) };
            let base = crate::sde::simulate_with_noise(
                model,
                u0,
                &noise,
                cfg.scheme,
                cfg.blowup_guard,
            )
            .map_err(wrap)?;
            let shifted = crate::sde::simulate_with_noise(
                model,
                &shifted0,
                &noise,
                cfg.scheme,
                cfg.blowup_guard,
            )
            .map_err(wrap)?;

            let ops = StepLinearization::new(model, &base).map_err(wrap)?;
            let mut rho = xi.clone();
            for u in &base.states[..base.steps()] {
                rho = ops.step(u, &rho);
            }
            let grad = phi.gradient(base.terminal()).map_err(wrap)?;
            let jac = grad.dot(&rho);
            let fd = (phi.value(shifted.terminal()) - phi.value(base.terminal())) / eps_fd;
            Ok((jac, fd))
        })
        .collect();
    let pairs = pairs?;

    let jac: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let fd: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let n = n_paths as f64;
    let (jm, jv) = crate::stats::mean_var(&jac);
    let (fm, fv) = crate::stats::mean_var(&fd);
    let (dm, dv) = crate::stats::mean_var(&diff);
    Ok(GradientProbe {
        jacobian_estimate: jm,
        jacobian_se: (jv / n).sqrt(),
        fd_estimate: fm,
        fd_se: (fv / n).sqrt(),
        gap: dm,
        gap_se: (dv / n).sqrt(),
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

    fn silent_model(dim: usize) -> BilinearModel {
        BilinearModel::new(
            1.0,
            DMatrix::identity(dim, dim),
            BilinearTensor::zeros(dim),
            DMatrix::zeros(dim, 1),
        )
        .unwrap()
    }

    #[test]
    fn builtin_gradients_match_finite_differences() {
        let dim = 3;
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, -0.2, 2.0, 0.1, 0.5, 0.0, 1.5]);
        let u = DVector::from_vec(vec![0.4, -1.1, 0.7]);
        let eps = 1e-6;
        for phi in [
            Observable::energy(dim),
            Observable::coordinate(dim, 1),
            Observable::quadratic_form(q),
        ] {
            let grad = phi.gradient(&u).unwrap();
            for i in 0..dim {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += eps;
                dn[i] -= eps;
                let fd = (phi.value(&up) - phi.value(&dn)) / (2.0 * eps);
                assert!(
                    (fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0),
                    "{}: coordinate {i}",
                    phi.name
                );
            }
            let hess = phi.hessian(&u).unwrap();
            assert!((&hess - hess.transpose()).norm() == 0.0);
        }
    }

    #[test]
    fn generator_on_energy_reduces_to_dissipation_balance() {
        let model = triad();
        let phi = Observable::energy(3);
        for u in [
            DVector::zeros(3),
            DVector::from_vec(vec![1.0, -2.0, 0.5]),
            DVector::from_vec(vec![0.1, 0.2, 0.3]),
        ] {
            let lhs = generator_apply(&model, &phi, &u).unwrap();
            let dissipation = -2.0 * (model.nu * &model.a * &u).dot(&u);
            let noise_input = model.sigma_frobenius_sq();
            assert!((lhs - (dissipation + noise_input)).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
        // At the origin only the noise input remains.
        let at_zero = generator_apply(&model, &phi, &DVector::zeros(3)).unwrap();
        assert_eq!(at_zero, model.sigma_frobenius_sq());
    }

    #[test]
    fn generator_on_coordinates_is_the_drift_component() {
        let model = triad();
        let u = DVector::from_vec(vec![0.7, -0.4, 1.2]);
        let drift = model.eval_drift(&u);
        for k in 0..3 {
            let phi = Observable::coordinate(3, k);
            let l = generator_apply(&model, &phi, &u).unwrap();
            assert!((l - drift[k]).abs() <= 1e-14 * drift[k].abs().max(1.0));
        }
    }

    #[test]
    fn observable_without_derivatives_is_rejected_by_generator() {
        let model = triad();
        let phi = Observable::new("norm", |u: &DVector<f64>| u.norm());
        assert!(matches!(
            generator_apply(&model, &phi, &DVector::zeros(3)),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn occupation_of_silent_origin_is_a_point_mass() {
        let model = silent_model(2);
        let traj = simulate(
            &model,
            &DVector::zeros(2),
            &SimConfig::new(1.0, 1e-2).with_seed(1),
        )
        .unwrap();
        let measure = occupation_measure(&traj, 0.1, 1).unwrap();
        assert!(measure.len() > 0);
        assert_eq!(measure.expect(&Observable::energy(2)), 0.0);
        assert_eq!(measure.ball_mass(1e-12), 1.0);
    }

    #[test]
    fn occupation_mass_bound_holds_on_balls() {
        // Time-averaged mass outside B_R is controlled by the balance of
        // noise input |sigma|^2 and coercive dissipation.
        let model = triad();
        let u0 = DVector::zeros(3);
        let t_end = 400.0;
        let traj = simulate(&model, &u0, &SimConfig::new(t_end, 1e-2).with_seed(2)).unwrap();
        let measure = occupation_measure(&traj, 0.0, 1).unwrap();
        let alpha = model.alpha();
        let sig2 = model.sigma_frobenius_sq();
        for r in [2.0_f64, 4.0] {
            let bound = 1.0 - (sig2 + u0.norm_squared() / t_end) / (2.0 * alpha * r * r);
            let indicator: Vec<f64> = measure
                .samples
                .iter()
                .map(|u| if u.norm() <= r { 1.0 } else { 0.0 })
                .collect();
            let (mass, se) = batch_means(&indicator, BATCH_COUNT);
            assert!(
                mass >= bound - 3.0 * se,
                "R = {r}: mass {mass} below bound {bound} (se {se})"
            );
        }
    }

    #[test]
    fn thinning_preserves_means_of_bounded_observables() {
        let model = triad();
        let traj = simulate(
            &model,
            &DVector::zeros(3),
            &SimConfig::new(200.0, 1e-2).with_seed(3),
        )
        .unwrap();
        let phi = Observable::new("soft", |u: &DVector<f64>| 1.0 / (1.0 + u.norm_squared()));
        let m1 = occupation_measure(&traj, 20.0, 1).unwrap();
        let m2 = occupation_measure(&traj, 20.0, 2).unwrap();
        let v1: Vec<f64> = m1.samples.iter().map(|u| phi.value(u)).collect();
        let v2: Vec<f64> = m2.samples.iter().map(|u| phi.value(u)).collect();
        let (a1, s1) = batch_means(&v1, BATCH_COUNT);
        let (a2, s2) = batch_means(&v2, BATCH_COUNT);
        assert!(
            (a1 - a2).abs() <= 3.0 * (s1 * s1 + s2 * s2).sqrt().max(1e-6),
            "thinning shifted the mean: {a1} vs {a2}"
        );
    }

    #[test]
    fn stationarity_residual_vanishes_at_steady_state() {
        let model = triad();
        let traj = simulate(
            &model,
            &DVector::zeros(3),
            &SimConfig::new(1000.0, 1e-2).with_seed(21),
        )
        .unwrap();
        let measure = occupation_measure(&traj, 100.0, 1).unwrap();
        let (residual, se) = stationarity_residual(&model, &measure, &Observable::energy(3)).unwrap();
        assert!(
            residual.abs() <= 3.0 * se,
            "residual {residual} vs se {se}"
        );
    }

    #[test]
    fn stationarity_residual_flags_a_transient_sample() {
        // Starting far from equilibrium and keeping the whole short
        // window, the generator mean reflects the decay of energy and is
        // significantly negative.
        let model = triad();
        let traj = simulate(
            &model,
            &DVector::from_vec(vec![3.0, 0.0, 0.0]),
            &SimConfig::new(1.0, 1e-2).with_seed(22),
        )
        .unwrap();
        let measure = occupation_measure(&traj, 0.0, 1).unwrap();
        let (residual, se) = stationarity_residual(&model, &measure, &Observable::energy(3)).unwrap();
        assert!(
            residual < -3.0 * se,
            "transient not detected: residual {residual}, se {se}"
        );
    }

    #[test]
    fn ergodic_average_of_one_is_exactly_one() {
        let model = triad();
        let traj = simulate(
            &model,
            &DVector::zeros(3),
            &SimConfig::new(1.0, 1e-2).with_seed(4),
        )
        .unwrap();
        let avg = ergodic_average(&traj, &Observable::new("one", |_| 1.0));
        assert!(avg.running.iter().all(|&r| r == 1.0));
        assert_eq!(avg.final_value, 1.0);
    }

    #[test]
    fn ergodic_average_decays_with_the_deterministic_flow() {
        let model = silent_model(2);
        let u0 = DVector::from_vec(vec![2.0, -1.0]);
        let traj = simulate(&model, &u0, &SimConfig::new(20.0, 1e-2).with_seed(5)).unwrap();
        let avg = ergodic_average(&traj, &Observable::energy(2));
        assert!(avg.final_value < 0.1 * avg.running[9]);
    }

    #[test]
    fn ergodic_averages_forget_the_initial_condition() {
        let model = triad();
        let phi = Observable::energy(3);
        let cfg = SimConfig::new(400.0, 1e-2);
        let from_origin = ergodic_average(
            &simulate(&model, &DVector::zeros(3), &cfg.clone().with_seed(6)).unwrap(),
            &phi,
        );
        let far = DVector::from_vec(vec![3.0, -3.0, 3.0]);
        let from_far = ergodic_average(
            &simulate(&model, &far, &cfg.with_seed(7)).unwrap(),
            &phi,
        );
        let gap = (from_origin.final_value - from_far.final_value).abs();
        let err = (from_origin.standard_error.powi(2) + from_far.standard_error.powi(2)).sqrt();
        assert!(gap <= 4.0 * err, "gap {gap} vs combined error {err}");
    }

    #[test]
    fn mixing_gap_shrinks_with_horizon() {
        let model = triad();
        let u0s = [DVector::zeros(3), DVector::from_vec(vec![3.0, 0.0, 0.0])];
        let phi = Observable::energy(3);
        let short = mixing_probe(&model, &u0s, &phi, &SimConfig::new(0.5, 1e-2).with_seed(8), 600)
            .unwrap();
        let long = mixing_probe(&model, &u0s, &phi, &SimConfig::new(6.0, 1e-2).with_seed(8), 600)
            .unwrap();
        assert!(
            long.gaps[(0, 1)] < short.gaps[(0, 1)],
            "gap did not shrink: {} vs {}",
            long.gaps[(0, 1)],
            short.gaps[(0, 1)]
        );
        assert!(long.gaps[(0, 1)] <= 4.0 * long.gap_errors[(0, 1)].max(1e-3));
    }

    #[test]
    fn identical_initial_conditions_agree_within_noise() {
        let model = triad();
        let u0s = [DVector::zeros(3), DVector::zeros(3)];
        let phi = Observable::energy(3);
        let report =
            mixing_probe(&model, &u0s, &phi, &SimConfig::new(1.0, 1e-2).with_seed(9), 800)
                .unwrap();
        assert!(report.gaps[(0, 1)] <= 3.0 * report.gap_errors[(0, 1)]);
        assert_eq!(report.gaps[(0, 0)], 0.0);
    }

    #[test]
    fn deterministic_contraction_reaches_the_origin_ball() {
        // Without noise every initial state decays exponentially, so the
        // hit probability is identically one once T is large enough.
        let model = silent_model(3);
        let report = irreducibility_probe(
            &model,
            2.0,
            0.1,
            &SimConfig::new(10.0, 1e-2).with_seed(10),
            1,
            7,
        )
        .unwrap();
        assert_eq!(report.min_probability, 1.0);
        assert_eq!(report.zero_hit_points, 0);
    }

    #[test]
    fn spanning_triad_reaches_small_balls_from_everywhere() {
        let model = triad();
        let report = irreducibility_probe(
            &model,
            2.0,
            1.0,
            &SimConfig::new(5.0, 1e-2).with_seed(11),
            200,
            6,
        )
        .unwrap();
        assert!(
            report.min_probability > 0.0,
            "some grid point never reached the ball"
        );
        assert_eq!(report.zero_hit_points, 0);
    }

    #[test]
    fn gradient_probe_is_exact_for_linear_dynamics() {
        let model = BilinearModel::new(
            1.0,
            DMatrix::identity(2, 2),
            BilinearTensor::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let phi = Observable::coordinate(2, 0);
        let xi = DVector::from_vec(vec![1.0, 0.0]);
        let probe = gradient_probe(
            &model,
            &DVector::from_vec(vec![0.5, -0.5]),
            &phi,
            &xi,
            &SimConfig::new(1.0, 1e-2).with_seed(12),
            16,
            1e-5,
        )
        .unwrap();
        assert!(probe.gap.abs() <= 1e-9, "gap {} too large", probe.gap);
        assert!(probe.gap_se <= 1e-9);
        assert!(probe.jacobian_se <= 1e-12, "estimator should be deterministic");
    }

    #[test]
    fn gradient_probe_gap_is_first_order_in_the_difference_step() {
        // With common random numbers the statistical error cancels almost
        // entirely, leaving the finite-difference truncation bias. That
        // bias must scale linearly in the step.
        let model = triad();
        let u0 = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let phi = Observable::energy(3);
        let xi = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let cfg = SimConfig::new(0.5, 1e-2).with_seed(13);
        let coarse = gradient_probe(&model, &u0, &phi, &xi, &cfg, 400, 1e-4).unwrap();
        let fine = gradient_probe(&model, &u0, &phi, &xi, &cfg, 400, 1e-5).unwrap();
        assert!(
            fine.gap.abs() <= 1e-5,
            "fine gap {} exceeds the bias scale",
            fine.gap
        );
        let ratio = coarse.gap / fine.gap;
        assert!(
            (6.0..14.0).contains(&ratio),
            "bias not first order: coarse {} fine {}",
            coarse.gap,
            fine.gap
        );
        assert!(
            (coarse.jacobian_estimate - coarse.fd_estimate).abs()
                <= 3.5 * coarse.gap_se + 1e-4,
            "arms disagree beyond bias plus noise"
        );
    }
}

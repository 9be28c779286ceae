//! Time integration of the bilinear system.
//!
//! Two one-step schemes share the same noise handling:
//!
//! * **Semi-implicit Euler** (the default): the stiff linear part is
//!   treated implicitly, the bilinear term explicitly,
//!   `(I + dt nu A) U_{m+1} = U_m - dt B(U_m, U_m) + sigma dW_m`.
//!   The factorization of `I + dt nu A` is reused across all steps.
//! * **Explicit Euler**: everything explicit. Cheap per step, but subject
//!   to the usual `dt |nu A| < 2` restriction; the trajectory records a
//!   warning flag when that threshold is violated.
//!
//! Both guard against departure to infinity: when `|U|` exceeds the
//! configured bound (or stops being finite) integration aborts with
//! [`Error::BlowUp`] carrying the offending step.
//!
//! Noise comes from the counter-based generator in [`crate::rng`], so a
//! trajectory is a pure function of `(model, u0, config)`, and ensembles
//! are reproducible under any parallel schedule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Error;
use crate::model::BilinearModel;
use crate::rng;
use crate::stats;
use crate::Result;

/// Default blow-up guard on `|U|`.
pub const BLOWUP_GUARD: f64 = 1e8;

/// One-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    SemiImplicit,
    ExplicitEuler,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::SemiImplicit => "semi_implicit",
            Scheme::ExplicitEuler => "explicit_euler",
        }
    }
}

/// Integration parameters. `t_end` is rounded to a whole number of steps.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub seed: u64,
    /// Stream id of the first (or only) path.
    pub stream: u64,
    pub blowup_guard: f64,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        SimConfig {
            t_end,
            dt,
            scheme: Scheme::default(),
            seed: 0,
            stream: 0,
            blowup_guard: BLOWUP_GUARD,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.blowup_guard = guard;
        self
    }

    /// Number of steps the horizon rounds to (at least one).
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::Invalid(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.blowup_guard > 0.0) {
            return Err(Error::Invalid("blow-up guard must be positive".into()));
        }
        Ok(())
    }
}

/// Brownian increments on a uniform grid: row `m` holds `dW_m`, the
/// increment over `[m dt, (m+1) dt)`, one column per noise direction.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub dt: f64,
    /// `steps x d`.
    pub increments: DMatrix<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl NoisePath {
    /// Generates the increments for `(seed, stream)`: step `m` is the
    /// counter block `m`, scaled by `sqrt(dt)`.
    pub fn generate(noise_dim: usize, steps: usize, dt: f64, seed: u64, stream: u64) -> Self {
        let raw = rng::normals_matrix(seed, stream, steps, noise_dim);
        let scale = dt.sqrt();
        let increments =
            DMatrix::from_row_iterator(steps, noise_dim, raw.into_iter().map(|z| z * scale));
        NoisePath {
            dt,
            increments,
            seed,
            stream,
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.increments.ncols()
    }

    /// Increment vector `dW_m`.
    pub fn row(&self, m: usize) -> DVector<f64> {
        self.increments.row(m).transpose()
    }

    /// Sums consecutive groups of `factor` increments, producing the same
    /// Brownian path on a grid `factor` times coarser. Requires `steps` to
    /// be divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::Invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let steps = self.steps() / factor;
        let d = self.noise_dim();
        let mut increments = DMatrix::zeros(steps, d);
        for m in 0..steps {
            for r in 0..factor {
                for c in 0..d {
                    increments[(m, c)] += self.increments[(m * factor + r, c)];
                }
            }
        }
        Ok(NoisePath {
            dt: self.dt * factor as f64,
            increments,
            seed: self.seed,
            stream: self.stream,
        })
    }
}

/// A simulated path on the uniform grid `t_m = m dt`, together with the
/// noise that produced it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub scheme: Scheme,
    /// `steps + 1` states, `states[m] = U(t_m)`.
    pub states: Vec<DVector<f64>>,
    pub noise: NoisePath,
    /// Set when the explicit scheme ran outside its linear stability region.
    pub stability_warning: bool,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }
}

fn spectral_bound_sym(model: &BilinearModel) -> f64 {
    let sym = (&model.a + model.a.transpose()) * (0.5 * model.nu);
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0_f64, f64::max)
}

/// Simulates from `u0`, generating the noise internally. See
/// [`simulate_with_noise`] for supplying a path.
///
/// ```
/// use hypoflow::model::make_triad;
/// use hypoflow::sde::{simulate, SimConfig};
/// use nalgebra::DVector;
///
/// let m = make_triad([1.0, 1.0, -2.0], 1.0, &[0, 1]).unwrap();
/// let cfg = SimConfig::new(1.0, 1e-2).with_seed(7);
/// let traj = simulate(&m, &DVector::zeros(3), &cfg).unwrap();
/// assert_eq!(traj.steps(), 100);
/// ```
pub fn simulate(model: &BilinearModel, u0: &DVector<f64>, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let noise = NoisePath::generate(model.noise_dim, cfg.steps(), cfg.dt, cfg.seed, cfg.stream);
    simulate_with_noise(model, u0, &noise, cfg.scheme, cfg.blowup_guard)
}

/// Integrates the model along a supplied noise path. This is the building
/// block for common-random-number comparisons: perturb `u0`, keep the path.
pub fn simulate_with_noise(
    model: &BilinearModel,
    u0: &DVector<f64>,
    noise: &NoisePath,
    scheme: Scheme,
    blowup_guard: f64,
) -> Result<Trajectory> {
    if u0.len() != model.dim {
        return Err(Error::Dimension(format!(
            "u0 has length {}, model dimension is {}",
            u0.len(),
            model.dim
        )));
    }
    if noise.noise_dim() != model.noise_dim {
        return Err(Error::Dimension(format!(
            "noise has {} directions, model needs {}",
            noise.noise_dim(),
            model.noise_dim
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("u0 contains non-finite entries".into()));
    }
    let dt = noise.dt;
    let steps = noise.steps();
    let n = model.dim;

    let lu = match scheme {
        Scheme::SemiImplicit => {
            let s = DMatrix::identity(n, n) + (dt * model.nu) * &model.a;
            Some(nalgebra::linalg::LU::new(s))
        }
        Scheme::ExplicitEuler => None,
    };
    let stability_warning = match scheme {
        Scheme::ExplicitEuler => dt * spectral_bound_sym(model) >= 2.0,
        Scheme::SemiImplicit => false,
    };

    let mut states = Vec::with_capacity(steps + 1);
    states.push(u0.clone());
    let mut u = u0.clone();
    for m in 0..steps {
        let kick = &model.sigma * noise.row(m);
        let next = match scheme {
            Scheme::SemiImplicit => {
                let rhs = &u - dt * model.b.apply(&u, &u) + kick;
                lu.as_ref()
                    .unwrap()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("I + dt nu A is singular".into()))?
            }
            Scheme::ExplicitEuler => &u + dt * model.eval_drift(&u) + kick,
        };
        let norm = next.norm();
        if !norm.is_finite() || norm > blowup_guard {
            return Err(Error::BlowUp {
                step: m + 1,
                norm,
                guard: blowup_guard,
            });
        }
        states.push(next.clone());
        u = next;
    }
    Ok(Trajectory {
        dt,
        scheme,
        states,
        noise: noise.clone(),
        stability_warning,
    })
}

/// Discrete energy bookkeeping along a path.
#[derive(Debug, Clone)]
pub struct EnergyBalance {
    /// Per-step residual of the pathwise energy identity,
    /// `|U_{m+1}|^2 - |U_m|^2 + 2 dt <nu A U_m, U_m> - |sigma|_F^2 dt
    ///  - 2 <U_m, sigma dW_m>`.
    pub residuals: Vec<f64>,
    /// Accumulated signed contribution of the bilinear term,
    /// `sum_m 2 dt <B(U_m, U_m), U_m>`. Zero up to rounding.
    pub b_term: f64,
    /// Accumulated magnitude `sum_m 2 dt |B(U_m, U_m)| |U_m|`, the natural
    /// scale against which `b_term` is compared.
    pub b_scale: f64,
}

impl EnergyBalance {
    /// Sum of the per-step residuals (the total drift of the identity).
    pub fn total(&self) -> f64 {
        self.residuals.iter().sum()
    }
}

/// Evaluates the discrete energy identity along a trajectory. In the exact
/// dynamics `|U(t)|^2 - |U_0|^2 + 2 int <nu A U, U> - |sigma|_F^2 t` is a
/// martingale and the bilinear term contributes nothing; the per-step
/// residuals measure how far the discretization drifts from that identity,
/// and shrink as `dt` does.
pub fn energy_residual(model: &BilinearModel, traj: &Trajectory) -> EnergyBalance {
    let dt = traj.dt;
    let sig2 = model.sigma_frobenius_sq();
    let mut residuals = Vec::with_capacity(traj.steps());
    let mut b_term = 0.0;
    let mut b_scale = 0.0;
    for m in 0..traj.steps() {
        let u = &traj.states[m];
        let next = &traj.states[m + 1];
        let kick = &model.sigma * traj.noise.row(m);
        let au = model.nu * &model.a * u;
        let r = next.norm_squared() - u.norm_squared() + 2.0 * dt * au.dot(u)
            - sig2 * dt
            - 2.0 * u.dot(&kick);
        residuals.push(r);
        let buu = model.b.apply(u, u);
        b_term += 2.0 * dt * buu.dot(u);
        b_scale += 2.0 * dt * buu.norm() * u.norm();
    }
    EnergyBalance {
        residuals,
        b_term,
        b_scale,
    }
}

/// Terminal-state statistics over an ensemble of independent paths.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub names: Vec<String>,
    /// `per_path[i][j]`: observable `j` on path `i` (stream `base + i`).
    pub per_path: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Standard error of each mean.
    pub std_error: Vec<f64>,
}

impl EnsembleStats {
    /// Empirical quantile (linear interpolation) of observable `j`.
    pub fn quantile(&self, j: usize, q: f64) -> f64 {
        let mut vals: Vec<f64> = self.per_path.iter().map(|row| row[j]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN observable"));
        stats::quantile_sorted(&vals, q)
    }
}

/// Runs `n_paths` independent paths (streams `cfg.stream .. cfg.stream +
/// n_paths`) and evaluates each observable at the terminal state. Paths are
/// integrated in parallel; results are keyed by path index, so the numbers
/// do not depend on the worker count.
pub fn ensemble(
    model: &BilinearModel,
    u0: &DVector<f64>,
    cfg: &SimConfig,
    n_paths: usize,
    observables: &[(&str, &(dyn Fn(&DVector<f64>) -> f64 + Sync))],
) -> Result<EnsembleStats> {
    if n_paths == 0 {
        return Err(Error::Invalid("ensemble needs at least one path".into()));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let cfg_i = SimConfig {
                stream: cfg.stream + i as u64,
                ..cfg.clone()
            };
            let traj = simulate(model, u0, &cfg_i).map_err(|e| Error::PathFailed {
                path: i,
                source: Box::new(e),
            })?;
            Ok(observables.iter().map(|(_, f)| f(traj.terminal())).collect())
        })
        .collect();
    let per_path = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let n_obs = observables.len();
    let mut mean = vec![0.0; n_obs];
    let mut variance = vec![0.0; n_obs];
    let mut std_error = vec![0.0; n_obs];
    for j in 0..n_obs {
        let col: Vec<f64> = per_path.iter().map(|row| row[j]).collect();
        let (m, v) = stats::mean_var(&col);
        mean[j] = m;
        variance[j] = v;
        std_error[j] = (v / col.len() as f64).sqrt();
    }
    Ok(EnsembleStats {
        names: observables.iter().map(|(n, _)| n.to_string()).collect(),
        per_path,
        mean,
        variance,
        std_error,
    })
}

/// Report of [`moment_tail_probe`].
#[derive(Debug, Clone)]
pub struct MomentTailReport {
    pub k_grid: Vec<f64>,
    /// Empirical `P(S >= K/2)` per grid value, where `S` is the pathwise
    /// supremum of `|U|^2 + alpha int_0^t |U|^2 - |sigma|_F^2 t`.
    pub tails: Vec<f64>,
    /// Fitted exponential `exp(intercept - gamma_hat K)` per grid value
    /// (empty when the fit was not possible).
    pub fitted: Vec<f64>,
    /// Decay rate of the fitted exponential, when at least two grid points
    /// had exceedances.
    pub gamma_hat: Option<f64>,
    /// Set when fewer than two grid points had any exceedances.
    pub insufficient_exceedances: bool,
    pub eta: f64,
    /// Empirical `E exp(eta sup_t (|U|^2 + alpha int |U|^2))`.
    pub exp_moment: f64,
    /// Reference value `exp(eta (|u0|^2 + |sigma|_F^2 T))`.
    pub exp_bound: f64,
}

/// Monte Carlo estimate of the tail of the pathwise energy supremum, with a
/// log-linear fit of its decay, plus an empirical exponential moment. The
/// probe reports; it does not pass or fail.
pub fn moment_tail_probe(
    model: &BilinearModel,
    u0: &DVector<f64>,
    cfg: &SimConfig,
    n_paths: usize,
    k_grid: &[f64],
    eta: f64,
) -> Result<MomentTailReport> {
    if k_grid.is_empty() {
        return Err(Error::Invalid("K grid is empty".into()));
    }
    let alpha = {
        let sym = (&model.a + model.a.transpose()) * (0.5 * model.nu);
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    };
    let sig2 = model.sigma_frobenius_sq();

    let sups: Vec<Result<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let cfg_i = SimConfig {
                stream: cfg.stream + i as u64,
                ..cfg.clone()
            };
            let traj = simulate(model, u0, &cfg_i).map_err(|e| Error::PathFailed {
                path: i,
                source: Box::new(e),
            })?;
            let mut integral = 0.0;
            let mut s_comp = f64::NEG_INFINITY;
            let mut s_raw = f64::NEG_INFINITY;
            for m in 0..traj.states.len() {
                let e = traj.states[m].norm_squared();
                let t = traj.time(m);
                s_comp = s_comp.max(e + alpha * integral - sig2 * t);
                s_raw = s_raw.max(e + alpha * integral);
                integral += e * traj.dt;
            }
            Ok((s_comp, s_raw))
        })
        .collect();
    let sups = sups.into_iter().collect::<Result<Vec<_>>>()?;

    let n = n_paths as f64;
    let tails: Vec<f64> = k_grid
        .iter()
        .map(|&k| sups.iter().filter(|&&(s, _)| s >= 0.5 * k).count() as f64 / n)
        .collect();

    let pts: Vec<(f64, f64)> = k_grid
        .iter()
        .zip(&tails)
        .filter(|&(_, &p)| p > 0.0)
        .map(|(&k, &p)| (k, p.ln()))
        .collect();
    let (gamma_hat, fitted) = if pts.len() >= 2 {
        let (slope, intercept) = stats::linear_fit(&pts);
        let fitted = k_grid.iter().map(|&k| (intercept + slope * k).exp()).collect();
        (Some(-slope), fitted)
    } else {
        (None, Vec::new())
    };

    let exp_moment = sups.iter().map(|&(_, s)| (eta * s).exp()).sum::<f64>() / n;
    let exp_bound = (eta * (u0.norm_squared() + sig2 * cfg.t_end)).exp();

    Ok(MomentTailReport {
        k_grid: k_grid.to_vec(),
        tails,
        fitted,
        gamma_hat,
        insufficient_exceedances: pts.len() < 2,
        eta,
        exp_moment,
        exp_bound,
    })
}

//! Linearized flows along a frozen trajectory.
//!
//! For a solved path `U_0..U_M` the first variation `rho(t) = J_{s,t} xi`
//! solves the linear system
//!
//! ```text
//! d rho/dt + nu A rho + B(U, rho) + B(rho, U) = 0,   rho(s) = xi,
//! ```
//!
//! discretized with the same scheme that produced the trajectory, so that
//! `J_{s,t}` is the exact derivative of the discrete flow map. The adjoint
//! is defined as the transpose of the discrete forward operator, which
//! makes the duality pairing exact up to rounding and keeps downstream
//! Gram matrices symmetric by construction. The second variation and the
//! controlled response integrate the same linear system with their
//! respective inhomogeneities.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::model::BilinearModel;
use crate::sde::{Scheme, Trajectory};
use crate::Result;

/// Which way a [`FlowOperator`] maps: forward tangent or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Adjoint,
}

/// A materialized linear flow `J_{s,t}` (or its transpose) between two
/// grid nodes of a trajectory.
#[derive(Debug, Clone)]
pub struct FlowOperator {
    pub matrix: DMatrix<f64>,
    pub s_index: usize,
    pub t_index: usize,
    pub dt: f64,
    pub direction: FlowDirection,
}

impl FlowOperator {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn s_time(&self) -> f64 {
        self.s_index as f64 * self.dt
    }

    pub fn t_time(&self) -> f64 {
        self.t_index as f64 * self.dt
    }
}

/// Per-step linearization shared by the flow builders: applies or
/// materializes the tangent map of one integrator step, with the implicit
/// factor prefactored once.
pub(crate) struct StepLinearization<'a> {
    model: &'a BilinearModel,
    dt: f64,
    scheme: Scheme,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'a> StepLinearization<'a> {
    pub(crate) fn new(model: &'a BilinearModel, traj: &Trajectory) -> Result<Self> {
        let dt = traj.dt;
        let lu = match traj.scheme {
            Scheme::SemiImplicit => {
                let n = model.dim;
                let s = DMatrix::identity(n, n) + dt * model.nu * &model.a;
                let lu = nalgebra::LU::new(s);
                if !lu.is_invertible() {
                    return Err(Error::Singular(
                        "implicit step matrix I + dt nu A is singular".into(),
                    ));
                }
                Some(lu)
            }
            Scheme::ExplicitEuler => None,
        };
        Ok(StepLinearization {
            model,
            dt,
            scheme: traj.scheme,
            lu,
        })
    }

    /// The tangent map of one step at state `u`, as a dense matrix.
    pub(crate) fn matrix_at(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.model.dim;
        let d = self.model.b.grad_matrix(u);
        match self.scheme {
            Scheme::SemiImplicit => {
                let k = DMatrix::identity(n, n) - self.dt * d;
                self.lu
                    .as_ref()
                    .expect("semi-implicit factor present")
                    .solve(&k)
                    .expect("factor checked invertible")
            }
            Scheme::ExplicitEuler => {
                DMatrix::identity(n, n) - self.dt * self.model.nu * &self.model.a - self.dt * d
            }
        }
    }

    /// One tangent step with an extra inhomogeneity: advances `rho` by the
    /// linearized step at `u` while adding `-dt * f` inside the step, the
    /// discrete counterpart of a forcing term on the right-hand side.
    pub(crate) fn step_forced(
        &self,
        u: &DVector<f64>,
        rho: &DVector<f64>,
        f: &DVector<f64>,
    ) -> DVector<f64> {
        let coupled = self.model.b.grad_apply(u, rho);
        match self.scheme {
            Scheme::SemiImplicit => {
                let rhs = rho - self.dt * coupled - self.dt * f;
                self.lu
                    .as_ref()
                    .expect("semi-implicit factor present")
                    .solve(&rhs)
                    .expect("factor checked invertible")
            }
            Scheme::ExplicitEuler => {
                rho - self.dt * (self.model.nu * &self.model.a * rho)
                    - self.dt * coupled
                    - self.dt * f
            }
        }
    }

    pub(crate) fn step(&self, u: &DVector<f64>, rho: &DVector<f64>) -> DVector<f64> {
        self.step_forced(u, rho, &DVector::zeros(self.model.dim))
    }
}

fn check_window(traj: &Trajectory, s: usize, t: usize) -> Result<()> {
    if s > t || t > traj.steps() {
        return Err(Error::IndexOutOfRange(format!(
            "flow window [{s}, {t}] outside trajectory grid 0..={}",
            traj.steps()
        )));
    }
    Ok(())
}

/// Builds `J_{s,t}` as the ordered product of per-step tangent maps.
pub fn jacobian_flow(
    model: &BilinearModel,
    traj: &Trajectory,
    s_index: usize,
    t_index: usize,
) -> Result<FlowOperator> {
    check_window(traj, s_index, t_index)?;
    let ops = StepLinearization::new(model, traj)?;
    let mut j = DMatrix::identity(model.dim, model.dim);
    for m in s_index..t_index {
        j = ops.matrix_at(&traj.states[m]) * j;
    }
    Ok(FlowOperator {
        matrix: j,
        s_index,
        t_index,
        dt: traj.dt,
        direction: FlowDirection::Forward,
    })
}

/// The adjoint flow: the transpose of the discrete forward operator, so
/// `<J xi, eta> = <xi, J* eta>` holds to rounding.
pub fn adjoint_flow(
    model: &BilinearModel,
    traj: &Trajectory,
    s_index: usize,
    t_index: usize,
) -> Result<FlowOperator> {
    let forward = jacobian_flow(model, traj, s_index, t_index)?;
    Ok(FlowOperator {
        matrix: forward.matrix.transpose(),
        s_index,
        t_index,
        dt: traj.dt,
        direction: FlowDirection::Adjoint,
    })
}

/// Second variation `J^{(2)}_{s,t}(xi, xi2)`: the mixed second derivative
/// of the discrete flow map. Integrates the tangent system with forcing
/// `-(B(J xi, J xi2) + B(J xi2, J xi))` and zero initial data while
/// carrying both first variations along.
pub fn second_variation(
    model: &BilinearModel,
    traj: &Trajectory,
    s_index: usize,
    t_index: usize,
    xi: &DVector<f64>,
    xi2: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_window(traj, s_index, t_index)?;
    if xi.len() != model.dim || xi2.len() != model.dim {
        return Err(Error::Dimension(format!(
            "directions must have length {}",
            model.dim
        )));
    }
    let ops = StepLinearization::new(model, traj)?;
    let mut a = xi.clone();
    let mut b = xi2.clone();
    let mut rho2 = DVector::zeros(model.dim);
    for m in s_index..t_index {
        let u = &traj.states[m];
        let forcing = model.b.apply(&a, &b) + model.b.apply(&b, &a);
        rho2 = ops.step_forced(u, &rho2, &forcing);
        a = ops.step(u, &a);
        b = ops.step(u, &b);
    }
    Ok(rho2)
}

/// Trapezoidal node weights on `0..=steps`: half weight at both ends.
pub(crate) fn node_weight(m: usize, steps: usize, dt: f64) -> f64 {
    if m == 0 || m == steps {
        0.5 * dt
    } else {
        dt
    }
}

/// Response to a control: the quadrature `sum_m w_m J_{t_m,T} sigma v_m`
/// over the whole grid, computed by one forward sweep. This is the
/// discrete version of integrating
/// `d rho/dt + nu A rho + B(U,rho) + B(rho,U) = sigma v` from zero.
///
/// `v` holds one control value per grid node (`steps + 1` of them, each of
/// length `noise_dim`).
pub fn controlled_response(
    model: &BilinearModel,
    traj: &Trajectory,
    v: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let steps = traj.steps();
    if v.len() != steps + 1 {
        return Err(Error::Dimension(format!(
            "control has {} nodes, trajectory grid has {}",
            v.len(),
            steps + 1
        )));
    }
    if let Some(bad) = v.iter().find(|vm| vm.len() != model.noise_dim) {
        return Err(Error::Dimension(format!(
            "control values must have length {}, got {}",
            model.noise_dim,
            bad.len()
        )));
    }
    let ops = StepLinearization::new(model, traj)?;
    let mut rho = DVector::zeros(model.dim);
    for m in 0..steps {
        let w = node_weight(m, steps, traj.dt);
        rho += w * (&model.sigma * &v[m]);
        rho = ops.step(&traj.states[m], &rho);
    }
    rho += node_weight(steps, steps, traj.dt) * (&model.sigma * &v[steps]);
    Ok(rho)
}

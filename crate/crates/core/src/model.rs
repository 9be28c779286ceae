//! The model type and its structural validation.
//!
//! A [`BilinearModel`] bundles the viscosity `nu`, the linear operator `A`,
//! the interaction tensor `B`, and the noise matrix `sigma` whose columns
//! are the forced directions. The drift used everywhere in this crate is
//!
//! ```text
//! F(U) = -(nu * A U + B(U, U)),
//! ```
//!
//! so that coercivity of `nu * A` pulls the state back toward the origin.
//!
//! Validation checks the two structural conditions the rest of the crate
//! relies on: the symmetric part of `nu * A` must be positive definite
//! (coercivity constant `alpha`), and the tensor must satisfy the
//! cancellation identity `B[i][j][k] + B[k][j][i] = 0`, which is equivalent
//! to `<B(V, U), U> = 0` for all `V, U`.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::tensor::BilinearTensor;
use crate::Result;

/// Coercivity is accepted when `alpha > COERCIVITY_REL_TOL * |nu * A|_2`.
pub const COERCIVITY_REL_TOL: f64 = 1e-10;

/// Largest tolerated entrywise violation of the cancellation identity.
pub const CANCELLATION_TOL: f64 = 1e-12;

/// Finite-dimensional bilinear system `dU + (nu A U + B(U,U)) dt = sigma dW`.
#[derive(Debug, Clone)]
pub struct BilinearModel {
    /// State dimension `N`.
    pub dim: usize,
    /// Number of driving Brownian motions `d`.
    pub noise_dim: usize,
    /// Viscosity-like prefactor of the linear part, `nu > 0`.
    pub nu: f64,
    /// Linear operator, `N x N`. The drift uses `nu * A`.
    pub a: DMatrix<f64>,
    /// Interaction tensor.
    pub b: BilinearTensor,
    /// Noise matrix, `N x d`; column `k` is the direction forced by `W^k`.
    pub sigma: DMatrix<f64>,
}

/// Outcome of one structural check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    /// Numerical witness for the check (constant, violation, ...).
    pub value: f64,
    pub detail: String,
}

/// Report produced by [`validate_model`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Smallest eigenvalue of the symmetric part of `nu * A`.
    pub alpha: f64,
    /// `max |B[i][j][k] + B[k][j][i]|` over all index triples.
    pub cancellation_max_violation: f64,
    pub checks: Vec<Check>,
    /// True when every individual check passed.
    pub ok: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl BilinearModel {
    /// Builds a model from parts, checking only shape consistency and
    /// finiteness. Structural conditions are the job of [`validate_model`].
    pub fn new(
        nu: f64,
        a: DMatrix<f64>,
        b: BilinearTensor,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let dim = a.nrows();
        if a.ncols() != dim {
            return Err(Error::Dimension(format!(
                "A must be square, got {} x {}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.dim() != dim {
            return Err(Error::Dimension(format!(
                "tensor dimension {} does not match A ({dim})",
                b.dim()
            )));
        }
        if sigma.nrows() != dim {
            return Err(Error::Dimension(format!(
                "sigma has {} rows, expected {dim}",
                sigma.nrows()
            )));
        }
        if !nu.is_finite() || nu <= 0.0 {
            return Err(Error::Invalid(format!("nu must be positive, got {nu}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("A contains non-finite entries".into()));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("sigma contains non-finite entries".into()));
        }
        Ok(BilinearModel {
            dim,
            noise_dim: sigma.ncols(),
            nu,
            a,
            b,
            sigma,
        })
    }

    /// Drift `F(U) = -(nu A U + B(U, U))`.
    pub fn eval_drift(&self, u: &DVector<f64>) -> DVector<f64> {
        -(self.nu * &self.a * u + self.b.apply(u, u))
    }

    /// Coercivity constant: smallest eigenvalue of `sym(nu * A)`.
    pub fn alpha(&self) -> f64 {
        let sym = (&self.a + self.a.transpose()) * (0.5 * self.nu);
        let eig = sym.symmetric_eigen();
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Squared Frobenius norm of the noise matrix, `sum_k |sigma_k|^2`.
    pub fn sigma_frobenius_sq(&self) -> f64 {
        self.sigma.iter().map(|v| v * v).sum()
    }

    /// Column `k` of the noise matrix.
    pub fn sigma_col(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.sigma.column(k).as_slice())
    }
}

/// Runs all structural checks and returns a report.
///
/// The checks are: finite entries everywhere, `nu > 0`, coercivity of the
/// symmetric part of `nu * A` (via a symmetric eigensolve, accepted when the
/// smallest eigenvalue exceeds `COERCIVITY_REL_TOL` relative to the spectral
/// radius), and the entrywise cancellation identity with absolute tolerance
/// `CANCELLATION_TOL`.
pub fn validate_model(model: &BilinearModel) -> ValidationReport {
    let mut checks = Vec::new();

    let finite = model.a.iter().all(|v| v.is_finite())
        && model.sigma.iter().all(|v| v.is_finite())
        && model.nu.is_finite()
        && model.b.nonzeros().iter().all(|&(_, _, _, v)| v.is_finite());
    checks.push(Check {
        name: "finite_entries",
        ok: finite,
        value: if finite { 0.0 } else { f64::NAN },
        detail: String::new(),
    });

    let nu_ok = model.nu > 0.0;
    checks.push(Check {
        name: "nu_positive",
        ok: nu_ok,
        value: model.nu,
        detail: String::new(),
    });

    let sym = (&model.a + model.a.transpose()) * (0.5 * model.nu);
    let eig = sym.symmetric_eigen();
    let alpha = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let spectral = eig
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0_f64, f64::max);
    let coercive = alpha > COERCIVITY_REL_TOL * spectral.max(1.0);
    checks.push(Check {
        name: "coercivity",
        ok: coercive,
        value: alpha,
        detail: format!("alpha = {alpha:.6e}, |sym(nu A)|_2 = {spectral:.6e}"),
    });

    let violation = model.b.cancellation_max_violation();
    let cancel_ok = violation <= CANCELLATION_TOL;
    checks.push(Check {
        name: "cancellation",
        ok: cancel_ok,
        value: violation,
        detail: format!("max |B[i][j][k] + B[k][j][i]| = {violation:.6e}"),
    });

    let ok = checks.iter().all(|c| c.ok);
    ValidationReport {
        alpha,
        cancellation_max_violation: violation,
        checks,
        ok,
    }
}

/// Three-mode interaction model on `R^3`.
///
/// The quadratic term is `B(U, U) = (c_1 U_2 U_3, c_2 U_3 U_1, c_3 U_1 U_2)`
/// with interaction coefficients summing to zero, so the nonlinearity only
/// exchanges energy between the three modes. The linear part is the
/// identity, scaled by `nu`. `forced` selects which coordinate axes receive
/// an independent Brownian kick; each entry becomes one unit column of
/// `sigma`.
///
/// The tensor is stored in the antisymmetric gauge (`B[i][j][k] =
/// -B[k][j][i]`), which leaves `B(U, U)` and all symmetrized quantities
/// unchanged and makes the cancellation identity hold entry by entry.
///
/// ```
/// use hypoflow::model::{make_triad, validate_model};
/// use nalgebra::DVector;
///
/// let m = make_triad([1.0, 1.0, -2.0], 1.0, &[0, 1]).unwrap();
/// assert!(validate_model(&m).ok);
/// let u = DVector::from_vec(vec![1.0, 1.0, 1.0]);
/// assert_eq!(m.eval_drift(&u), DVector::from_vec(vec![-2.0, -2.0, 1.0]));
/// ```
pub fn make_triad(c: [f64; 3], nu: f64, forced: &[usize]) -> Result<BilinearModel> {
    let sum = c[0] + c[1] + c[2];
    let scale = c.iter().map(|v| v.abs()).fold(1.0_f64, f64::max);
    if !sum.is_finite() || sum.abs() > 1e-14 * scale {
        return Err(Error::Invalid(format!(
            "interaction coefficients must sum to zero, got {sum:.3e}"
        )));
    }
    for (idx, &axis) in forced.iter().enumerate() {
        if axis >= 3 {
            return Err(Error::IndexOutOfRange(format!(
                "forced axis {axis} outside 0..3"
            )));
        }
        if forced[..idx].contains(&axis) {
            return Err(Error::Invalid(format!("forced axis {axis} repeated")));
        }
    }

    // Zero-sum gauge: B[0][1][2] = x, B[1][2][0] = y, B[2][0][1] = z with
    // x - y = c_1, y - z = c_2, z - x = c_3 and x + y + z = 0, mirrored
    // antisymmetrically. Solvable exactly because the c_i sum to zero.
    let x = (c[0] - c[2]) / 3.0;
    let y = x - c[0];
    let z = x + c[2];
    let entries = vec![
        (0, 1, 2, x),
        (2, 1, 0, -x),
        (1, 2, 0, y),
        (0, 2, 1, -y),
        (2, 0, 1, z),
        (1, 0, 2, -z),
    ];
    let b = BilinearTensor::from_entries(3, entries)?;

    let mut sigma = DMatrix::zeros(3, forced.len());
    for (col, &axis) in forced.iter().enumerate() {
        sigma[(axis, col)] = 1.0;
    }
    BilinearModel::new(nu, DMatrix::identity(3, 3), b, sigma)
}

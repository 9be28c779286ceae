//! Structural invariants of the model class under random draws: the
//! interaction term never creates energy, the linear part is coercive at
//! the reported rate, and the assembled drift respects both.

use hypoflow::model::{validate_model, BilinearModel};
use hypoflow::tensor::BilinearTensor;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Dense tensor with the cancellation symmetry baked in: antisymmetrize
/// an arbitrary coefficient array in its outer index pair.
fn cancelling_tensor(dim: usize, raw: &[f64]) -> BilinearTensor {
    let mut entries = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                if i == k {
                    continue;
                }
                let v = (raw[(i * dim + j) * dim + k] - raw[(k * dim + j) * dim + i]) / 2.0;
                if v != 0.0 {
                    entries.push((i, j, k, v));
                }
            }
        }
    }
    BilinearTensor::from_entries(dim, entries).unwrap()
}

/// Symmetric positive definite matrix built from an arbitrary square one.
fn coercive_matrix(dim: usize, raw: &[f64]) -> DMatrix<f64> {
    let r = DMatrix::from_row_slice(dim, dim, raw);
    let sym = &r + r.transpose();
    let shift = 0.2 + 2.0 * r.norm();
    sym + shift * DMatrix::identity(dim, dim)
}

prop_compose! {
    fn arb_model()(dim in 2usize..=4)(
        dim in Just(dim),
        nu in 0.1f64..2.0,
        raw_b in prop::collection::vec(-1.0f64..1.0, dim * dim * dim),
        raw_a in prop::collection::vec(-1.0f64..1.0, dim * dim),
        sigma in prop::collection::vec(-1.0f64..1.0, dim),
        u in prop::collection::vec(-3.0f64..3.0, dim),
        v in prop::collection::vec(-3.0f64..3.0, dim),
    ) -> (BilinearModel, DVector<f64>, DVector<f64>) {
        let model = BilinearModel::new(
            nu,
            coercive_matrix(dim, &raw_a),
            cancelling_tensor(dim, &raw_b),
            DMatrix::from_column_slice(dim, 1, &sigma),
        )
        .unwrap();
        (model, DVector::from_vec(u), DVector::from_vec(v))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interaction_never_creates_energy((model, u, v) in arb_model()) {
        let report = validate_model(&model);
        prop_assert!(report.ok, "random model failed validation: {report:?}");
        let pairing = model.b.apply(&v, &u).dot(&u);
        let bound = 1e-12 * model.b.frobenius_norm() * v.norm() * u.norm_squared();
        prop_assert!(
            pairing.abs() <= bound,
            "<B(V,U),U> = {pairing} exceeds {bound}"
        );
    }

    #[test]
    fn linear_part_is_coercive_at_the_reported_rate((model, u, _v) in arb_model()) {
        let report = validate_model(&model);
        let quad = (model.nu * &model.a * &u).dot(&u);
        let slack = 1e-10 * model.nu * model.a.norm() * u.norm_squared();
        prop_assert!(
            quad >= report.alpha * u.norm_squared() - slack,
            "<nu A u, u> = {quad} below alpha |u|^2 = {}",
            report.alpha * u.norm_squared()
        );
    }

    #[test]
    fn drift_dissipates_up_to_the_linear_part((model, u, _v) in arb_model()) {
        let residual = (model.eval_drift(&u) + model.nu * &model.a * &u).dot(&u);
        let bound = 1e-12 * model.b.frobenius_norm() * u.norm().powi(3);
        prop_assert!(
            residual.abs() <= bound,
            "drift energy residual {residual} exceeds {bound}"
        );
    }
}

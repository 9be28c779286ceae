//! Exactness properties of the discrete linearization flow: transpose
//! duality, composition over interior split points, and bitwise
//! reproducibility of the underlying trajectories.

use hypoflow::model::make_triad;
use hypoflow::sde::{simulate, SimConfig};
use hypoflow::variational::{adjoint_flow, jacobian_flow};
use hypoflow::BilinearModel;
use nalgebra::DVector;
use proptest::prelude::*;

prop_compose! {
    fn arb_setup()(
        c1 in -2.0f64..2.0,
        c2 in -2.0f64..2.0,
        nu in 0.3f64..2.0,
        steps in 5usize..40,
        seed in 0u64..1000,
        xi in prop::collection::vec(-1.0f64..1.0, 3),
        eta in prop::collection::vec(-1.0f64..1.0, 3),
    ) -> (BilinearModel, SimConfig, DVector<f64>, DVector<f64>) {
        let model = make_triad([c1, c2, -c1 - c2], nu, &[0, 1]).unwrap();
        let cfg = SimConfig::new(steps as f64 * 1e-2, 1e-2).with_seed(seed);
        (model, cfg, DVector::from_vec(xi), DVector::from_vec(eta))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_duality_is_exact((model, cfg, xi, eta) in arb_setup()) {
        let traj = simulate(&model, &DVector::zeros(3), &cfg).unwrap();
        let steps = traj.steps();
        let forward = jacobian_flow(&model, &traj, 0, steps).unwrap();
        let adjoint = adjoint_flow(&model, &traj, 0, steps).unwrap();
        let gap = (forward.apply(&xi).dot(&eta) - xi.dot(&adjoint.apply(&eta))).abs();
        prop_assert!(
            gap <= 1e-12 * xi.norm() * eta.norm() * (1.0 + forward.matrix.norm()),
            "duality gap {gap}"
        );
    }

    #[test]
    fn flow_composes_over_interior_points((model, cfg, xi, _eta) in arb_setup()) {
        let traj = simulate(&model, &DVector::zeros(3), &cfg).unwrap();
        let steps = traj.steps();
        let split = steps / 2;
        let whole = jacobian_flow(&model, &traj, 0, steps).unwrap();
        let first = jacobian_flow(&model, &traj, 0, split).unwrap();
        let second = jacobian_flow(&model, &traj, split, steps).unwrap();
        let composed = &second.matrix * &first.matrix;
        let gap = (&whole.matrix - &composed).norm();
        prop_assert!(
            gap <= 1e-12 * whole.matrix.norm().max(1.0),
            "composition gap {gap}"
        );
        let through = second.apply(&first.apply(&xi));
        prop_assert!(
            (whole.apply(&xi) - through).norm() <= 1e-12 * xi.norm().max(1.0)
        );
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_paths((model, cfg, _xi, _eta) in arb_setup()) {
        let u0 = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let a = simulate(&model, &u0, &cfg).unwrap();
        let b = simulate(&model, &u0, &cfg).unwrap();
        prop_assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            prop_assert!(
                x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()),
                "states differ between identical runs"
            );
        }
        let shifted = simulate(&model, &u0, &cfg.clone().with_stream(cfg.stream + 1)).unwrap();
        prop_assert!(
            shifted.terminal() != a.terminal(),
            "distinct streams produced identical endpoints"
        );
    }
}

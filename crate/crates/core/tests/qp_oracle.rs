//! Cross-checks the active-set solver against the brute-force
//! enumeration reference on randomly generated strictly convex
//! problems, plus a few closed-form properties.

mod common;

use common::{enumerate_active_sets, random_qp, OracleOutcome};
use ddmpc::qp::{self, QpStatus, QuadraticProgram, SolverOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_program(raw: &common::RawQp) -> QuadraticProgram {
    QuadraticProgram::new(
        raw.p.clone(),
        raw.q.clone(),
        raw.a.clone(),
        raw.b.clone(),
        raw.g.clone(),
        raw.h.clone(),
    )
    .unwrap()
}

#[test]
fn solver_agrees_with_enumeration_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51da);
    let opts = SolverOptions::default();
    let mut optimal = 0usize;
    let mut infeasible = 0usize;
    for case in 0..100 {
        let raw = random_qp(&mut rng);
        let qp = to_program(&raw);
        let sol = qp::solve(&qp, &opts).unwrap();
        match enumerate_active_sets(&raw, 1e-7, 1e-7) {
            OracleOutcome::Optimal { z, objective } => {
                assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
                let gap = (&sol.z - &z).amax();
                assert!(gap <= 1e-8, "case {case}: primal gap {gap:.3e}");
                let obj_gap = (sol.objective - objective).abs();
                assert!(
                    obj_gap <= 1e-8 * (1.0 + objective.abs()),
                    "case {case}: objective gap {obj_gap:.3e}"
                );
                assert!(
                    sol.kkt.max() <= 1e-8,
                    "case {case}: kkt residual {:.3e}",
                    sol.kkt.max()
                );
                optimal += 1;
            }
            OracleOutcome::Infeasible => {
                assert_eq!(sol.status, QpStatus::Infeasible, "case {case}");
                infeasible += 1;
            }
        }
    }
    // The generator must exercise both branches for the run to mean much.
    assert!(
        optimal >= 50 && infeasible >= 5,
        "skewed sample: {optimal} optimal, {infeasible} infeasible"
    );
}

#[test]
fn enumeration_confirms_the_active_constraint() {
    // min (z0-2)^2 + (z1-2)^2 with z0 + z1 <= 1: optimum at (0.5, 0.5).
    let raw = common::RawQp {
        p: DMatrix::identity(2, 2) * 2.0,
        q: DVector::from_vec(vec![-4.0, -4.0]),
        a: DMatrix::zeros(0, 2),
        b: DVector::zeros(0),
        g: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        h: DVector::from_vec(vec![1.0]),
    };
    match enumerate_active_sets(&raw, 1e-9, 1e-9) {
        OracleOutcome::Optimal { z, .. } => {
            assert!((z[0] - 0.5).abs() < 1e-10 && (z[1] - 0.5).abs() < 1e-10);
        }
        OracleOutcome::Infeasible => panic!("feasible problem reported infeasible"),
    }
    let sol = qp::solve(&to_program(&raw), &SolverOptions::default()).unwrap();
    assert_eq!(sol.active_set, vec![0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_constrained_solution_is_the_clamped_target(seed in 0u64..1 << 48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=6);
        let target = DVector::from_fn(n, |_, _| 4.0 * rng.random::<f64>() - 2.0);
        let lower = DVector::from_fn(n, |_, _| -1.0 - rng.random::<f64>());
        let upper = DVector::from_fn(n, |_, _| 1.0 + rng.random::<f64>());
        // min ||z - target||^2 over the box solves to a plain clamp.
        let mut g = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        for i in 0..n {
            g[(i, i)] = 1.0;
            h[i] = upper[i];
            g[(n + i, i)] = -1.0;
            h[n + i] = -lower[i];
        }
        let qp = QuadraticProgram::new(
            DMatrix::identity(n, n) * 2.0,
            -2.0 * &target,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            g,
            h,
        ).unwrap();
        let sol = qp::solve(&qp, &SolverOptions::default()).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        for i in 0..n {
            let clamped = target[i].clamp(lower[i], upper[i]);
            prop_assert!((sol.z[i] - clamped).abs() <= 1e-9,
                "coordinate {}: {} vs {}", i, sol.z[i], clamped);
        }
        prop_assert!(sol.kkt.max() <= 1e-8);
    }

    #[test]
    fn feasible_perturbations_never_improve_the_objective(seed in 0u64..1 << 48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_qp(&mut rng);
        let qp = to_program(&raw);
        let sol = qp::solve(&qp, &SolverOptions::default()).unwrap();
        if sol.status != QpStatus::Optimal {
            return Ok(());
        }
        let n = qp.num_vars();
        let a_pinv = (raw.a.nrows() > 0).then(|| qp::pseudoinverse(&raw.a, 1e-12));
        for _ in 0..10 {
            let dir = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
            // Stay on the equality manifold, then step a short distance.
            let tangent = match &a_pinv {
                Some(pinv) => &dir - pinv * (&raw.a * &dir),
                None => dir,
            };
            if tangent.norm() < 1e-12 {
                continue;
            }
            let point = &sol.z + 1e-4 * &tangent / tangent.norm();
            let eq_ok = raw.a.nrows() == 0
                || (&raw.a * &point - &raw.b).amax() <= 1e-10;
            let ineq_ok = (0..raw.g.nrows())
                .all(|i| (raw.g.row(i) * &point)[0] <= raw.h[i]);
            if eq_ok && ineq_ok {
                prop_assert!(qp.objective(&point) >= sol.objective - 1e-9);
            }
        }
    }

    #[test]
    fn scaling_the_objective_keeps_the_minimizer(seed in 0u64..1 << 48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_qp(&mut rng);
        let base = qp::solve(&to_program(&raw), &SolverOptions::default()).unwrap();
        let scale = 0.25 + 4.0 * rng.random::<f64>();
        let scaled = QuadraticProgram::new(
            &raw.p * scale,
            &raw.q * scale,
            raw.a.clone(),
            raw.b.clone(),
            raw.g.clone(),
            raw.h.clone(),
        ).unwrap();
        let sol = qp::solve(&scaled, &SolverOptions::default()).unwrap();
        prop_assert_eq!(sol.status, base.status);
        if base.status == QpStatus::Optimal {
            prop_assert!((&sol.z - &base.z).amax() <= 1e-7,
                "minimizer moved by {:.3e}", (&sol.z - &base.z).amax());
        }
    }
}

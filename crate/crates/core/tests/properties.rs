mod common;

use proptest::prelude::*;
use tdo_core::certify;
use tdo_core::linalg::{self, Matrix, Vector};
use tdo_core::ocp::{self, BoxSet};
use tdo_core::sim::{self, SimOptions};
use tdo_core::solvers::{self, SolverKind};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn projection_is_idempotent_and_nearest(
        bounds in prop::collection::vec((0.1f64..3.0, 0.1f64..3.0), 1..4),
        point in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let n = bounds.len();
        let lower = Vector::from_iterator(n, bounds.iter().map(|b| -b.0));
        let upper = Vector::from_iterator(n, bounds.iter().map(|b| b.1));
        let set = BoxSet::new(lower.clone(), upper.clone()).unwrap();
        let z = Vector::from_iterator(n, point.iter().copied().take(n));
        let p = set.project(&z);
        prop_assert!(set.contains(&p));
        prop_assert_eq!(set.project(&p), p.clone());
        // Grid-sampled competitors are never closer.
        let best = (&z - &p).norm();
        let steps = 6;
        let total = (steps + 1usize).pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let w = Vector::from_fn(n, |i, _| {
                let t = (rem % (steps + 1)) as f64 / steps as f64;
                rem /= steps + 1;
                lower[i] + t * (upper[i] - lower[i])
            });
            prop_assert!((&z - &w).norm() >= best - 1e-12);
        }
    }

    #[test]
    fn weighted_bounds_sandwich(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let n = 1 + (seed % 4) as usize;
        let m = common::random_spd(&mut rng, n, 0.05);
        let w = common::random_spd(&mut rng, n, 0.05);
        let (lo, hi) = linalg::weighted_eig_bounds(&m, &w).unwrap();
        for _ in 0..100 {
            let x = common::uniform_vector(&mut rng, n, 1.0);
            let xm = x.dot(&(&m * &x));
            let xw = x.dot(&(&w * &x));
            prop_assert!(xm - lo * xw >= -1e-9 * xw.max(1.0));
            prop_assert!(hi * xw - xm >= -1e-9 * xw.max(1.0));
        }
    }

    #[test]
    fn expm_inverse_pair(entries in prop::collection::vec(-2.0f64..2.0, 9)) {
        let m = Matrix::from_row_slice(3, 3, &entries);
        let product = linalg::expm(&m).unwrap() * linalg::expm(&(-&m)).unwrap();
        prop_assert!((product - Matrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let qp = common::random_problem(&mut rng).condense();
        let z = common::point_in_box(&mut rng, &qp);
        let x = common::uniform_vector(&mut rng, qp.state_dim(), 2.0);
        let grad = ocp::gradient(&qp, &z, &x).unwrap();
        let h = 1e-6;
        for i in 0..qp.dim() {
            let mut up = z.clone();
            let mut down = z.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (qp.cost(&up, &x) - qp.cost(&down, &x)) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() <= 1e-6 * grad.amax().max(1.0));
        }
    }

    #[test]
    fn value_weight_grows_with_horizon(seed in any::<u64>()) {
        let problem = common::random_problem(&mut common::rng(seed));
        let qp = problem.condense();
        let p = qp.p();
        let scale = qp.w().norm();
        let now = ocp::value_weight_stage_sum(&problem.plant, qp.q(), p, qp.horizon());
        let next = ocp::value_weight_stage_sum(&problem.plant, qp.q(), p, qp.horizon() + 1);
        prop_assert!(linalg::sym_eig(&(next - now)).unwrap().min() >= -1e-9 * scale);
    }

    #[test]
    fn hessian_splits_into_prediction_and_input_weight(seed in any::<u64>(), c in 0.01f64..5.0) {
        let problem = common::random_problem(&mut common::rng(seed));
        let mut spec = problem.spec.clone();
        let m = spec.r.nrows();
        spec.r += Matrix::identity(m, m) * c;
        let qp = ocp::condense(&problem.plant, &spec).unwrap();
        let blocks: Vec<&Matrix> = std::iter::repeat_n(&spec.r, spec.horizon).collect();
        let input_weight = linalg::block_diag(&blocks);
        prop_assert!((qp.h() - qp.hbar() - input_weight).norm() <= 1e-12 * qp.h().norm());
    }

    #[test]
    fn preconditioning_preserves_the_solution(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let qp = common::random_problem(&mut rng).condense();
        let (scaled, d) = ocp::jacobi_precondition(&qp).unwrap();
        prop_assert!(scaled.kappa() <= qp.kappa() * (1.0 + 1e-12));
        prop_assert_eq!(scaled.w(), qp.w());
        let x = common::uniform_vector(&mut rng, qp.state_dim(), 4.0);
        let s = solvers::oracle_solve(&qp, &x, 1e-12).unwrap();
        let s_scaled = solvers::oracle_solve(&scaled, &x, 1e-12).unwrap();
        prop_assert!((s_scaled.component_mul(&d) - &s).norm() <= 1e-8 * s.norm().max(1.0));
        prop_assert_eq!(scaled.unscale(&s_scaled), s_scaled.component_mul(&d));
    }

    #[test]
    fn pgm_warmstart_composes(seed in any::<u64>(), first in 1usize..20, second in 1usize..20) {
        let mut rng = common::rng(seed);
        let qp = common::random_problem(&mut rng).condense();
        let z0 = common::point_in_box(&mut rng, &qp);
        let x = common::uniform_vector(&mut rng, qp.state_dim(), 3.0);
        let split = solvers::pgm_run(&qp, &z0, &x, first).unwrap().iterate;
        let split = solvers::pgm_run(&qp, &split, &x, second).unwrap().iterate;
        let whole = solvers::pgm_run(&qp, &z0, &x, first + second).unwrap().iterate;
        prop_assert_eq!(split, whole);
    }

    #[test]
    fn oracle_meets_its_residual(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let qp = common::random_problem(&mut rng).condense();
        let x = common::uniform_vector(&mut rng, qp.state_dim(), 10.0);
        let s = solvers::oracle_solve(&qp, &x, 1e-12).unwrap();
        prop_assert!(qp.bounds().contains(&s));
        prop_assert!(solvers::fixed_point_residual(&qp, &s, &x) <= 1e-12 * s.amax().max(1.0));
        // Solver iterates approach it.
        let z = solvers::apgm_run(&qp, &Vector::zeros(qp.dim()), &x, 2000).unwrap().iterate;
        prop_assert!((z - &s).norm() <= 1e-6 * s.norm().max(1.0));
    }

    #[test]
    fn smallgain_agrees_with_closed_form_bound(seed in any::<u64>()) {
        let qp = common::random_problem(&mut common::rng(seed)).condense();
        let report = certify::gain_report(&qp).unwrap();
        for kind in SolverKind::ALL {
            let bound = report.iteration_bound(kind);
            prop_assume!(bound < 1e5);
            let above = report.certified_budget(kind);
            prop_assert!(report.smallgain(above, kind).unwrap() < 1.0);
            prop_assert!(certify::certify(&qp, above, kind).unwrap().certified);
            // One integer step below the bound the product is not below one.
            let below = bound.floor() as usize;
            if below >= 1 && (bound - bound.floor()) > 1e-9 {
                prop_assert!(report.smallgain(below, kind).unwrap() >= 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn gains_are_well_formed(seed in any::<u64>()) {
        let qp = common::random_problem(&mut common::rng(seed)).condense();
        let r = certify::gain_report(&qp).unwrap();
        prop_assert!((0.0..1.0).contains(&r.eta));
        prop_assert!((0.0..1.0).contains(&r.beta));
        prop_assert!(r.gamma1 >= 0.0 && r.zeta >= 0.0 && r.zeta_a >= 0.0);
        if r.eta > 0.0 {
            prop_assert!(r.ell_star.is_finite() && r.ell_star >= 0.0);
            prop_assert!(r.ell_star_a.is_finite());
        }
        for ell in 1..40 {
            prop_assert!(r.gamma2(ell + 1).unwrap() <= r.gamma2(ell).unwrap());
        }
    }

    #[test]
    fn applied_inputs_are_feasible(seed in any::<u64>(), ell in 1usize..5) {
        let mut rng = common::rng(seed);
        let qp = common::random_problem(&mut rng).condense();
        let x0 = common::uniform_vector(&mut rng, qp.state_dim(), 10.0);
        for kind in SolverKind::ALL {
            let log = sim::simulate_tdo(&qp, kind, ell, &x0, None, 15, &SimOptions::without_oracle()).unwrap();
            prop_assert!(log.records.iter().all(|r| qp.input_box().contains(&r.u)));
            prop_assert_eq!(log.records.len(), 15);
        }
    }
}

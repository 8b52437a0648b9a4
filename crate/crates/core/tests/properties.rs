mod common;

use common::*;
use kmat_core::evalkit::predict;
use kmat_core::objectives::class_probabilities;
use kmat_core::prompt_space::encode_prompts;
use kmat_core::trainer::LrSchedule;
use kmat_core::transport::{
    build_costs, fgw_solve, gw_quadratic, sinkhorn, uniform, FEASIBILITY_TOL,
};
use kmat_core::{
    generate, harmonic_mean, macro_f1, ConfusionMatrix, FrozenEncoder, LossBreakdown, LossWeights,
    Modality, SolverConfig, SyntheticSpec, TransportProblem,
};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn cost_matrix() -> impl Strategy<Value = Array2<f64>> {
    (2usize..=8).prop_flat_map(|n| matrix(n, n, 0.0, 4.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn harmonic_mean_lies_between_the_minimum_and_the_geometric_mean(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let h = harmonic_mean(a, b).unwrap();
        prop_assert!(h >= a.min(b) - 1e-12);
        prop_assert!(h <= (a * b).sqrt() + 1e-12);
        if a > 0.0 && b > 0.0 && (a - b).abs() > 1e-9 {
            prop_assert!(h > a.min(b) && h < a.max(b));
        }
        prop_assert!((harmonic_mean(a, a).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_plans_are_feasible(cost in cost_matrix()) {
        let n = cost.nrows();
        let u = uniform(n);
        let plan = sinkhorn(cost.view(), u.view(), u.view(), 0.1, 100, 1e-9).unwrap();
        prop_assert!(plan.gamma.iter().all(|&x| x >= 0.0));
        for i in 0..n {
            prop_assert!((plan.gamma.row(i).sum() - u[i]).abs() < FEASIBILITY_TOL);
            prop_assert!((plan.gamma.column(i).sum() - u[i]).abs() < FEASIBILITY_TOL);
        }
    }

    #[test]
    fn adding_a_constant_to_the_cost_leaves_the_plan(cost in cost_matrix(), shift in -50.0f64..50.0) {
        let u = uniform(cost.nrows());
        let a = sinkhorn(cost.view(), u.view(), u.view(), 0.1, 100, 1e-9).unwrap();
        let shifted = &cost + shift;
        let b = sinkhorn(shifted.view(), u.view(), u.view(), 0.1, 100, 1e-9).unwrap();
        prop_assert!(max_abs_diff(&a.gamma, &b.gamma) < 1e-9);
    }

    #[test]
    fn gw_is_invariant_to_isometries_and_relabeling(seed in any::<u64>(), n in 2usize..=6) {
        let mut r = rng(seed);
        let wh = unit_rows(&mut r, n, 5);
        let wl = unit_rows(&mut r, n, 5);
        let gamma = {
            let mut g = unit_rows(&mut r, n, n).mapv(f64::abs);
            g /= g.sum();
            g
        };
        let base = build_costs(wh.view(), wl.view()).unwrap();
        let value = gw_quadratic(base.structure_high.view(), base.structure_low.view(), gamma.view()).unwrap();

        let q = orthogonal(&mut r, 5);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, (seed as usize).wrapping_mul(31).wrapping_add(i * 7) % (i + 1));
        }
        let rotated = wh.dot(&q);
        let moved = Array2::from_shape_fn(wh.dim(), |(i, k)| rotated[[perm[i], k]]);
        let moved_gamma = Array2::from_shape_fn(gamma.dim(), |(i, j)| gamma[[perm[i], j]]);
        let costs = build_costs(moved.view(), wl.view()).unwrap();
        let again = gw_quadratic(costs.structure_high.view(), costs.structure_low.view(), moved_gamma.view()).unwrap();
        prop_assert!((value - again).abs() < 1e-9);
    }

    #[test]
    fn fgw_never_ends_above_the_product_coupling(seed in any::<u64>(), n in 2usize..=5, alpha in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let wh = unit_rows(&mut r, n, 6);
        let wl = unit_rows(&mut r, n, 6);
        let problem = TransportProblem::uniform(build_costs(wh.view(), wl.view()).unwrap(), alpha).unwrap();
        let plan = fgw_solve(&problem, &SolverConfig::default()).unwrap();
        let product = problem.objective(problem.product_coupling().view()).unwrap();
        prop_assert!(problem.objective(plan.gamma.view()).unwrap() <= product + 1e-12);
        prop_assert!(plan.marginal_violation < FEASIBILITY_TOL);
    }

    #[test]
    fn predictions_ignore_the_temperature(seed in any::<u64>(), tau in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let x = unit_rows(&mut r, 10, 6);
        let w = unit_rows(&mut r, 4, 6);
        prop_assert_eq!(predict(x.view(), w.view(), tau).unwrap(), predict(x.view(), w.view(), 1.0).unwrap());
        for row in class_probabilities(x.view(), w.view(), tau).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn macro_f1_survives_relabeling(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        shift in 0usize..4,
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let relabel = |c: usize| (c + shift) % 4;
        let a = ConfusionMatrix::from_predictions(&truth, &pred, 4).unwrap();
        let b = ConfusionMatrix::from_predictions(
            &truth.iter().map(|&c| relabel(c)).collect::<Vec<_>>(),
            &pred.iter().map(|&c| relabel(c)).collect::<Vec<_>>(),
            4,
        ).unwrap();
        prop_assert!((macro_f1(&a) - macro_f1(&b)).abs() < 1e-12);
        let streaming = truth.iter().zip(&pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64;
        prop_assert!((a.accuracy() - streaming).abs() < 1e-12);
    }

    #[test]
    fn breakdown_total_recombines(ce in 0.0f64..10.0, anc in 0.0f64..10.0, fgw in 0.0f64..10.0,
                                  la in 0.0f64..5.0, lf in 0.0f64..5.0) {
        let w = LossWeights { lambda_anc: la, lambda_fgw: lf, ..LossWeights::default() };
        let b = LossBreakdown::combine(ce, anc, fgw, &w);
        prop_assert!((b.total - (ce + la * anc + lf * fgw)).abs() < 1e-9);
    }

    #[test]
    fn encoded_rows_are_unit_norm_and_shared_slots_agree(seed in any::<u64>(), csc in any::<bool>(), msc in any::<bool>()) {
        let config = prompt_config(3, csc, msc);
        let bank = random_bank(seed, &config);
        let enc = FrozenEncoder::new(seed, config.input_dim(), 7).unwrap();
        let w = encode_prompts(&bank, &enc).unwrap();
        for m in Modality::ALL {
            for row in w.get(m).rows() {
                prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
            }
        }
        // Shared context: every resolver sees the same slot.
        for class in 0..3 {
            if !csc {
                prop_assert_eq!(bank.slot(class, Modality::High), bank.slot(0, Modality::High));
            }
            if !msc {
                prop_assert_eq!(bank.slot(class, Modality::High), bank.slot(class, Modality::Low));
            }
        }
    }

    #[test]
    fn schedule_stays_within_its_bounds(base in 1e-5f64..1.0, warmup in 0usize..20, extra in 1usize..200) {
        let s = LrSchedule { base_lr: base, warmup_steps: warmup, total_steps: warmup + extra };
        for step in 0..warmup + extra {
            let lr = s.lr_at(step);
            prop_assert!((0.0..=base).contains(&lr));
        }
        prop_assert_eq!(s.lr_at(warmup), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generation_is_a_pure_function_of_the_spec(seed in any::<u64>(), classes in 2usize..5) {
        let spec = SyntheticSpec { n_classes: classes, embed_dim: 8, seed, ..SyntheticSpec::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        prop_assert_eq!(a, b);
    }
}

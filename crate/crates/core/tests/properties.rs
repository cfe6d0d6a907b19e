use nalgebra::DMatrix;
use proptest::prelude::*;

use rrsgd::analysis::{
    convergence_constants, linear_grid, max_stable_eta, rr_stability_factor, sgd_stability_factor, StabilityScheme,
};
use rrsgd::losses::{PiecewiseExample, PiecewiseParams, QuadraticTerms};
use rrsgd::samplers::{balancing_plan, regional_update_variances, GroupResamplingPlan};
use rrsgd::sde::{covariance_rr, covariance_sgd, equilibrium_density, trace_gap, DensityGrid};
use rrsgd::{finite_difference_check, full_gradient, gradient_profile, value, Objective};

/// Terms with fixed gradients `g_i` and optional weights.
#[derive(Debug, Clone)]
struct Fixed {
    grads: Vec<Vec<f64>>,
    weights: Option<Vec<f64>>,
}

impl Objective for Fixed {
    fn dim(&self) -> usize {
        self.grads[0].len()
    }
    fn n_terms(&self) -> usize {
        self.grads.len()
    }
    fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
    fn term_value(&self, i: usize, t: &[f64]) -> f64 {
        self.grads[i].iter().zip(t).map(|(a, b)| a * b).sum()
    }
    fn term_grad(&self, i: usize, _t: &[f64], g: &mut [f64]) {
        g.copy_from_slice(&self.grads[i]);
    }
}

fn fixed_objective() -> impl Strategy<Value = Fixed> {
    (1usize..=10, 1usize..=50).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n),
            prop::option::of(prop::collection::vec(0.01f64..1.0, n)),
        )
            .prop_map(|(grads, w)| Fixed {
                grads,
                weights: w.map(|w| {
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / s).collect()
                }),
            })
    })
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rr_mean_matches_full_gradient(obj in fixed_objective()) {
        let theta = vec![0.0; obj.dim()];
        let p = gradient_profile(&obj, &theta).unwrap();
        prop_assume!(p.c > 0.0);
        let m = full_gradient(&obj, &theta).unwrap();
        for (k, mk) in m.iter().enumerate() {
            let e: f64 = (0..p.n())
                .filter(|i| p.norms[*i] > 0.0)
                .map(|i| p.probs[i] * p.c / p.norms[i] * p.grad(i)[k])
                .sum();
            prop_assert!((e - mk).abs() <= 1e-12 * (1.0 + mk.abs()));
        }
    }

    #[test]
    fn rr_step_magnitude_is_c(obj in fixed_objective()) {
        let theta = vec![0.0; obj.dim()];
        let p = gradient_profile(&obj, &theta).unwrap();
        for i in 0..p.n() {
            if p.norms[i] > 0.0 {
                let step: f64 = p.grad(i).iter().map(|g| (p.c / p.norms[i] * g).powi(2)).sum::<f64>().sqrt();
                prop_assert!((step - p.c).abs() <= 1e-12 * (1.0 + p.c));
            }
        }
    }

    #[test]
    fn covariances_are_symmetric_psd_and_ordered(obj in fixed_objective()) {
        let theta = vec![0.0; obj.dim()];
        let s1 = covariance_sgd(&obj, &theta).unwrap();
        let s2 = covariance_rr(&obj, &theta).unwrap();
        let scale = 1.0 + s1.abs().max();
        prop_assert!((&s1 - s1.transpose()).abs().max() <= 1e-12);
        prop_assert!((&s2 - s2.transpose()).abs().max() <= 1e-12);
        prop_assert!(min_eigenvalue(&s1) >= -1e-10 * scale);
        prop_assert!(min_eigenvalue(&s2) >= -1e-10 * scale);
        let r = trace_gap(&obj, &theta).unwrap();
        prop_assert!(r.trace2 <= r.trace1 + 1e-12 * scale);
        prop_assert!((r.gap - r.gap_from_norms).abs() <= 1e-10 * scale);
    }

    #[test]
    fn equal_norms_close_the_gap(d in 1usize..=6, n in 1usize..=30, c in 0.1f64..5.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) + 1e-3).collect();
                let nr = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| c * x / nr).collect()
            })
            .collect();
        let obj = Fixed { grads, weights: None };
        let r = trace_gap(&obj, &vec![0.0; d]).unwrap();
        prop_assert!(r.gap.abs() <= 1e-12 * (1.0 + c * c));
    }

    #[test]
    fn unequal_norms_open_the_gap(obj in fixed_objective()) {
        let theta = vec![0.0; obj.dim()];
        let p = gradient_profile(&obj, &theta).unwrap();
        let lo = p.norms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.norms.iter().copied().fold(0.0, f64::max);
        prop_assume!(hi - lo > 1e-3);
        let r = trace_gap(&obj, &theta).unwrap();
        prop_assert!(r.gap > 0.0);
    }

    #[test]
    fn balancing_identity(a1 in 0.01f64..0.99, k in 1.0f64..50.0) {
        let a2 = 1.0 - a1;
        let plan = balancing_plan(a1, a2, k).unwrap();
        let (f1, f2) = (plan.proportions()[0], plan.proportions()[1]);
        prop_assert!((a1 * (f2 / f1).sqrt() - k * a2 * (f1 / f2).sqrt()).abs() <= 1e-12);
        prop_assert!((f1 + f2 - 1.0).abs() <= 1e-15);
        for j in 0..2 {
            prop_assert!((plan.weights()[j] * plan.proportions()[j] - [a1, a2][j]).abs() <= 1e-15);
        }
        let [l, r] = regional_update_variances(0.0, k, &plan).unwrap();
        prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l));
    }

    #[test]
    fn reweighting_keeps_the_objective(a1 in 0.05f64..0.95, f1 in 0.05f64..0.95, t in -3.0f64..2.0) {
        let params = PiecewiseParams::new(a1, 1.0 - a1, 0.1, 5.0).unwrap();
        let plan = GroupResamplingPlan::new(&[a1, 1.0 - a1], &[f1, 1.0 - f1]).unwrap();
        let v = [params.v1(t), params.v2(t)];
        let reweighted: f64 = (0..2).map(|j| plan.proportions()[j] * plan.weights()[j] * v[j]).sum();
        prop_assert!((reweighted - params.total(t)).abs() <= 1e-12 * (1.0 + params.total(t).abs()));
    }

    #[test]
    fn one_dimensional_rr_identity(h in prop::collection::vec(0.01f64..20.0, 1..20)) {
        let hs: Vec<DMatrix<f64>> = h.iter().map(|x| DMatrix::from_element(1, 1, *x)).collect();
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        let weighted: f64 = h.iter().map(|hi| (mean / hi) * hi * hi).sum::<f64>() / n;
        prop_assert!((weighted - mean * mean).abs() <= 1e-12 * mean * mean);
        for eta in [0.01, 0.1, 1.0] {
            let f = rr_stability_factor(&hs, eta, &[1.0]).unwrap();
            prop_assert!((f - (1.0 - eta * mean).powi(2)).abs() <= 1e-12 * (1.0 + f));
        }
        prop_assert_eq!(sgd_stability_factor(&hs, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn rr_threshold_dominates_in_one_dimension(h in prop::collection::vec(0.1f64..10.0, 1..10)) {
        let hs: Vec<DMatrix<f64>> = h.iter().map(|x| DMatrix::from_element(1, 1, *x)).collect();
        let grid = linear_grid(1e-3, 25.0, 400);
        let sgd = max_stable_eta(&hs, &StabilityScheme::Sgd, &grid).unwrap();
        let rr = max_stable_eta(&hs, &StabilityScheme::Rr { directions: vec![vec![1.0]] }, &grid).unwrap();
        prop_assert!(rr.threshold >= sgd.threshold - 1e-9);
    }

    #[test]
    fn sigma_mean_below_sup(s in prop::collection::vec(0.0f64..10.0, 1..20)) {
        let c = convergence_constants(&s, 1.0, 1.0, 0.0, 1.0, 0.0).unwrap();
        prop_assert!(c.sigma_mean_sq <= c.sigma_sup_sq + 1e-12);
        let all_equal = s.iter().all(|x| (x - s[0]).abs() < 1e-12);
        if !all_equal {
            prop_assert!(c.sigma_mean_sq < c.sigma_sup_sq);
        }
    }

    #[test]
    fn quadratic_gradients_match_differences(
        h in prop::collection::vec(0.1f64..5.0, 3),
        c in prop::collection::vec(-2.0f64..2.0, 6),
        t in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let q = QuadraticTerms::new(h, c.chunks(2).map(<[f64]>::to_vec).collect()).unwrap();
        prop_assert!(finite_difference_check(&q, &t, 1e-5) < 1e-6);
    }

    #[test]
    fn piecewise_weighted_sum_is_the_loss(t in -3.0f64..2.0) {
        let obj = PiecewiseExample::new(PiecewiseParams::standard()).unwrap();
        let p = obj.params();
        prop_assert!((value(&obj, &[t]).unwrap() - p.total(t)).abs() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn density_normalizes_and_matches_flux(a1 in 0.3f64..0.7, eps in 0.05f64..0.4, k in 1.5f64..3.0, eta in 0.05f64..0.15) {
        let params = PiecewiseParams::new(a1, 1.0 - a1, eps, k).unwrap();
        let grid = DensityGrid { lo: -8.0, hi: 10.0, points_per_side: 400_001, ..DensityGrid::default() };
        let dens = equilibrium_density(&params, eta, grid).unwrap();
        prop_assert!((dens.mass_left() + dens.mass_right() - 1.0).abs() <= 1e-6);
        prop_assert!(dens.flux_mismatch() <= 1e-9);
        prop_assert!((dens.side_ratio() / (k * k) - 1.0).abs() <= 1e-9);
    }
}

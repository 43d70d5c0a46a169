mod common;

use coxcert::bounds::{compatibility_d, k_m, project_weighted_l1_ball, weighted_l1, weighted_norms};
use coxcert::dgp::{Dataset, Observation};
use coxcert::emploss::{empirical_sigma, partial_likelihood, partial_likelihood_gradient};
use coxcert::numeric::l1_norm;
use coxcert::population::PopulationContext;
use coxcert::solver::{fit_lasso, kkt_residual, lambda_max, project_l1_ball, FitOptions};
use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn theta_strategy(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, m)
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn gradient_agrees_with_central_differences(seed in 0u64..10_000, n in 10usize..200, m in 1usize..12) {
        let data = random_dataset(n, m, seed);
        let theta = random_theta(m, 0.4 / (m as f64).sqrt(), seed);
        let g = partial_likelihood_gradient(&data, &theta).unwrap();
        let fd = fd_gradient(|t| partial_likelihood(&data, t).unwrap(), &theta, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn partial_likelihood_is_midpoint_convex(seed in 0u64..10_000, m in 1usize..6, a in theta_strategy(6), b in theta_strategy(6)) {
        let data = random_dataset(80, m, seed);
        let (a, b) = (&a[..m], &b[..m]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let l = |t: &[f64]| partial_likelihood(&data, t).unwrap();
        prop_assert!(l(&mid) <= 0.5 * (l(a) + l(b)) + 1e-12);
    }

    #[test]
    fn loss_is_bitwise_permutation_invariant(seed in 0u64..10_000, m in 1usize..6) {
        let data = random_dataset(120, m, seed);
        // duplicate some rows to exercise tied times
        let mut obs: Vec<Observation> = data.observations().to_vec();
        let dup: Vec<Observation> = obs[..20].to_vec();
        obs.extend(dup);
        let original = Dataset::new(obs.clone()).unwrap();
        obs.shuffle(&mut coxcert::rng::stream(seed, 9));
        let shuffled = Dataset::new(obs).unwrap();
        let theta = random_theta(m, 0.3, seed + 1);
        prop_assert_eq!(
            partial_likelihood(&original, &theta).unwrap().to_bits(),
            partial_likelihood(&shuffled, &theta).unwrap().to_bits()
        );
        let ga = partial_likelihood_gradient(&original, &theta).unwrap();
        let gb = partial_likelihood_gradient(&shuffled, &theta).unwrap();
        prop_assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn converged_fits_satisfy_kkt(seed in 0u64..10_000, m in 2usize..10, frac in 0.02f64..1.2) {
        let data = random_dataset(150, m, seed);
        let w = empirical_sigma(&data);
        let lambda = frac * lambda_max(&data, &w).unwrap();
        let opts = FitOptions::default();
        let fit = fit_lasso(&data, lambda, &w, &opts).unwrap();
        prop_assert!(fit.converged);
        let kkt = kkt_residual(&data, &fit.theta_hat, lambda, &w).unwrap();
        prop_assert!(kkt <= opts.kkt_tolerance, "kkt {kkt}");
        if frac >= 1.0 {
            prop_assert!(fit.theta_hat.iter().all(|t| *t == 0.0));
        }
    }

    #[test]
    fn fit_is_equivariant_under_column_rescaling(seed in 0u64..10_000, m in 2usize..6, scales in prop::collection::vec(0.2f64..5.0, 6)) {
        let data = random_dataset(150, m, seed);
        let scale = &scales[..m];
        let scaled = data.rescaled(scale).unwrap();
        let w = empirical_sigma(&data);
        let ws = empirical_sigma(&scaled);
        let lambda = 0.3 * lambda_max(&data, &w).unwrap();
        let opts = FitOptions::default();
        let a = fit_lasso(&data, lambda, &w, &opts).unwrap();
        let b = fit_lasso(&scaled, lambda, &ws, &opts).unwrap();
        for ((x, y), s) in a.theta_hat.iter().zip(&b.theta_hat).zip(scale) {
            prop_assert!((x - y * s).abs() <= 1e-5, "{:?} vs {:?}", a.theta_hat, b.theta_hat);
        }
    }

    #[test]
    fn excess_risk_is_nonnegative(idx in 0usize..3, t in theta_strategy(4)) {
        let dgp = three_dgps().swap_remove(idx);
        let ctx = PopulationContext::with_defaults(dgp.clone()).unwrap();
        let theta = &t[..dgp.dim()];
        prop_assert!(ctx.excess_risk(theta).unwrap() >= -1e-12);
    }

    #[test]
    fn at_risk_mean_is_nonincreasing_and_ratio_bounded(idx in 0usize..3, t in theta_strategy(4), s in 0.0f64..1.0) {
        let dgp = three_dgps().swap_remove(idx);
        let ctx = PopulationContext::with_defaults(dgp.clone()).unwrap();
        let theta = &t[..dgp.dim()];
        let tau = dgp.tau();
        let (t0, t1) = (s * tau * 0.5, s * tau * 0.5 + 0.5 * tau);
        prop_assert!(ctx.mu(theta, t1).unwrap() <= ctx.mu(theta, t0).unwrap() + 1e-15);
        let km = k_m(dgp.covariates()).unwrap();
        for k in 0..dgp.dim() {
            prop_assert!(ctx.f_ratio(theta, k, t1).unwrap().abs() <= km + 1e-12);
        }
    }

    #[test]
    fn compatibility_constant_is_a_valid_certificate(idx in 0usize..2, d in theta_strategy(4), pick in 1usize..4) {
        let dgp = three_dgps().swap_remove(idx);
        let ctx = PopulationContext::with_defaults(dgp.clone()).unwrap();
        let m = dgp.dim();
        let set: Vec<usize> = (0..pick.min(m)).collect();
        let dd = compatibility_d(dgp.covariates(), &set).unwrap();
        let sigma = ctx.sigma();
        let zero = vec![0.0; m];
        let lhs: f64 = set.iter().map(|&k| sigma[k] * d[k].abs()).sum();
        prop_assert!(lhs <= dd.sqrt() * ctx.l2_distance(&d[..m], &zero) + 1e-9, "{lhs} vs D={dd}");
    }

    #[test]
    fn weighted_norm_splits_and_projections_land_in_ball(t in theta_strategy(6), r in theta_strategy(6), s in prop::collection::vec(0.1f64..3.0, 6), radius in 0.1f64..3.0) {
        let reference: Vec<f64> = r.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect();
        let w = weighted_norms(&t, &reference, &s).unwrap();
        prop_assert!((w.i - w.i1 - w.i2).abs() <= 1e-12);
        let mut p = t.clone();
        project_l1_ball(&mut p, radius);
        prop_assert!(l1_norm(&p) <= radius * (1.0 + 1e-12));
        let mut q = t.clone();
        project_weighted_l1_ball(&mut q, &reference, &s, radius);
        let diff: Vec<f64> = q.iter().zip(&reference).map(|(a, b)| a - b).collect();
        prop_assert!(weighted_l1(&diff, &s) <= radius * (1.0 + 1e-9));
    }
}

#![allow(dead_code)]

use coxcert::bounds::BoundConfig;
use coxcert::dgp::{BaselineHazard, CensoringLaw, CovariateLaw, Dataset, Dgp, Observation};
use coxcert::quadrature::QuadratureOptions;
use coxcert::rng;
use coxcert::solver::FitOptions;
use coxcert::verify::{VerificationPlan, VerifyOptions};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

/// Hadamard design with the first `active` coefficients set to ±0.5.
pub fn hadamard_dgp(m: usize, active: usize, upper: f64) -> Dgp {
    let theta = (0..m)
        .map(|k| match k {
            k if k >= active => 0.0,
            k if k % 2 == 0 => 0.5,
            _ => -0.5,
        })
        .collect();
    Dgp::new(
        CovariateLaw::hadamard(m).unwrap(),
        BaselineHazard::constant(1.0).unwrap(),
        CensoringLaw::new(upper, 1.0).unwrap(),
        theta,
    )
    .unwrap()
}

/// Same model as `configs/small.toml`.
pub fn small_plan(seed: u64) -> VerificationPlan {
    VerificationPlan {
        dgp: hadamard_dgp(4, 2, 3.0),
        quadrature: QuadratureOptions::default(),
        bounds: default_bounds(),
        s_max: 2,
        fit: FitOptions::default(),
        verify: VerifyOptions::default(),
        seed,
    }
}

pub fn default_bounds() -> BoundConfig {
    BoundConfig::from_exponents(1.0, 2.0, 0.5, 0.1, 1, 1, 1.0, None, 1.0, 2.0)
}

/// Three structurally different models: orthonormal signs, correlated
/// explicit atoms with a two-piece hazard, and a single-coordinate model
/// with administrative censoring only.
pub fn three_dgps() -> Vec<Dgp> {
    vec![
        hadamard_dgp(4, 2, 3.0),
        Dgp::new(
            CovariateLaw::new(
                vec![vec![1.0, 0.5, 0.0], vec![-1.0, 1.0, 0.5], vec![0.5, -1.0, 1.0], vec![0.0, 0.0, -1.0]],
                vec![0.25, 0.35, 0.15, 0.25],
            )
            .unwrap(),
            BaselineHazard::new(vec![0.0, 0.4], vec![0.7, 1.6]).unwrap(),
            CensoringLaw::new(2.5, 1.0).unwrap(),
            vec![0.6, -0.4, 0.3],
        )
        .unwrap(),
        Dgp::new(
            CovariateLaw::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.3, 0.4, 0.3]).unwrap(),
            BaselineHazard::constant(0.8).unwrap(),
            CensoringLaw::new(f64::INFINITY, 1.5).unwrap(),
            vec![0.7],
        )
        .unwrap(),
    ]
}

/// Continuous-covariate survival data for solver and loss tests.
pub fn random_dataset(n: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, 0);
    let beta: Vec<f64> = (0..m).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt()).collect();
    let obs = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let t = rng.sample::<f64, _>(Exp1) * (-eta).exp();
            let c = 1.5 * rng.sample::<f64, _>(Exp1);
            Observation {
                y: t.min(c),
                event: t <= c,
                x,
            }
        })
        .collect();
    Dataset::new(obs).unwrap()
}

pub fn random_theta(m: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, 1);
    (0..m).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut p = theta.to_vec();
            let mut q = theta.to_vec();
            p[k] += h;
            q[k] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

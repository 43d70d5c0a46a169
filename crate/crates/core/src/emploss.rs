//! Empirical losses: the negative log partial likelihood `l_n`, its
//! derivatives, the iid-structured intermediate loss `l̃_n`, and the
//! empirical penalty weights `σ̂_k`.
//!
//! All sums run in `sort_index` order with compensated accumulation, so the
//! results are bit-identical under any permutation of the input rows.

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{dot, KahanSum};
use crate::population::PopulationContext;

/// Risk-set sums `S0(t) = n⁻¹ Σ_j 1(Y_j ≥ t) e^{f_θ(X_j)}` and
/// `S1_k(t) = n⁻¹ Σ_j 1(Y_j ≥ t) ψ_k(X_j) e^{f_θ(X_j)}` at each sorted time.
///
/// Values are stored scaled by `e^{-shift}` where `shift = max_j f_θ(X_j)`.
#[derive(Debug, Clone)]
pub struct RiskSetSums {
    pub times: Vec<f64>,
    pub s0: Vec<f64>,
    pub s1: Vec<Vec<f64>>,
    pub shift: f64,
}

impl RiskSetSums {
    pub fn compute(dataset: &Dataset, theta: &[f64]) -> Result<Self> {
        check_theta(dataset, theta)?;
        let n = dataset.len();
        let m = dataset.dim();
        let sorted: Vec<_> = dataset.sorted().collect();
        let eta: Vec<f64> = sorted.iter().map(|o| dot(&o.x, theta)).collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = vec![0.0; n];
        let mut s1 = vec![vec![0.0; m]; n];
        let mut acc0 = KahanSum::new();
        let mut acc1 = vec![KahanSum::new(); m];
        let inv_n = 1.0 / n as f64;
        for_each_tie_group_rev(&sorted, |lo, hi| {
            for p in lo..hi {
                let w = (eta[p] - shift).exp();
                acc0.add(w);
                for (a, x) in acc1.iter_mut().zip(&sorted[p].x) {
                    a.add(w * x);
                }
            }
            for p in lo..hi {
                s0[p] = acc0.value() * inv_n;
                for k in 0..m {
                    s1[p][k] = acc1[k].value() * inv_n;
                }
            }
        });
        Ok(Self {
            times: sorted.iter().map(|o| o.y).collect(),
            s0,
            s1,
            shift,
        })
    }

    /// Unscaled `S0` at sorted position `p`.
    pub fn s0_unscaled(&self, p: usize) -> f64 {
        self.s0[p] * self.shift.exp()
    }
}

/// Calls `f(lo, hi)` for each block of equal times, from the latest block to
/// the earliest; `lo..hi` indexes the sorted order.
fn for_each_tie_group_rev<F: FnMut(usize, usize)>(sorted: &[&crate::dgp::Observation], mut f: F) {
    let mut hi = sorted.len();
    while hi > 0 {
        let y = sorted[hi - 1].y;
        let mut lo = hi - 1;
        while lo > 0 && sorted[lo - 1].y == y {
            lo -= 1;
        }
        f(lo, hi);
        hi = lo;
    }
}

fn check_theta(dataset: &Dataset, theta: &[f64]) -> Result<()> {
    if theta.len() != dataset.dim() {
        return Err(Error::invalid(format!(
            "coefficient vector has length {}, dataset has {} covariates",
            theta.len(),
            dataset.dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("coefficients must be finite"));
    }
    Ok(())
}

/// `l_n`, `∇l_n`, and optionally `∇²l_n` (row-major) in one pass.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<f64>>,
}

pub fn partial_likelihood_derivatives(
    dataset: &Dataset,
    theta: &[f64],
    with_hessian: bool,
) -> Result<PartialLikelihood> {
    check_theta(dataset, theta)?;
    let n = dataset.len();
    let m = dataset.dim();
    let sorted: Vec<_> = dataset.sorted().collect();
    let eta: Vec<f64> = sorted.iter().map(|o| dot(&o.x, theta)).collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_n = (n as f64).ln();

    let mut acc0 = KahanSum::new();
    let mut acc1 = vec![KahanSum::new(); m];
    let mut acc2 = if with_hessian { vec![0.0; m * m] } else { Vec::new() };

    let mut value = KahanSum::new();
    let mut grad = vec![KahanSum::new(); m];
    let mut hess = if with_hessian { vec![0.0; m * m] } else { Vec::new() };
    let mut mean = vec![0.0; m];

    for_each_tie_group_rev(&sorted, |lo, hi| {
        for p in lo..hi {
            let w = (eta[p] - shift).exp();
            acc0.add(w);
            let x = &sorted[p].x;
            for k in 0..m {
                acc1[k].add(w * x[k]);
            }
            if with_hessian {
                for j in 0..m {
                    let wj = w * x[j];
                    for k in 0..=j {
                        acc2[j * m + k] += wj * x[k];
                    }
                }
            }
        }
        let s0 = acc0.value();
        let log_s0 = s0.ln() + shift - log_n;
        for k in 0..m {
            mean[k] = acc1[k].value() / s0;
        }
        for p in lo..hi {
            if !sorted[p].event {
                continue;
            }
            value.add(eta[p] - log_s0);
            let x = &sorted[p].x;
            for k in 0..m {
                grad[k].add(x[k] - mean[k]);
            }
            if with_hessian {
                for j in 0..m {
                    for k in 0..=j {
                        hess[j * m + k] += acc2[j * m + k] / s0 - mean[j] * mean[k];
                    }
                }
            }
        }
    });

    let inv_n = 1.0 / n as f64;
    let hessian = with_hessian.then(|| {
        let mut h = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..=j {
                h[j * m + k] = hess[j * m + k] * inv_n;
                h[k * m + j] = h[j * m + k];
            }
        }
        h
    });
    Ok(PartialLikelihood {
        value: -value.value() * inv_n,
        gradient: grad.iter().map(|g| -g.value() * inv_n).collect(),
        hessian,
    })
}

/// Negative log partial likelihood `l_n(θ)` (Breslow handling of ties).
pub fn partial_likelihood(dataset: &Dataset, theta: &[f64]) -> Result<f64> {
    Ok(partial_likelihood_derivatives(dataset, theta, false)?.value)
}

/// `∇l_n(θ) = −n⁻¹ Σ_i Δ_i [ψ(X_i) − S1(Y_i)/S0(Y_i)]`.
pub fn partial_likelihood_gradient(dataset: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(partial_likelihood_derivatives(dataset, theta, false)?.gradient)
}

/// Intermediate loss `l̃_n(θ) = −n⁻¹ Σ_i {f_θ(X_i) − log μ(Y_i; f_θ)} Δ_i`,
/// with `μ` from the population.
pub fn intermediate_loss(dataset: &Dataset, ctx: &PopulationContext, theta: &[f64]) -> Result<f64> {
    check_theta(dataset, theta)?;
    if dataset.dim() != ctx.dgp().dim() {
        return Err(Error::invalid("dataset and population have different dimensions"));
    }
    let tau = ctx.dgp().tau();
    let atom_eta = ctx.atom_eta(theta)?;
    let mut acc = KahanSum::new();
    for o in dataset.sorted().filter(|o| o.event) {
        if o.y > tau {
            return Err(Error::invalid(format!("event time {} exceeds tau = {tau}", o.y)));
        }
        acc.add(dot(&o.x, theta) - ctx.log_mu_from_eta(&atom_eta, o.y));
    }
    Ok(-acc.value() / dataset.len() as f64)
}

/// `σ̂_k = (n⁻¹ Σ_i ψ_k(X_i)²)^{1/2}`.
pub fn empirical_sigma(dataset: &Dataset) -> Vec<f64> {
    let m = dataset.dim();
    let mut acc = vec![KahanSum::new(); m];
    for o in dataset.sorted() {
        for (a, x) in acc.iter_mut().zip(&o.x) {
            a.add(x * x);
        }
    }
    let n = dataset.len() as f64;
    let sigma: Vec<f64> = acc.iter().map(|a| (a.value() / n).sqrt()).collect();
    for (k, s) in sigma.iter().enumerate() {
        if *s == 0.0 {
            log::warn!("empirical weight of covariate {} is zero: the column vanishes", k + 1);
        }
    }
    sigma
}

/// Checks `|f_θ(X_i)| ≤ log U_m` on every row.
pub fn check_predictor_bound(dataset: &Dataset, theta: &[f64], log_um: f64) -> Result<()> {
    for (i, o) in dataset.observations().iter().enumerate() {
        let f = dot(&o.x, theta);
        if f.abs() > log_um * (1.0 + 1e-12) {
            return Err(Error::Assumption(format!(
                "|f_θ(X_{i})| = {} exceeds log U_m = {log_um}",
                f.abs()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, BaselineHazard, CensoringLaw, CovariateLaw, Dgp, Observation};

    fn obs(y: f64, event: bool, x: &[f64]) -> Observation {
        Observation {
            y,
            event,
            x: x.to_vec(),
        }
    }

    fn two_point() -> Dataset {
        Dataset::new(vec![obs(1.0, true, &[0.0]), obs(2.0, true, &[1.0])]).unwrap()
    }

    #[test]
    fn two_point_hand_values() {
        let d = two_point();
        let v = partial_likelihood(&d, &[0.0]).unwrap();
        assert!((v + 0.5 * 2f64.ln()).abs() < 1e-15);
        let g = partial_likelihood_gradient(&d, &[0.0]).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn no_events_gives_zero() {
        let d = Dataset::new(vec![obs(1.0, false, &[0.3, 1.0]), obs(2.0, false, &[1.0, -1.0])]).unwrap();
        assert_eq!(partial_likelihood(&d, &[0.4, 0.1]).unwrap(), 0.0);
        assert_eq!(partial_likelihood_gradient(&d, &[0.4, 0.1]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_observation_has_zero_loss() {
        let d = Dataset::new(vec![obs(0.7, true, &[2.0])]).unwrap();
        assert!(partial_likelihood(&d, &[1.3]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn breslow_ties_use_full_risk_set() {
        // Both events at t = 1 share the risk set {1, 2, 3}.
        let d = Dataset::new(vec![
            obs(1.0, true, &[1.0]),
            obs(1.0, true, &[0.0]),
            obs(2.0, false, &[1.0]),
        ])
        .unwrap();
        let th = 0.5f64;
        let s0 = (2.0 * th.exp() + 1.0) / 3.0;
        let expect = -((th - s0.ln()) + (0.0 - s0.ln())) / 3.0;
        assert!((partial_likelihood(&d, &[th]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn large_predictors_do_not_overflow() {
        let d = Dataset::new(vec![obs(1.0, true, &[1.0]), obs(2.0, true, &[-1.0]), obs(3.0, true, &[0.5])])
            .unwrap();
        let v = partial_likelihood(&d, &[800.0]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let dgp = Dgp::new(
            CovariateLaw::hadamard(3).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(3.0, 1.5).unwrap(),
            vec![0.5, -0.25, 0.0],
        )
        .unwrap();
        let d = sample_dataset(&dgp, 150, 4).unwrap();
        let theta = [0.2, 0.1, -0.3];
        let h = partial_likelihood_derivatives(&d, &theta, true).unwrap().hessian.unwrap();
        let step = 1e-6;
        for k in 0..3 {
            let mut p = theta;
            let mut q = theta;
            p[k] += step;
            q[k] -= step;
            let gp = partial_likelihood_gradient(&d, &p).unwrap();
            let gq = partial_likelihood_gradient(&d, &q).unwrap();
            for j in 0..3 {
                assert!(((gp[j] - gq[j]) / (2.0 * step) - h[j * 3 + k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn risk_set_sums_are_monotone() {
        let dgp = Dgp::new(
            CovariateLaw::hadamard(2).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(3.0, 1.5).unwrap(),
            vec![0.5, -0.25],
        )
        .unwrap();
        let d = sample_dataset(&dgp, 80, 9).unwrap();
        let rs = RiskSetSums::compute(&d, &[0.3, 0.3]).unwrap();
        assert!(rs.s0.windows(2).all(|w| w[0] >= w[1]));
        assert!(rs.s0.iter().all(|v| *v > 0.0));
        assert!((rs.s0_unscaled(0) - d.observations().iter().map(|o| dot(&o.x, &[0.3, 0.3]).exp()).sum::<f64>() / 80.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_sigma_hand_values() {
        let d = Dataset::new(vec![obs(1.0, true, &[0.0, 3.0, 0.0]), obs(2.0, false, &[1.0, -3.0, 0.0])]).unwrap();
        let s = empirical_sigma(&d);
        assert!((s[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1], 3.0);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn predictor_bound_check() {
        let d = two_point();
        assert!(check_predictor_bound(&d, &[1.0], 1.0).is_ok());
        assert!(check_predictor_bound(&d, &[1.5], 1.0).is_err());
    }
}

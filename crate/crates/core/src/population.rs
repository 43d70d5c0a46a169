//! Exact population functionals under a known [`Dgp`].
//!
//! With finitely many covariate atoms, every expectation over `X` is a finite
//! sum and every expectation over `Y` is a one-dimensional integral on
//! `[0, τ]` whose integrand is smooth between hazard breakpoints.
//!
//! Writing `A_r(t) = P(Y ≥ t | X = x_r)` and `q_r(t)` for the event
//! sub-density of atom `r`,
//!
//! ```text
//! μ(t; f_θ) = Σ_r p_r e^{f_θ(x_r)} A_r(t)
//! l(θ)      = −Σ_r p_r f_θ(x_r) P(Δ = 1 | x_r) + ∫₀^τ log μ(t; f_θ) Σ_r p_r q_r(t) dt
//! ```

use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::Dgp;
use crate::error::{Error, Result};
use crate::numeric::{dot, KahanSum};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::rng;

#[derive(Debug, Clone)]
pub struct PopulationContext {
    dgp: Dgp,
    quad: QuadratureOptions,
    sigma: Vec<f64>,
    exp_true_eta: Vec<f64>,
    log_probs: Vec<f64>,
    event_prob: Vec<f64>,
    true_loss: f64,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub draws: usize,
}

/// Loss value with derivatives restricted to a coordinate subset.
#[derive(Debug, Clone)]
pub struct LossDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `coords.len() × coords.len()`; empty when not requested.
    pub hessian: Vec<f64>,
}

impl PopulationContext {
    pub fn new(dgp: Dgp, quad: QuadratureOptions) -> Result<Self> {
        quad.validate()?;
        let sigma = dgp.covariates().sigma();
        let exp_true_eta = dgp.true_eta().iter().map(|e| e.exp()).collect();
        let log_probs = dgp.covariates().probs().iter().map(|p| p.ln()).collect();
        let mut ctx = Self {
            dgp,
            quad,
            sigma,
            exp_true_eta,
            log_probs,
            event_prob: Vec::new(),
            true_loss: 0.0,
        };
        ctx.event_prob = ctx.compute_event_probabilities()?;
        let theta_true = ctx.dgp.theta_true().to_vec();
        ctx.true_loss = ctx.expected_loss(&theta_true)?;
        Ok(ctx)
    }

    pub fn with_defaults(dgp: Dgp) -> Result<Self> {
        Self::new(dgp, QuadratureOptions::default())
    }

    pub fn dgp(&self) -> &Dgp {
        &self.dgp
    }

    pub fn quadrature(&self) -> &QuadratureOptions {
        &self.quad
    }

    /// Theoretical weights `σ_k = (E ψ_k²)^{1/2}`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `P(Δ = 1 | X = x_r)` per atom.
    pub fn event_probabilities(&self) -> &[f64] {
        &self.event_prob
    }

    /// `l(θ̄)`.
    pub fn true_loss(&self) -> f64 {
        self.true_loss
    }

    /// Linear predictor `f_θ(x_r)` at every atom.
    pub fn atom_eta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self.dgp.covariates().atoms().iter().map(|a| dot(a, theta)).collect())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dgp.dim() {
            return Err(Error::invalid(format!(
                "coefficient vector has length {}, expected {}",
                theta.len(),
                self.dgp.dim()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.dgp.tau()).contains(&t) {
            return Err(Error::invalid(format!("t = {t} outside [0, tau = {}]", self.dgp.tau())));
        }
        Ok(())
    }

    /// `log P(T ≥ t | x_r) = −Λ₀(t) e^{f̄(x_r)}`.
    #[inline]
    fn log_surv_t(&self, cum: f64, r: usize) -> f64 {
        -cum * self.exp_true_eta[r]
    }

    /// `log μ(t; f_θ)` given the atom linear predictors of `θ`.
    pub(crate) fn log_mu_from_eta(&self, eta: &[f64], t: f64) -> f64 {
        let cum = self.dgp.hazard().cumulative(t);
        self.log_mu_with_cum(eta, cum, t)
    }

    fn log_mu_with_cum(&self, eta: &[f64], cum: f64, t: f64) -> f64 {
        let terms: Vec<f64> = (0..eta.len())
            .map(|r| self.log_probs[r] + eta[r] + self.log_surv_t(cum, r))
            .collect();
        let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = terms.iter().map(|v| (v - mx).exp()).sum();
        mx + s.ln() + self.dgp.censoring().survival(t).ln()
    }

    /// `μ(t; f_θ) = E[1(Y ≥ t) e^{f_θ(X)}]`.
    pub fn mu(&self, theta: &[f64], t: f64) -> Result<f64> {
        self.check_time(t)?;
        let eta = self.atom_eta(theta)?;
        Ok(self.log_mu_from_eta(&eta, t).exp())
    }

    /// `E[1(Y ≥ t) ψ_k(X) e^{f_θ(X)}] / (μ(t; f_θ) σ_k)`, with `k` zero-based.
    pub fn f_ratio(&self, theta: &[f64], k: usize, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if k >= self.dgp.dim() {
            return Err(Error::invalid(format!("basis index {k} out of range")));
        }
        let eta = self.atom_eta(theta)?;
        let cum = self.dgp.hazard().cumulative(t);
        let logs: Vec<f64> = (0..eta.len())
            .map(|r| self.log_probs[r] + eta[r] + self.log_surv_t(cum, r))
            .collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (r, a) in self.dgp.covariates().atoms().iter().enumerate() {
            let w = (logs[r] - mx).exp();
            num += w * a[k];
            den += w;
        }
        if !(den > 0.0) || self.dgp.censoring().survival(t) <= 0.0 {
            return Err(Error::Assumption("μ(t) vanished".into()));
        }
        Ok(num / (den * self.sigma[k]))
    }

    /// Integrates `f(t, cum, rate, out)` over `[0, τ]`, piece by piece.
    fn integrate_pieces<F>(&self, dim: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(f64, f64, f64, &mut [f64]) + Sync,
    {
        let hazard = self.dgp.hazard();
        let mut total = vec![0.0; dim];
        for (lo, hi) in hazard.pieces(self.dgp.tau()) {
            let rate = hazard.rate(lo);
            let base = hazard.cumulative(lo);
            let part = integrate(
                |t, out| f(t, base + rate * (t - lo), rate, out),
                lo,
                hi,
                dim,
                &self.quad,
            )?;
            for (acc, v) in total.iter_mut().zip(part) {
                *acc += v;
            }
        }
        Ok(total)
    }

    fn compute_event_probabilities(&self) -> Result<Vec<f64>> {
        let n_atoms = self.exp_true_eta.len();
        self.integrate_pieces(n_atoms, |t, cum, rate, out| {
            let c = self.dgp.censoring().survival(t);
            for (r, o) in out.iter_mut().enumerate() {
                *o = rate * self.exp_true_eta[r] * self.log_surv_t(cum, r).exp() * c;
            }
        })
    }

    /// Event sub-density `Σ_r p_r q_r(t)`.
    #[inline]
    fn event_density(&self, cum: f64, rate: f64, t: f64) -> f64 {
        let probs = self.dgp.covariates().probs();
        let s: f64 = (0..probs.len())
            .map(|r| probs[r] * self.exp_true_eta[r] * self.log_surv_t(cum, r).exp())
            .sum();
        rate * self.dgp.censoring().survival(t) * s
    }

    fn linear_term(&self, eta: &[f64]) -> f64 {
        let probs = self.dgp.covariates().probs();
        let mut acc = KahanSum::new();
        for r in 0..eta.len() {
            acc.add(probs[r] * eta[r] * self.event_prob[r]);
        }
        acc.value()
    }

    /// Expected loss `l(θ) = P γ_{f_θ}`.
    pub fn expected_loss(&self, theta: &[f64]) -> Result<f64> {
        let eta = self.atom_eta(theta)?;
        let integral = self.integrate_pieces(1, |t, cum, rate, out| {
            out[0] = self.event_density(cum, rate, t) * self.log_mu_with_cum(&eta, cum, t);
        })?[0];
        Ok(integral - self.linear_term(&eta))
    }

    /// `l(θ)` together with its gradient (and optionally Hessian) with respect
    /// to the coordinates in `coords`.
    pub fn loss_derivatives(
        &self,
        theta: &[f64],
        coords: &[usize],
        with_hessian: bool,
    ) -> Result<LossDerivatives> {
        let eta = self.atom_eta(theta)?;
        let s = coords.len();
        if coords.iter().any(|&k| k >= self.dgp.dim()) {
            return Err(Error::invalid("coordinate index out of range"));
        }
        let atoms = self.dgp.covariates().atoms();
        let hdim = if with_hessian { s * (s + 1) / 2 } else { 0 };
        let dim = 1 + s + hdim;
        let n_atoms = eta.len();
        let integral = self.integrate_pieces(dim, |t, cum, rate, out| {
            let g = self.event_density(cum, rate, t);
            let mut logs = vec![0.0; n_atoms];
            let mut mx = f64::NEG_INFINITY;
            for r in 0..n_atoms {
                logs[r] = self.log_probs[r] + eta[r] + self.log_surv_t(cum, r);
                mx = mx.max(logs[r]);
            }
            let mut den = 0.0;
            let mut m1 = vec![0.0; s];
            let mut m2 = vec![0.0; hdim];
            for r in 0..n_atoms {
                let w = (logs[r] - mx).exp();
                den += w;
                for (i, &k) in coords.iter().enumerate() {
                    m1[i] += w * atoms[r][k];
                }
                if with_hessian {
                    let mut idx = 0;
                    for i in 0..s {
                        for j in 0..=i {
                            m2[idx] += w * atoms[r][coords[i]] * atoms[r][coords[j]];
                            idx += 1;
                        }
                    }
                }
            }
            out[0] = g * (mx + den.ln() + self.dgp.censoring().survival(t).ln());
            for i in 0..s {
                m1[i] /= den;
                out[1 + i] = g * m1[i];
            }
            if with_hessian {
                let mut idx = 0;
                for i in 0..s {
                    for j in 0..=i {
                        out[1 + s + idx] = g * (m2[idx] / den - m1[i] * m1[j]);
                        idx += 1;
                    }
                }
            }
        })?;

        let probs = self.dgp.covariates().probs();
        let value = integral[0] - self.linear_term(&eta);
        let gradient = coords
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let lin: f64 = (0..n_atoms)
                    .map(|r| probs[r] * atoms[r][k] * self.event_prob[r])
                    .sum();
                integral[1 + i] - lin
            })
            .collect();
        let mut hessian = Vec::new();
        if with_hessian {
            hessian = vec![0.0; s * s];
            let mut idx = 0;
            for i in 0..s {
                for j in 0..=i {
                    hessian[i * s + j] = integral[1 + s + idx];
                    hessian[j * s + i] = integral[1 + s + idx];
                    idx += 1;
                }
            }
        }
        Ok(LossDerivatives {
            value,
            gradient,
            hessian,
        })
    }

    /// Full gradient of `l`.
    pub fn expected_loss_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let coords: Vec<usize> = (0..self.dgp.dim()).collect();
        Ok(self.loss_derivatives(theta, &coords, false)?.gradient)
    }

    /// Absolute slack allowed below zero before an excess risk is reported
    /// as negative.
    fn excess_tolerance(&self, loss: f64) -> f64 {
        10.0 * self.quad.rel_tol * (1.0 + loss.abs() + self.true_loss.abs())
    }

    /// `ℰ(f_θ) = l(θ) − l(θ̄)`, clamped to zero inside the quadrature tolerance.
    pub fn excess_risk(&self, theta: &[f64]) -> Result<f64> {
        let loss = self.expected_loss(theta)?;
        Ok(self.clamp_excess(loss))
    }

    pub(crate) fn clamp_excess(&self, loss: f64) -> f64 {
        let e = loss - self.true_loss;
        if e < 0.0 && e >= -self.excess_tolerance(loss) {
            0.0
        } else {
            if e < 0.0 {
                log::warn!("excess risk {e:e} is below the quadrature tolerance");
            }
            e
        }
    }

    /// `‖f_θ − f_θ'‖∞` over the covariate support.
    pub fn sup_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dgp
            .covariates()
            .atoms()
            .iter()
            .map(|x| x.iter().zip(a.iter().zip(b)).map(|(v, (p, q))| v * (p - q)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// `‖f_θ − f_θ'‖` in `L₂(P_X)`.
    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let cov = self.dgp.covariates();
        cov.atoms()
            .iter()
            .zip(cov.probs())
            .map(|(x, p)| {
                let d: f64 = x.iter().zip(a.iter().zip(b)).map(|(v, (u, w))| v * (u - w)).sum();
                p * d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Independent Monte-Carlo estimate of `l(θ)` from `draws` fresh
    /// observations. Chunks use separate RNG streams, so the result does not
    /// depend on the thread count.
    pub fn mc_oracle_expected_loss(&self, theta: &[f64], draws: usize, seed: u64) -> Result<McEstimate> {
        if draws < 1000 {
            return Err(Error::invalid("Monte-Carlo oracle needs at least 1000 draws"));
        }
        let eta = self.atom_eta(theta)?;
        const CHUNK: usize = 10_000;
        let chunks = draws.div_ceil(CHUNK);
        let partial: Vec<(f64, f64)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng::stream(seed, c as u64);
                let len = CHUNK.min(draws - c * CHUNK);
                let (mut s, mut ss) = (KahanSum::new(), KahanSum::new());
                for _ in 0..len {
                    let (r, obs) = self.dgp.sample_observation(&mut rng);
                    let loss = if obs.event {
                        -(eta[r] - self.log_mu_from_eta(&eta, obs.y))
                    } else {
                        0.0
                    };
                    s.add(loss);
                    ss.add(loss * loss);
                }
                (s.value(), ss.value())
            })
            .collect();
        let (mut s, mut ss) = (KahanSum::new(), KahanSum::new());
        for (a, b) in partial {
            s.add(a);
            ss.add(b);
        }
        let n = draws as f64;
        let mean = s.value() / n;
        let var = ((ss.value() - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok(McEstimate {
            estimate: mean,
            standard_error: (var / n).sqrt(),
            draws,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{BaselineHazard, CensoringLaw, CovariateLaw};

    fn single_atom() -> PopulationContext {
        let dgp = Dgp::new(
            CovariateLaw::new(vec![vec![1.0]], vec![1.0]).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(2.0, 1.0).unwrap(),
            vec![0.0],
        )
        .unwrap();
        PopulationContext::with_defaults(dgp).unwrap()
    }

    fn two_atoms() -> PopulationContext {
        let dgp = Dgp::new(
            CovariateLaw::new(vec![vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.0, -1.0]], vec![0.3, 0.3, 0.4])
                .unwrap(),
            BaselineHazard::new(vec![0.0, 0.4], vec![0.8, 1.6]).unwrap(),
            CensoringLaw::new(3.0, 1.2).unwrap(),
            vec![0.4, -0.3],
        )
        .unwrap();
        PopulationContext::with_defaults(dgp).unwrap()
    }

    #[test]
    fn mu_closed_forms() {
        let ctx = single_atom();
        assert!((ctx.mu(&[0.0], 0.0).unwrap() - 1.0).abs() < 1e-15);
        let v = ctx.mu(&[0.0], 0.5).unwrap();
        assert!((v - (-0.5f64).exp() * 0.75).abs() < 1e-14);
        assert!(ctx.mu(&[0.0], 1.1).is_err());
    }

    #[test]
    fn mu_is_nonincreasing_and_bounded_below() {
        let ctx = two_atoms();
        let theta = [0.7, -0.2];
        let pi = ctx.dgp().pi();
        let eta = ctx.atom_eta(&theta).unwrap();
        let floor = pi * eta.iter().map(|e| e.exp()).fold(f64::INFINITY, f64::min);
        let mut prev = f64::INFINITY;
        for i in 0..=120 {
            let t = 1.2 * i as f64 / 120.0;
            let v = ctx.mu(&theta, t).unwrap();
            assert!(v <= prev + 1e-15);
            assert!(v >= floor * (1.0 - 1e-12));
            prev = v;
        }
    }

    #[test]
    fn event_probability_closed_form() {
        // λ₀ ≡ 1, θ̄ = 0, C₀ ~ U[0, 2], τ = 1: ∫₀¹ e^{-t}(1 - t/2) dt.
        let ctx = single_atom();
        let exact = (1.0 - (-1.0f64).exp()) - 0.5 * (1.0 - 2.0 * (-1.0f64).exp());
        assert!((ctx.event_probabilities()[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn excess_risk_zero_at_truth_and_positive_elsewhere() {
        let ctx = two_atoms();
        let truth = ctx.dgp().theta_true().to_vec();
        assert_eq!(ctx.excess_risk(&truth).unwrap(), 0.0);
        for th in [[0.0, 0.0], [1.0, 1.0], [0.4, 0.0], [-0.5, -0.3]] {
            assert!(ctx.excess_risk(&th).unwrap() > 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ctx = two_atoms();
        let theta = [0.1, 0.25];
        let d = ctx.loss_derivatives(&theta, &[0, 1], true).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let mut p = theta;
            let mut q = theta;
            p[k] += h;
            q[k] -= h;
            let fd = (ctx.expected_loss(&p).unwrap() - ctx.expected_loss(&q).unwrap()) / (2.0 * h);
            assert!((fd - d.gradient[k]).abs() <= 1e-4 * d.gradient[k].abs().max(1e-6));
            let gp = ctx.expected_loss_gradient(&p).unwrap();
            let gq = ctx.expected_loss_gradient(&q).unwrap();
            for j in 0..2 {
                let fd2 = (gp[j] - gq[j]) / (2.0 * h);
                assert!((fd2 - d.hessian[j * 2 + k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_truth() {
        let ctx = two_atoms();
        let g = ctx.expected_loss_gradient(ctx.dgp().theta_true()).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-8), "{g:?}");
    }

    #[test]
    fn f_ratio_single_atom_and_bound() {
        let ctx = single_atom();
        for t in [0.0, 0.3, 1.0] {
            assert!((ctx.f_ratio(&[0.4], 0, t).unwrap() - 1.0).abs() < 1e-15);
        }
        let ctx = two_atoms();
        let law = ctx.dgp().covariates();
        let sigma = law.sigma();
        let km = (0..2)
            .map(|k| law.atoms().iter().map(|a| a[k].abs() / sigma[k]).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        for t in [0.0, 0.6, 1.2] {
            for k in 0..2 {
                assert!(ctx.f_ratio(&[2.0, -1.0], k, t).unwrap().abs() <= km + 1e-12);
            }
        }
    }

    #[test]
    fn f_ratio_equal_profiles_average() {
        // θ = θ̄ = 0: both atoms share the at-risk profile, so the ratio is the
        // plain average of ψ/σ: (2 + 0)/2 / σ with σ = √2.
        let dgp = Dgp::new(
            CovariateLaw::new(vec![vec![2.0], vec![0.0]], vec![0.5, 0.5]).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(2.0, 1.0).unwrap(),
            vec![0.0],
        )
        .unwrap();
        let ctx = PopulationContext::with_defaults(dgp).unwrap();
        let v = ctx.f_ratio(&[0.0], 0, 0.5).unwrap();
        assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mc_oracle_is_reproducible_and_scales() {
        let ctx = two_atoms();
        let a = ctx.mc_oracle_expected_loss(&[0.0, 0.0], 1000, 5).unwrap();
        let b = ctx.mc_oracle_expected_loss(&[0.0, 0.0], 1000, 5).unwrap();
        assert_eq!(a, b);
        let c = ctx.mc_oracle_expected_loss(&[0.0, 0.0], 100_000, 5).unwrap();
        let ratio = a.standard_error / c.standard_error;
        assert!((7.0..14.0).contains(&ratio), "ratio {ratio}");
        assert!(ctx.mc_oracle_expected_loss(&[0.0, 0.0], 999, 5).is_err());
    }
}

//! Monte-Carlo certification of the concentration inequalities and the
//! oracle inequalities.
//!
//! Each check runs `R` independent replications on their own random streams,
//! records a per-replication statistic, and compares either its mean or its
//! exceedance frequency with the theoretical bound. Aggregation is by
//! replication index, so reports do not depend on the thread count.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    self, at_risk_tail, concentration_tail, theorem_probability, weighted_l1, BoundConfig, BoundConstants,
    OracleQuantities,
};
use crate::dgp::{Dataset, Dgp};
use crate::emploss::{intermediate_loss, partial_likelihood};
use crate::error::{Error, Result};
use crate::numeric::{dot, mean_and_se, median, ols_slope};
use crate::population::PopulationContext;
use crate::quadrature::QuadratureOptions;
use crate::rng;
use crate::solver::{fit_lasso, FitOptions};

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Vacuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// Fraction of replications in which the statistic crossed the threshold.
    Frequency,
    /// Monte-Carlo mean of the statistic.
    Mean,
}

/// One row of the optional per-replication dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub replications: usize,
    pub kind: StatisticKind,
    pub empirical: f64,
    pub mc_standard_error: f64,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub verdict: Verdict,
    pub seed: u64,
    /// Replications that produced no statistic (e.g. solver non-convergence).
    pub inconclusive: usize,
    pub extras: BTreeMap<String, f64>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

/// `fail` only if `empirical − 3·SE > bound`.
pub fn frequency_verdict(empirical: f64, se: f64, bound: f64) -> Verdict {
    if bound >= 1.0 {
        Verdict::Vacuous
    } else if empirical - 3.0 * se > bound {
        Verdict::Fail
    } else {
        Verdict::Pass
    }
}

fn mean_verdict(empirical: f64, se: f64, bound: f64) -> Verdict {
    if empirical - 3.0 * se > bound {
        Verdict::Fail
    } else {
        Verdict::Pass
    }
}

/// Binomial standard error `√(p(1−p)/R)`.
pub fn binomial_se(p: f64, r: usize) -> f64 {
    (p * (1.0 - p) / r as f64).sqrt()
}

fn frequency_result(
    name: &str,
    seed: u64,
    records: Vec<ReplicationRecord>,
    bound: f64,
    threshold: f64,
) -> CheckResult {
    let r = records.len();
    let hits = records.iter().filter(|x| x.exceeded).count();
    let p = hits as f64 / r as f64;
    let se = binomial_se(p, r);
    CheckResult {
        name: name.to_string(),
        replications: r,
        kind: StatisticKind::Frequency,
        empirical: p,
        mc_standard_error: se,
        bound,
        threshold: Some(threshold),
        verdict: frequency_verdict(p, se, bound),
        seed,
        inconclusive: 0,
        extras: BTreeMap::new(),
        records,
    }
}

fn require_replications(r: usize, min: usize) -> Result<()> {
    if r < min {
        return Err(Error::invalid(format!("at least {min} replications are required, got {r}")));
    }
    Ok(())
}

/// `Z_θ(M) = |[l̃_n(θ) − l(θ)] − [l̃_n(θ*) − l(θ*)]|`.
pub fn z_statistic(dataset: &Dataset, ctx: &PopulationContext, theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    let pop = (ctx.expected_loss(theta)?, ctx.expected_loss(theta_star)?);
    z_with_population(dataset, ctx, theta, theta_star, pop)
}

fn z_with_population(
    dataset: &Dataset,
    ctx: &PopulationContext,
    theta: &[f64],
    theta_star: &[f64],
    (l_theta, l_star): (f64, f64),
) -> Result<f64> {
    let a = intermediate_loss(dataset, ctx, theta)? - l_theta;
    let b = intermediate_loss(dataset, ctx, theta_star)? - l_star;
    Ok((a - b).abs())
}

/// `R_θ(M) = |[l_n(θ) − l̃_n(θ)] − [l_n(θ*) − l̃_n(θ*)]|`.
pub fn r_statistic(dataset: &Dataset, ctx: &PopulationContext, theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    let a = partial_likelihood(dataset, theta)? - intermediate_loss(dataset, ctx, theta)?;
    let b = partial_likelihood(dataset, theta_star)? - intermediate_loss(dataset, ctx, theta_star)?;
    Ok((a - b).abs())
}

/// At-risk fraction tail: frequency of `n⁻¹Σ 1(Y_i ≥ τ) ≤ π/2`
/// against `2e^{−nπ²/2}`.
pub fn check_at_risk_tail(dgp: &Dgp, n: usize, replications: usize, seed: u64) -> Result<CheckResult> {
    require_replications(replications, 1000)?;
    let tau = dgp.tau();
    let pi = dgp.pi();
    let threshold = pi / 2.0;
    let records: Vec<ReplicationRecord> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let d = dgp.sample_with(n, &mut rng::stream(seed, i as u64))?;
            let frac = d.observations().iter().filter(|o| o.y >= tau).count() as f64 / n as f64;
            Ok(ReplicationRecord {
                replication: i,
                statistic: frac,
                threshold,
                exceeded: frac <= threshold,
            })
        })
        .collect::<Result<_>>()?;
    let mut res = frequency_result("at_risk_tail", seed, records, at_risk_tail(n, pi), threshold);
    res.extras.insert("pi".into(), pi);
    Ok(res)
}

/// Weighted at-risk process `t ↦ n⁻¹Σ 1(Y_i ≥ t) w(X_i)` against its mean
/// `t ↦ E[1(Y ≥ t) w(X)]`, for atom weights `w_r`.
#[derive(Debug, Clone)]
pub struct WeightedAtRiskProfile {
    tau: f64,
    upper: f64,
    probs: Vec<f64>,
    exp_true_eta: Vec<f64>,
    weights: Vec<f64>,
    hazard: crate::dgp::BaselineHazard,
    /// Interior stationary points of the mean function on `(0, τ)`.
    critical: Vec<f64>,
}

impl WeightedAtRiskProfile {
    pub fn new(dgp: &Dgp, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dgp.covariates().len() {
            return Err(Error::invalid("one weight per covariate atom is required"));
        }
        let mut p = Self {
            tau: dgp.tau(),
            upper: dgp.censoring().upper(),
            probs: dgp.covariates().probs().to_vec(),
            exp_true_eta: dgp.true_eta().iter().map(|e| e.exp()).collect(),
            weights,
            hazard: dgp.hazard().clone(),
            critical: Vec::new(),
        };
        p.critical = p.find_critical_points();
        Ok(p)
    }

    pub fn mean(&self, t: f64) -> f64 {
        let cum = self.hazard.cumulative(t);
        let cens = 1.0 - t / self.upper;
        let s: f64 = (0..self.probs.len())
            .map(|r| self.probs[r] * self.weights[r] * (-cum * self.exp_true_eta[r]).exp())
            .sum();
        cens * s
    }

    fn mean_derivative(&self, t: f64, rate: f64) -> f64 {
        let cum = self.hazard.cumulative(t);
        let cens = 1.0 - t / self.upper;
        (0..self.probs.len())
            .map(|r| {
                let s = (-cum * self.exp_true_eta[r]).exp();
                self.probs[r] * self.weights[r] * s * (-1.0 / self.upper - cens * rate * self.exp_true_eta[r])
            })
            .sum()
    }

    fn find_critical_points(&self) -> Vec<f64> {
        const GRID: usize = 256;
        let mut out = Vec::new();
        if self.weights.iter().all(|w| *w >= 0.0) || self.weights.iter().all(|w| *w <= 0.0) {
            // Same-sign weights give a monotone mean.
            return out;
        }
        for (lo, hi) in self.hazard.pieces(self.tau) {
            let rate = self.hazard.rate(0.5 * (lo + hi));
            let d = |t: f64| self.mean_derivative(t, rate);
            let mut a = lo;
            let mut da = d(a);
            for j in 1..=GRID {
                let b = lo + (hi - lo) * j as f64 / GRID as f64;
                let db = d(b);
                if da == 0.0 && a > 0.0 && a < self.tau {
                    out.push(a);
                } else if da * db < 0.0 {
                    let (mut x0, mut x1, mut f0) = (a, b, da);
                    for _ in 0..200 {
                        let mid = 0.5 * (x0 + x1);
                        if mid <= x0 || mid >= x1 {
                            break;
                        }
                        let fm = d(mid);
                        if (fm < 0.0) == (f0 < 0.0) {
                            x0 = mid;
                            f0 = fm;
                        } else {
                            x1 = mid;
                        }
                    }
                    out.push(0.5 * (x0 + x1));
                }
                a = b;
                da = db;
            }
        }
        out
    }

    /// `sup_{t ∈ [0, τ]} |n⁻¹Σ 1(Y_i ≥ t) w_i − E[1(Y ≥ t) w(X)]|`, evaluated
    /// exactly. `obs` holds `(Y_i, w_i)`.
    pub fn sup_deviation(&self, obs: &[(f64, f64)]) -> f64 {
        let n = obs.len() as f64;
        let mut sorted: Vec<(f64, f64)> = obs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        // suffix[j] = Σ_{i ≥ j} w_i over the ascending order
        let mut suffix = vec![0.0; sorted.len() + 1];
        for j in (0..sorted.len()).rev() {
            suffix[j] = suffix[j + 1] + sorted[j].1;
        }
        // empirical value at t with indicator Y ≥ t
        let at = |t: f64| suffix[sorted.partition_point(|o| o.0 < t)] / n;
        // right limit at t: indicator Y > t
        let after = |t: f64| suffix[sorted.partition_point(|o| o.0 <= t)] / n;

        let mut best = (at(0.0) - self.mean(0.0)).abs();
        best = best.max((at(self.tau) - self.mean(self.tau)).abs());
        for &(y, _) in &sorted {
            if y > self.tau {
                break;
            }
            let m = self.mean(y);
            best = best.max((at(y) - m).abs());
            if y < self.tau {
                best = best.max((after(y) - m).abs());
            }
        }
        for &t in &self.critical {
            best = best.max((at(t) - self.mean(t)).abs());
        }
        best
    }
}

/// Sup-deviation of the weighted at-risk process. Without the basis this is
/// the process with weights `e^{f_θ}` and threshold `U_m ā_n r₁`; with it,
/// the maximum over `k = 0..m` of the processes with weights
/// `e^{f_θ}ψ_k/σ_k` (`ψ₀ ≡ 1`) and threshold `K_m U_m(ā_n r₁ + √(log(2m)/n))`.
pub struct SupDeviationSpec<'a> {
    pub dgp: &'a Dgp,
    pub theta: &'a [f64],
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub with_basis: bool,
    pub constants: &'a BoundConstants,
    pub w: f64,
    pub threshold_scale: f64,
}

pub fn check_sup_deviation(spec: &SupDeviationSpec<'_>) -> Result<CheckResult> {
    require_replications(spec.replications, 1000)?;
    let SupDeviationSpec {
        dgp,
        theta,
        n,
        constants: c,
        ..
    } = *spec;
    if theta.len() != dgp.dim() {
        return Err(Error::invalid("coefficient vector has the wrong length"));
    }
    let atoms = dgp.covariates().atoms();
    let exp_eta: Vec<f64> = atoms.iter().map(|a| dot(a, theta).exp()).collect();
    let sigma = &c.sigma;
    let columns = if spec.with_basis { dgp.dim() + 1 } else { 1 };
    let basis = |x: &[f64], k: usize| if k == 0 { 1.0 } else { x[k - 1] / sigma[k - 1] };
    let profiles: Vec<WeightedAtRiskProfile> = (0..columns)
        .map(|k| WeightedAtRiskProfile::new(dgp, atoms.iter().zip(&exp_eta).map(|(a, e)| e * basis(a, k)).collect()))
        .collect::<Result<_>>()?;
    let tail = concentration_tail(c, c.r1);
    let (name, threshold, bound) = if spec.with_basis {
        let th = c.k_m * c.u_m * (c.abar_n * c.r1 + ((2.0 * c.m as f64).ln() / n as f64).sqrt());
        ("sup_deviation_basis", th, spec.w * spec.w * tail / 10.0)
    } else {
        ("sup_deviation", c.u_m * c.abar_n * c.r1, spec.w * spec.w * tail / 5.0)
    };
    let threshold = threshold * spec.threshold_scale;
    let records: Vec<ReplicationRecord> = (0..spec.replications)
        .into_par_iter()
        .map(|i| {
            let d = dgp.sample_with(n, &mut rng::stream(spec.seed, i as u64))?;
            let mut stat: f64 = 0.0;
            for (k, profile) in profiles.iter().enumerate() {
                let obs: Vec<(f64, f64)> =
                    d.observations().iter().map(|o| (o.y, dot(&o.x, theta).exp() * basis(&o.x, k))).collect();
                stat = stat.max(profile.sup_deviation(&obs));
            }
            Ok(ReplicationRecord {
                replication: i,
                statistic: stat,
                threshold,
                exceeded: stat >= threshold,
            })
        })
        .collect::<Result<_>>()?;
    let mut res = frequency_result(name, spec.seed, records, bound, threshold);
    res.extras.insert("w".into(), spec.w);
    res.extras.insert("u_m".into(), c.u_m);
    Ok(res)
}

/// Family of coefficient pairs at which the `Z`/`R` statistics are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSpec {
    pub theta: Vec<f64>,
    pub theta_star: Vec<f64>,
    /// Radius `M ≥ I(θ − θ*)`.
    pub radius: f64,
}

impl PairSpec {
    pub fn new(theta: Vec<f64>, theta_star: Vec<f64>, radius: f64, sigma: &[f64]) -> Result<Self> {
        if theta.len() != sigma.len() || theta_star.len() != sigma.len() {
            return Err(Error::invalid("coefficient vectors have the wrong length"));
        }
        let diff: Vec<f64> = theta.iter().zip(&theta_star).map(|(a, b)| a - b).collect();
        let i = weighted_l1(&diff, sigma);
        if radius < i * (1.0 - 1e-12) {
            return Err(Error::invalid(format!("M = {radius} is smaller than I(θ − θ*) = {i}")));
        }
        Ok(Self {
            theta,
            theta_star,
            radius,
        })
    }
}

/// Monte-Carlo mean of `Z_θ(M)` against `ā_n M`, plus the Rademacher
/// diagnostic `E max_k |n⁻¹Σ ε_i Δ_i ψ_k(X_i)/σ_k|` against `a_n`.
pub fn check_symmetrization(
    dgp: &Dgp,
    ctx: &PopulationContext,
    pair: &PairSpec,
    n: usize,
    replications: usize,
    seed: u64,
    constants: &BoundConstants,
) -> Result<CheckResult> {
    require_replications(replications, 1000)?;
    let pop = (ctx.expected_loss(&pair.theta)?, ctx.expected_loss(&pair.theta_star)?);
    let sigma = &constants.sigma;
    let rows: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let d = dgp.sample_with(n, &mut rng)?;
            let z = z_with_population(&d, ctx, &pair.theta, &pair.theta_star, pop)?;
            let mut sums = vec![0.0; sigma.len()];
            for o in d.observations() {
                let eps = if rng.random::<bool>() { 1.0 } else { -1.0 };
                if o.event {
                    for k in 0..sigma.len() {
                        sums[k] += eps * o.x[k] / sigma[k];
                    }
                }
            }
            let rad = sums.iter().map(|s| (s / n as f64).abs()).fold(0.0, f64::max);
            Ok((z, rad))
        })
        .collect::<Result<_>>()?;
    let zs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rads: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (mean, se) = mean_and_se(&zs);
    let (rad_mean, rad_se) = mean_and_se(&rads);
    let bound = constants.abar_n * pair.radius;
    let mut extras = BTreeMap::new();
    extras.insert("radius".into(), pair.radius);
    extras.insert("rademacher_mean".into(), rad_mean);
    extras.insert("rademacher_se".into(), rad_se);
    extras.insert("a_n".into(), constants.a_n);
    extras.insert("slack_ratio".into(), if mean > 0.0 { bound / mean } else { f64::INFINITY });
    Ok(CheckResult {
        name: "symmetrization".into(),
        replications,
        kind: StatisticKind::Mean,
        empirical: mean,
        mc_standard_error: se,
        bound,
        threshold: None,
        verdict: mean_verdict(mean, se, bound),
        seed,
        inconclusive: 0,
        extras,
        records: zs
            .iter()
            .enumerate()
            .map(|(i, z)| ReplicationRecord {
                replication: i,
                statistic: *z,
                threshold: bound,
                exceeded: *z > bound,
            })
            .collect(),
    })
}

/// Frequency of `Z_θ(M) ≥ λ̄ᴬ M` against `e^{−nā_n²r₁²}`.
#[allow(clippy::too_many_arguments)]
pub fn check_z_tail(
    dgp: &Dgp,
    ctx: &PopulationContext,
    pair: &PairSpec,
    n: usize,
    replications: usize,
    seed: u64,
    constants: &BoundConstants,
    threshold_scale: f64,
) -> Result<CheckResult> {
    require_replications(replications, 1000)?;
    let pop = (ctx.expected_loss(&pair.theta)?, ctx.expected_loss(&pair.theta_star)?);
    let threshold = constants.lam_a * pair.radius * threshold_scale;
    let records: Vec<ReplicationRecord> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let d = dgp.sample_with(n, &mut rng::stream(seed, i as u64))?;
            let z = z_with_population(&d, ctx, &pair.theta, &pair.theta_star, pop)?;
            Ok(ReplicationRecord {
                replication: i,
                statistic: z,
                threshold,
                exceeded: z >= threshold && z > 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let mut res = frequency_result("z_tail", seed, records, concentration_tail(constants, constants.r1), threshold);
    res.extras.insert("radius".into(), pair.radius);
    Ok(res)
}

/// Frequency of `R_θ(M) ≥ λ̄ᴮ M` against `2e^{−nπ²/2} + (3/10)W²e^{−nā_n²r₁²}`.
#[allow(clippy::too_many_arguments)]
pub fn check_r_tail(
    dgp: &Dgp,
    ctx: &PopulationContext,
    pair: &PairSpec,
    n: usize,
    replications: usize,
    seed: u64,
    constants: &BoundConstants,
    w: f64,
    threshold_scale: f64,
) -> Result<CheckResult> {
    require_replications(replications, 1000)?;
    let threshold = constants.lam_b * pair.radius * threshold_scale;
    let records: Vec<ReplicationRecord> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let d = dgp.sample_with(n, &mut rng::stream(seed, i as u64))?;
            let r = r_statistic(&d, ctx, &pair.theta, &pair.theta_star)?;
            Ok(ReplicationRecord {
                replication: i,
                statistic: r,
                threshold,
                exceeded: r >= threshold && r > 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let bound = at_risk_tail(n, constants.pi) + 0.3 * w * w * concentration_tail(constants, constants.r1);
    let mut res = frequency_result("r_tail", seed, records, bound, threshold);
    res.extras.insert("radius".into(), pair.radius);
    res.extras.insert("w".into(), w);
    Ok(res)
}

/// Per-replication outcome of fitting the lasso at `λ_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OracleReplication {
    excess: f64,
    l1_distance: f64,
}

fn fit_at_lambda(
    dgp: &Dgp,
    ctx: &PopulationContext,
    n: usize,
    lambda: f64,
    fit: &FitOptions,
    seed: u64,
    index: usize,
) -> Result<Option<(f64, Vec<f64>)>> {
    let d = dgp.sample_with(n, &mut rng::stream(seed, index as u64))?;
    match fit_lasso(&d, lambda, ctx.sigma(), fit) {
        Ok(r) if r.converged => Ok(Some((ctx.excess_risk(&r.theta_hat)?, r.theta_hat))),
        Ok(_) => Ok(None),
        Err(Error::Divergence(msg)) => {
            log::warn!("replication {index}: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// The two oracle inequalities: per replication, fit at `λ_n` with
/// theoretical weights, then test `ℰ(f_θ̂) ≤ ε*/(1−δ)` and
/// `I(θ̂ − θ*) ≤ d(δ₁,δ₂)ζ*/b`. Violation frequencies are compared with one
/// minus the guaranteed probability; the satisfaction frequencies are in
/// `extras`.
#[allow(clippy::too_many_arguments)]
pub fn check_oracle(
    dgp: &Dgp,
    ctx: &PopulationContext,
    n: usize,
    replications: usize,
    seed: u64,
    cfg: &BoundConfig,
    constants: &BoundConstants,
    oracle: &OracleQuantities,
    fit: &FitOptions,
) -> Result<[CheckResult; 2]> {
    if replications == 0 {
        return Err(Error::invalid("at least one replication is required"));
    }
    if !oracle.cond1_ok {
        log::warn!(
            "Condition I is not certified: sup-distance {} exceeds eta {}",
            oracle.cond1_sup,
            cfg.eta
        );
    }
    let prob = theorem_probability(cfg, constants, n)?;
    let excess_bound = oracle.eps_star / (1.0 - cfg.delta);
    let l1_bound = prob.d_delta * oracle.zeta_star / cfg.b;
    let outcomes: Vec<Option<OracleReplication>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            Ok(fit_at_lambda(dgp, ctx, n, constants.lam_n, fit, seed, i)?.map(|(excess, theta)| {
                let diff: Vec<f64> = theta.iter().zip(&oracle.theta_star).map(|(a, b)| a - b).collect();
                OracleReplication {
                    excess,
                    l1_distance: weighted_l1(&diff, &constants.sigma),
                }
            }))
        })
        .collect::<Result<_>>()?;
    let inconclusive = outcomes.iter().filter(|o| o.is_none()).count();
    let done: Vec<(usize, OracleReplication)> =
        outcomes.iter().enumerate().filter_map(|(i, o)| o.map(|o| (i, o))).collect();
    let violation_bound = 1.0 - prob.clipped;

    let build = |name: &str, threshold: f64, stat: &dyn Fn(&OracleReplication) -> f64| -> CheckResult {
        let records: Vec<ReplicationRecord> = done
            .iter()
            .map(|(i, o)| {
                let s = stat(o);
                ReplicationRecord {
                    replication: *i,
                    statistic: s,
                    threshold,
                    exceeded: s > threshold,
                }
            })
            .collect();
        let r = records.len();
        let viol = if r == 0 {
            f64::NAN
        } else {
            records.iter().filter(|x| x.exceeded).count() as f64 / r as f64
        };
        let se = if r == 0 { f64::NAN } else { binomial_se(viol, r) };
        let verdict = if prob.vacuous {
            Verdict::Vacuous
        } else if r > 0 && viol - 3.0 * se > violation_bound {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        let mut extras = BTreeMap::new();
        extras.insert("satisfaction_frequency".into(), 1.0 - viol);
        extras.insert("theorem_probability_raw".into(), prob.raw);
        extras.insert("theorem_probability_clipped".into(), prob.clipped);
        extras.insert("eps_star".into(), oracle.eps_star);
        extras.insert("zeta_star".into(), oracle.zeta_star);
        extras.insert("lambda_n".into(), constants.lam_n);
        extras.insert("condition_i_certified".into(), f64::from(u8::from(oracle.cond1_ok)));
        extras.insert("condition_ii_certified".into(), f64::from(u8::from(oracle.cond2_ok)));
        CheckResult {
            name: name.to_string(),
            replications,
            kind: StatisticKind::Frequency,
            empirical: viol,
            mc_standard_error: se,
            bound: violation_bound,
            threshold: Some(threshold),
            verdict,
            seed,
            inconclusive,
            extras,
            records,
        }
    };
    Ok([
        build("oracle_excess_risk", excess_bound, &|o| o.excess),
        build("oracle_l1_distance", l1_bound, &|o| o.l1_distance),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub lambda: f64,
    pub median_excess: f64,
    pub mean_excess: f64,
    pub mean_nonzero: f64,
    pub replications: usize,
    pub inconclusive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of log median excess risk on log n.
    pub slope: f64,
    pub lambda_scale: f64,
    pub seed: u64,
}

/// Median excess risk of `θ̂_n` at `λ = lambda_scale · λ_n` over an n-grid.
#[allow(clippy::too_many_arguments)]
pub fn rate_sweep(
    dgp: &Dgp,
    ctx: &PopulationContext,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
    cfg: &BoundConfig,
    fit: &FitOptions,
    lambda_scale: f64,
) -> Result<SweepResult> {
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 4 {
        return Err(Error::invalid("the sweep needs at least 4 distinct sample sizes"));
    }
    if grid[grid.len() - 1] < 16 * grid[0] {
        return Err(Error::invalid("the sweep grid must span at least a factor of 16"));
    }
    if replications == 0 || !(lambda_scale >= 0.0) {
        return Err(Error::invalid("sweep needs replications ≥ 1 and a nonnegative lambda scale"));
    }
    let mut rows = Vec::new();
    for (gi, &n) in grid.iter().enumerate() {
        let constants = bounds::bound_constants(dgp, n, cfg)?;
        let lambda = lambda_scale * constants.lam_n;
        let sub = rng::derive_seed(seed, &format!("sweep/{gi}"));
        let outcomes: Vec<Option<(f64, Vec<f64>)>> = (0..replications)
            .into_par_iter()
            .map(|i| fit_at_lambda(dgp, ctx, n, lambda, fit, sub, i))
            .collect::<Result<_>>()?;
        let done: Vec<&(f64, Vec<f64>)> = outcomes.iter().flatten().collect();
        let excess: Vec<f64> = done.iter().map(|d| d.0).collect();
        let nz: Vec<f64> = done.iter().map(|d| d.1.iter().filter(|v| **v != 0.0).count() as f64).collect();
        rows.push(SweepRow {
            n,
            lambda,
            median_excess: if excess.is_empty() { f64::NAN } else { median(&excess) },
            mean_excess: mean_and_se(&excess).0,
            mean_nonzero: mean_and_se(&nz).0,
            replications,
            inconclusive: replications - done.len(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_excess.ln()).collect();
    Ok(SweepResult {
        slope: ols_slope(&xs, &ys),
        rows,
        lambda_scale,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    AtRiskTail,
    SupDeviation,
    SupDeviationBasis,
    Symmetrization,
    ZTail,
    RTail,
    Oracle,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::AtRiskTail,
        CheckKind::SupDeviation,
        CheckKind::SupDeviationBasis,
        CheckKind::Symmetrization,
        CheckKind::ZTail,
        CheckKind::RTail,
        CheckKind::Oracle,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub checks: Vec<CheckKind>,
    pub n: usize,
    pub replications: usize,
    pub at_risk_replications: usize,
    pub oracle_replications: usize,
    /// `θ − θ*` for the `Z`/`R`/sup-deviation checks; defaults to an
    /// alternating ±0.1 pattern.
    pub perturbation: Option<Vec<f64>>,
    /// `M = radius_factor · I(θ − θ*)`.
    pub radius_factor: f64,
    pub n_grid: Vec<usize>,
    pub sweep_replications: usize,
    /// Multiplier on `λ_n` in the sweep (1 reproduces the theoretical level).
    pub lambda_scale: f64,
    /// Multiplier on the tail thresholds; a test hook, 1 in normal use.
    pub threshold_scale: f64,
    pub include_timings: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            checks: CheckKind::ALL.to_vec(),
            n: 400,
            replications: 1000,
            at_risk_replications: 10_000,
            oracle_replications: 200,
            perturbation: None,
            radius_factor: 1.0,
            n_grid: vec![250, 500, 1000, 2000, 4000],
            sweep_replications: 100,
            lambda_scale: 1.0,
            threshold_scale: 1.0,
            include_timings: false,
        }
    }
}

/// Everything the harness needs; serialized verbatim into the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationPlan {
    pub dgp: Dgp,
    pub quadrature: QuadratureOptions,
    pub bounds: BoundConfig,
    pub s_max: usize,
    pub fit: FitOptions,
    pub verify: VerifyOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub config: VerificationPlan,
    pub constants: BoundConstants,
    pub oracle: OracleQuantities,
    pub pair: PairSpec,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl VerificationReport {
    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(|c| c.verdict == Verdict::Fail)
    }
}

fn default_perturbation(m: usize) -> Vec<f64> {
    (0..m).map(|k| if k % 2 == 0 { 0.1 } else { -0.1 }).collect()
}

/// Runs every enabled check of the plan; deterministic in the plan.
pub fn run_verification(plan: &VerificationPlan) -> Result<VerificationReport> {
    let v = &plan.verify;
    if !(v.threshold_scale >= 0.0) || !(v.radius_factor >= 1.0) {
        return Err(Error::invalid("threshold_scale must be ≥ 0 and radius_factor ≥ 1"));
    }
    let ctx = PopulationContext::new(plan.dgp.clone(), plan.quadrature)?;
    let dgp = ctx.dgp();
    let constants = bounds::bound_constants(dgp, v.n, &plan.bounds)?;
    let oracle = bounds::oracle_quantities(&ctx, &plan.bounds, &constants, plan.s_max, rng::derive_seed(plan.seed, "oracle"))?;

    let m = dgp.dim();
    let delta = v.perturbation.clone().unwrap_or_else(|| default_perturbation(m));
    if delta.len() != m {
        return Err(Error::invalid(format!("perturbation has length {}, expected {m}", delta.len())));
    }
    let mut theta: Vec<f64> = oracle.theta_star.iter().zip(&delta).map(|(a, b)| a + b).collect();
    crate::solver::project_l1_ball(&mut theta, plan.bounds.l1_radius);
    let diff: Vec<f64> = theta.iter().zip(&oracle.theta_star).map(|(a, b)| a - b).collect();
    let radius = v.radius_factor * weighted_l1(&diff, &constants.sigma);
    let pair = PairSpec::new(theta, oracle.theta_star.clone(), radius, &constants.sigma)?;

    let mut fit = plan.fit.clone();
    fit.l1_radius = Some(plan.bounds.l1_radius);

    let mut kinds = v.checks.clone();
    kinds.sort_unstable();
    kinds.dedup();
    let mut checks = Vec::new();
    let mut timings = BTreeMap::new();
    for kind in kinds {
        let started = std::time::Instant::now();
        let seed = rng::derive_seed(plan.seed, &format!("{kind:?}"));
        match kind {
            CheckKind::AtRiskTail => checks.push(check_at_risk_tail(dgp, v.n, v.at_risk_replications, seed)?),
            CheckKind::SupDeviation | CheckKind::SupDeviationBasis => {
                checks.push(check_sup_deviation(&SupDeviationSpec {
                    dgp,
                    theta: &pair.theta,
                    n: v.n,
                    replications: v.replications,
                    seed,
                    with_basis: kind == CheckKind::SupDeviationBasis,
                    constants: &constants,
                    w: plan.bounds.w,
                    threshold_scale: v.threshold_scale,
                })?)
            }
            CheckKind::Symmetrization => {
                checks.push(check_symmetrization(dgp, &ctx, &pair, v.n, v.replications, seed, &constants)?)
            }
            CheckKind::ZTail => checks.push(check_z_tail(
                dgp,
                &ctx,
                &pair,
                v.n,
                v.replications,
                seed,
                &constants,
                v.threshold_scale,
            )?),
            CheckKind::RTail => checks.push(check_r_tail(
                dgp,
                &ctx,
                &pair,
                v.n,
                v.replications,
                seed,
                &constants,
                plan.bounds.w,
                v.threshold_scale,
            )?),
            CheckKind::Oracle => checks.extend(check_oracle(
                dgp,
                &ctx,
                v.n,
                v.oracle_replications,
                seed,
                &plan.bounds,
                &constants,
                &oracle,
                &fit,
            )?),
        }
        timings.insert(format!("{kind:?}"), started.elapsed().as_secs_f64());
    }
    Ok(VerificationReport {
        version: REPORT_VERSION.into(),
        config_hash: None,
        seed: plan.seed,
        config: plan.clone(),
        constants,
        oracle,
        pair,
        checks,
        sweep: None,
        timings: v.include_timings.then_some(timings),
    })
}

/// Runs the rate sweep of the plan.
pub fn run_sweep(plan: &VerificationPlan) -> Result<SweepResult> {
    let ctx = PopulationContext::new(plan.dgp.clone(), plan.quadrature)?;
    let mut fit = plan.fit.clone();
    fit.l1_radius = Some(plan.bounds.l1_radius);
    rate_sweep(
        ctx.dgp(),
        &ctx,
        &plan.verify.n_grid,
        plan.verify.sweep_replications,
        rng::derive_seed(plan.seed, "sweep"),
        &plan.bounds,
        &fit,
        plan.verify.lambda_scale,
    )
}

/// Writes `(check, replication, statistic, threshold, exceeded)` rows.
pub fn write_replications_csv<W: std::io::Write>(checks: &[CheckResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    out.write_record(["check", "replication", "statistic", "threshold", "exceeded"]).map_err(io)?;
    for c in checks {
        for r in &c.records {
            out.write_record([
                c.name.clone(),
                r.replication.to_string(),
                format!("{:e}", r.statistic),
                format!("{:e}", r.threshold),
                u8::from(r.exceeded).to_string(),
            ])
            .map_err(io)?;
        }
    }
    out.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{BaselineHazard, CensoringLaw, CovariateLaw};

    fn single_atom(upper: f64) -> Dgp {
        Dgp::new(
            CovariateLaw::new(vec![vec![1.0]], vec![1.0]).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(upper, 1.0).unwrap(),
            vec![0.0],
        )
        .unwrap()
    }

    fn two_atom() -> Dgp {
        Dgp::new(
            CovariateLaw::new(vec![vec![1.0, 0.5], vec![-1.0, 1.0], vec![0.5, -1.0]], vec![0.3, 0.3, 0.4]).unwrap(),
            BaselineHazard::new(vec![0.0, 0.4], vec![0.7, 1.6]).unwrap(),
            CensoringLaw::new(3.0, 1.0).unwrap(),
            vec![0.6, -0.4],
        )
        .unwrap()
    }

    /// Brute force over a uniform grid plus every jump point and its right limit.
    fn brute_sup(profile: &WeightedAtRiskProfile, obs: &[(f64, f64)], tau: f64, grid: usize) -> f64 {
        let n = obs.len() as f64;
        let emp = |t: f64, strict: bool| -> f64 {
            obs.iter().filter(|o| if strict { o.0 > t } else { o.0 >= t }).map(|o| o.1).sum::<f64>() / n
        };
        let mut best: f64 = 0.0;
        for i in 0..=grid {
            let t = tau * i as f64 / grid as f64;
            best = best.max((emp(t, false) - profile.mean(t)).abs());
        }
        for o in obs.iter().filter(|o| o.0 <= tau) {
            best = best.max((emp(o.0, false) - profile.mean(o.0)).abs());
            if o.0 < tau {
                best = best.max((emp(o.0, true) - profile.mean(o.0)).abs());
            }
        }
        best
    }

    #[test]
    fn exact_sup_matches_dense_grid() {
        let dgp = single_atom(f64::INFINITY);
        let profile = WeightedAtRiskProfile::new(&dgp, vec![1.0]).unwrap();
        for seed in 0..20 {
            let d = dgp.sample_with(60, &mut rng::stream(seed, 0)).unwrap();
            let obs: Vec<(f64, f64)> = d.observations().iter().map(|o| (o.y, 1.0)).collect();
            let exact = profile.sup_deviation(&obs);
            let brute = brute_sup(&profile, &obs, 1.0, 10_000);
            assert!((exact - brute).abs() <= 1e-12, "{exact} vs {brute}");
        }
    }

    #[test]
    fn exact_sup_dominates_grid_with_signed_weights() {
        let dgp = two_atom();
        let weights = vec![1.3, -2.0, 0.4];
        let profile = WeightedAtRiskProfile::new(&dgp, weights.clone()).unwrap();
        for seed in 0..10 {
            let mut rng = rng::stream(seed, 0);
            let obs: Vec<(f64, f64)> = (0..80)
                .map(|_| {
                    let (r, o) = dgp.sample_observation(&mut rng);
                    (o.y, weights[r])
                })
                .collect();
            let exact = profile.sup_deviation(&obs);
            let brute = brute_sup(&profile, &obs, 1.0, 20_000);
            assert!(exact >= brute - 1e-12);
            assert!(exact - brute < 1e-6, "{exact} vs {brute}");
        }
    }

    #[test]
    fn mean_profile_matches_population_mu() {
        let dgp = two_atom();
        let ctx = PopulationContext::with_defaults(dgp.clone()).unwrap();
        let theta = [0.2, 0.3];
        let w: Vec<f64> = dgp.covariates().atoms().iter().map(|a| dot(a, &theta).exp()).collect();
        let profile = WeightedAtRiskProfile::new(&dgp, w).unwrap();
        for t in [0.0, 0.1, 0.4, 0.77, 1.0] {
            assert!((profile.mean(t) - ctx.mu(&theta, t).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn statistics_vanish_at_reference() {
        let dgp = two_atom();
        let ctx = PopulationContext::with_defaults(dgp.clone()).unwrap();
        let d = dgp.sample_with(100, &mut rng::stream(3, 0)).unwrap();
        let t = [0.1, 0.2];
        assert_eq!(z_statistic(&d, &ctx, &t, &t).unwrap(), 0.0);
        assert_eq!(r_statistic(&d, &ctx, &t, &t).unwrap(), 0.0);
        let z1 = z_statistic(&d, &ctx, &[0.3, 0.0], &t).unwrap();
        let z2 = z_statistic(&d, &ctx, &[0.3, 0.0], &t).unwrap();
        assert_eq!(z1, z2);
        assert!(z1 > 0.0);
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(frequency_verdict(0.5, 0.0, 1.0), Verdict::Vacuous);
        assert_eq!(frequency_verdict(0.5, 0.0, 1.9), Verdict::Vacuous);
        assert_eq!(frequency_verdict(0.2, 0.03, 0.11), Verdict::Fail);
        assert_eq!(frequency_verdict(0.2, 0.03, 0.12), Verdict::Pass);
    }

    #[test]
    fn at_risk_vacuous_small_n() {
        // π ≈ 0.1 at n = 10: the bound exceeds one
        let dgp = Dgp::new(
            CovariateLaw::new(vec![vec![1.0]], vec![1.0]).unwrap(),
            BaselineHazard::constant(-(0.1f64).ln()).unwrap(),
            CensoringLaw::new(f64::INFINITY, 1.0).unwrap(),
            vec![0.0],
        )
        .unwrap();
        assert!((dgp.pi() - 0.1).abs() < 1e-12);
        let r = check_at_risk_tail(&dgp, 10, 1000, 1).unwrap();
        assert!((r.bound - 2.0 * (-0.05f64).exp()).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Vacuous);
    }

    #[test]
    fn pair_rejects_small_radius() {
        assert!(PairSpec::new(vec![1.0, 0.0], vec![0.0, 0.0], 0.5, &[1.0, 1.0]).is_err());
        assert!(PairSpec::new(vec![1.0, 0.0], vec![0.0, 0.0], 1.0, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn sweep_rejects_short_grid() {
        let dgp = two_atom();
        let ctx = PopulationContext::with_defaults(dgp.clone()).unwrap();
        let cfg = BoundConfig::from_exponents(1.0, 2.0, 0.5, 0.1, 1, 1, 1.0, Some(1.0), 1.0, 3.0);
        let fit = FitOptions::default();
        assert!(rate_sweep(&dgp, &ctx, &[100], 10, 0, &cfg, &fit, 1.0).is_err());
        assert!(rate_sweep(&dgp, &ctx, &[100, 200, 300, 400], 10, 0, &cfg, &fit, 1.0).is_err());
    }
}

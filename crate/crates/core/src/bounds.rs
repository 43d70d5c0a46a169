//! Constants and oracle quantities of the non-asymptotic oracle inequalities
//! for the weighted-ℓ₁ penalized Cox estimator.
//!
//! Everything here is a deterministic function of the population, the sample
//! size, and a [`BoundConfig`]. `Θ` is the ℓ₁ ball `Σ|θ_k| ≤ L_m`; the norm of
//! the margin and compatibility conditions is the `L₂(P_X)` norm of `f_θ`, and
//! the margin function is quadratic, `G(u) = u²/C₀`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{CovariateLaw, Dgp};
use crate::error::{Error, Result};
use crate::numeric::{dot, l1_norm, sup_norm};
use crate::population::PopulationContext;
use crate::rng;
use crate::solver::project_l1_ball;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub b: f64,
    pub d: f64,
    pub delta: f64,
    pub r1: f64,
    /// `δ₁ = (1+b)^{-N₁}`, `N₁ ≥ 1`.
    pub delta1: f64,
    /// `δ₂ = (1+b)^{-N₂}`, `N₂ ≥ 0`.
    pub delta2: f64,
    /// Bracketing constant of the sup-deviation tails.
    pub w: f64,
    /// Quadratic margin constant; estimated from the population when absent.
    pub c0: Option<f64>,
    /// Sup-norm radius of the margin neighborhood.
    pub eta: f64,
    /// `L_m`, the ℓ₁ radius of `Θ`.
    pub l1_radius: f64,
}

impl BoundConfig {
    /// Builds the config from integer exponents `N₁`, `N₂`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_exponents(
        b: f64,
        d: f64,
        delta: f64,
        r1: f64,
        n1: u32,
        n2: u32,
        w: f64,
        c0: Option<f64>,
        eta: f64,
        l1_radius: f64,
    ) -> Self {
        Self {
            b,
            d,
            delta,
            r1,
            delta1: (1.0 + b).powi(-(n1 as i32)),
            delta2: (1.0 + b).powi(-(n2 as i32)),
            w,
            c0,
            eta,
            l1_radius,
        }
    }

    fn exponent(&self, value: f64, name: &str) -> Result<u32> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1], got {value}")));
        }
        let n = -value.ln() / self.b.ln_1p();
        let rounded = n.round();
        if (n - rounded).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "{name} = {value} is not an integer power of 1/(1+b) (exponent {n})"
            )));
        }
        Ok(rounded as u32)
    }

    /// `N₁`.
    pub fn n1(&self) -> Result<u32> {
        self.exponent(self.delta1, "delta1")
    }

    /// `N₂`.
    pub fn n2(&self) -> Result<u32> {
        self.exponent(self.delta2, "delta2")
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos(self.b, "b")?;
        pos(self.r1, "r1")?;
        pos(self.w, "W")?;
        pos(self.eta, "eta")?;
        pos(self.l1_radius, "l1_radius")?;
        if let Some(c0) = self.c0 {
            pos(c0, "C0")?;
        }
        if !(self.d > 1.0) || !self.d.is_finite() {
            return Err(Error::invalid(format!("d must exceed 1, got {}", self.d)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.n1()? < 1 {
            return Err(Error::invalid("delta1 = 1 (N1 = 0) is not allowed: N1 must be at least 1"));
        }
        self.n2()?;
        Ok(())
    }

    /// `d(δ₁, δ₂) = 1 + (1 + (d²−1)δ₁) δ₂ / ((d−1)(1−δ₁))`.
    pub fn d_delta(&self) -> f64 {
        let d = self.d;
        1.0 + (1.0 + (d * d - 1.0) * self.delta1) / ((d - 1.0) * (1.0 - self.delta1)) * self.delta2
    }

    /// `d_b = d · max((b+d)/((d−1)b), 1)`.
    pub fn d_b(&self) -> f64 {
        self.d * ((self.b + self.d) / ((self.d - 1.0) * self.b)).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundConstants {
    pub n: usize,
    pub m: usize,
    pub sigma: Vec<f64>,
    pub k_m: f64,
    pub l_m: f64,
    pub sigma_max: f64,
    pub u_m: f64,
    pub a_n: f64,
    pub abar_n: f64,
    pub r1: f64,
    pub lam_a: f64,
    pub lam_b: f64,
    pub lam0: f64,
    pub lam_n: f64,
    pub d_b: f64,
    pub pi: f64,
}

/// `a_n = √(2K²log(2m)/n) + K log(2m)/n`.
pub fn a_n(k_m: f64, m: usize, n: usize) -> f64 {
    let l = (2.0 * m as f64).ln();
    let n = n as f64;
    (2.0 * k_m * k_m * l / n).sqrt() + k_m * l / n
}

/// `λ̄ᴬ(r₁) = ā(1 + 2r₁√(2(K² + āK)) + 4r₁²āK/3)`.
pub fn lambda_a(abar: f64, k_m: f64, r1: f64) -> f64 {
    abar * (1.0 + 2.0 * r1 * (2.0 * (k_m * k_m + abar * k_m)).sqrt() + 4.0 * r1 * r1 * abar * k_m / 3.0)
}

/// `λ̄ᴮ = (2K U²/π)(2ā r₁ + √(log(2m)/n))`.
pub fn lambda_b(abar: f64, k_m: f64, u_m: f64, pi: f64, r1: f64, m: usize, n: usize) -> f64 {
    2.0 * k_m * u_m * u_m / pi * (2.0 * abar * r1 + ((2.0 * m as f64).ln() / n as f64).sqrt())
}

/// `K_m = max_k ‖ψ_k‖∞/σ_k` over the covariate support.
pub fn k_m(law: &CovariateLaw) -> Result<f64> {
    let sigma = law.sigma();
    if let Some(k) = sigma.iter().position(|s| *s == 0.0) {
        return Err(Error::Assumption(format!("σ_{} = 0: basis function {} vanishes", k + 1, k + 1)));
    }
    Ok((0..law.dim())
        .map(|k| law.atoms().iter().map(|a| a[k].abs()).fold(0.0, f64::max) / sigma[k])
        .fold(0.0, f64::max))
}

pub fn bound_constants(dgp: &Dgp, n: usize, cfg: &BoundConfig) -> Result<BoundConstants> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let law = dgp.covariates();
    let m = law.dim();
    let k_m = k_m(law)?;
    let sigma = law.sigma();
    let true_l1 = l1_norm(dgp.theta_true());
    if true_l1 > cfg.l1_radius {
        return Err(Error::Assumption(format!(
            "Σ|θ̄_k| = {true_l1} exceeds the declared L_m = {}",
            cfg.l1_radius
        )));
    }
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let u_m = (k_m * cfg.l1_radius * sigma_max).exp();
    let a = a_n(k_m, m, n);
    let abar = 4.0 * a;
    let pi = dgp.pi();
    let lam_a = lambda_a(abar, k_m, cfg.r1);
    let lam_b = lambda_b(abar, k_m, u_m, pi, cfg.r1, m, n);
    let lam0 = lam_a + lam_b;
    Ok(BoundConstants {
        n,
        m,
        sigma,
        k_m,
        l_m: cfg.l1_radius,
        sigma_max,
        u_m,
        a_n: a,
        abar_n: abar,
        r1: cfg.r1,
        lam_a,
        lam_b,
        lam0,
        lam_n: (1.0 + cfg.b) * lam0,
        d_b: cfg.d_b(),
        pi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedNorms {
    /// `I(θ) = Σ σ_k|θ_k|`.
    pub i: f64,
    /// Part of `I` on the support of the reference vector.
    pub i1: f64,
    /// Part of `I` off that support.
    pub i2: f64,
}

pub fn weighted_norms(theta: &[f64], theta_ref: &[f64], sigma: &[f64]) -> Result<WeightedNorms> {
    if theta.len() != sigma.len() || theta_ref.len() != sigma.len() {
        return Err(Error::invalid("weighted_norms: length mismatch"));
    }
    let (mut i1, mut i2) = (0.0, 0.0);
    for k in 0..theta.len() {
        let v = sigma[k] * theta[k].abs();
        if theta_ref[k] != 0.0 {
            i1 += v;
        } else {
            i2 += v;
        }
    }
    Ok(WeightedNorms { i: i1 + i2, i1, i2 })
}

/// `I(θ) = Σ σ_k |θ_k|`.
pub fn weighted_l1(theta: &[f64], sigma: &[f64]) -> f64 {
    theta.iter().zip(sigma).map(|(t, s)| s * t.abs()).sum()
}

/// Quadratic margin `G(u) = u²/C₀` with convex conjugate `H(v) = C₀v²/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticMargin {
    pub c0: f64,
}

impl QuadraticMargin {
    pub fn new(c0: f64) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::invalid(format!("C0 must be positive, got {c0}")));
        }
        Ok(Self { c0 })
    }

    pub fn g(&self, u: f64) -> f64 {
        u * u / self.c0
    }

    pub fn h(&self, v: f64) -> f64 {
        self.c0 * v * v / 4.0
    }

    /// `𝒱 = 2δ H(2λ√D/δ)`.
    pub fn estimation_error(&self, delta: f64, lambda: f64, d: f64) -> f64 {
        2.0 * delta * self.h(2.0 * lambda * d.sqrt() / delta)
    }
}

pub fn margin_pair(c0: f64) -> Result<QuadraticMargin> {
    QuadraticMargin::new(c0)
}

/// Compatibility constant `D(K)`: the smallest `D` of the form `|K|/λ` with
/// `Σ_{k∈K} σ_k|θ_k − θ̃_k| ≤ √D ‖f_θ − f_θ̃‖` for all coefficient pairs, where
/// `λ` is the smallest eigenvalue of the Schur complement of the normalized
/// Gram matrix on `K` (the coordinates off `K` are free). Returns infinity
/// when that complement is singular.
pub fn compatibility_d(law: &CovariateLaw, index_set: &[usize]) -> Result<f64> {
    let m = law.dim();
    if index_set.iter().any(|&k| k >= m) {
        return Err(Error::invalid("index set out of range"));
    }
    let mut set = index_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() {
        return Ok(0.0);
    }
    let sigma = law.sigma();
    if sigma.contains(&0.0) {
        return Ok(f64::INFINITY);
    }
    let gram = law.gram();
    let norm = |j: usize, k: usize| gram[j][k] / (sigma[j] * sigma[k]);
    let rest: Vec<usize> = (0..m).filter(|k| !set.contains(k)).collect();
    let s = set.len();
    let mut schur = DMatrix::from_fn(s, s, |i, j| norm(set[i], set[j]));
    if !rest.is_empty() {
        let g_rr = DMatrix::from_fn(rest.len(), rest.len(), |i, j| norm(rest[i], rest[j]));
        let g_kr = DMatrix::from_fn(s, rest.len(), |i, j| norm(set[i], rest[j]));
        let pinv = pseudo_inverse_psd(&g_rr);
        schur -= &g_kr * pinv * g_kr.transpose();
    }
    let eig = SymmetricEigen::new(schur);
    let lam_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lam_min <= 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(s as f64 / lam_min)
}

fn pseudo_inverse_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cut = 1e-12 * top.max(1.0);
    let inv = eig.eigenvalues.map(|v| if v > cut { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremProbability {
    /// `d(δ₁, δ₂)`.
    pub d_delta: f64,
    /// `Δ(b, δ, δ₁, δ₂) = max(d(δ₁,δ₂)(1−δ²)/(δb), 1)`.
    pub big_delta: f64,
    /// `log_{1+b}((1+b)²Δ/(δ₁δ₂))`.
    pub union_factor: f64,
    /// `(1 + 3W²/10) e^{−nā²r₁²} + 2e^{−nπ²/2}`.
    pub tail: f64,
    pub raw: f64,
    pub clipped: f64,
    pub vacuous: bool,
}

/// `e^{−nā²r₁²}`.
pub fn concentration_tail(constants: &BoundConstants, r1: f64) -> f64 {
    (-(constants.n as f64) * constants.abar_n.powi(2) * r1 * r1).exp()
}

/// `2e^{−nπ²/2}`.
pub fn at_risk_tail(n: usize, pi: f64) -> f64 {
    2.0 * (-(n as f64) * pi * pi / 2.0).exp()
}

/// Lower bound on the probability that both oracle inequalities hold.
pub fn theorem_probability(cfg: &BoundConfig, constants: &BoundConstants, n: usize) -> Result<TheoremProbability> {
    cfg.validate()?;
    if cfg.delta1 >= 1.0 {
        return Err(Error::invalid("delta1 must be below 1"));
    }
    let d_delta = cfg.d_delta();
    let big_delta = (d_delta * (1.0 - cfg.delta * cfg.delta) / (cfg.delta * cfg.b)).max(1.0);
    let union_factor = ((1.0 + cfg.b).powi(2) * big_delta / (cfg.delta1 * cfg.delta2)).ln() / cfg.b.ln_1p();
    let nn = n as f64;
    let tail = (1.0 + 0.3 * cfg.w * cfg.w) * (-nn * constants.abar_n.powi(2) * cfg.r1 * cfg.r1).exp()
        + at_risk_tail(n, constants.pi);
    let raw = 1.0 - union_factor * tail;
    Ok(TheoremProbability {
        d_delta,
        big_delta,
        union_factor,
        tail,
        raw,
        clipped: raw.clamp(0.0, 1.0),
        vacuous: raw <= 0.0,
    })
}

/// Bounds that depend on the bracketing constant `W`, at one value of `W`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WSensitivity {
    pub w: f64,
    /// `(1/5)W² e^{−nā²r₁²}`.
    pub sup_deviation_tail: f64,
    /// `(1/10)W² e^{−nā²r₁²}`.
    pub sup_deviation_basis_tail: f64,
    /// `2e^{−nπ²/2} + (3/10)W² e^{−nā²r₁²}`.
    pub r_tail: f64,
    pub theorem_raw: f64,
}

pub fn w_sensitivity(cfg: &BoundConfig, constants: &BoundConstants, ws: &[f64]) -> Result<Vec<WSensitivity>> {
    ws.iter()
        .map(|&w| {
            let c = BoundConfig { w, ..cfg.clone() };
            let e = concentration_tail(constants, cfg.r1);
            Ok(WSensitivity {
                w,
                sup_deviation_tail: w * w * e / 5.0,
                sup_deviation_basis_tail: w * w * e / 10.0,
                r_tail: at_risk_tail(constants.n, constants.pi) + 0.3 * w * w * e,
                theorem_raw: theorem_probability(&c, constants, constants.n)?.raw,
            })
        })
        .collect()
}

/// Numerical estimate of the quadratic-margin constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginEstimate {
    pub c0: f64,
    /// Points of the sup-norm ball that fell inside `Θ` and were used.
    pub samples: usize,
}

/// Smallest `C₀` with `ℰ(f_θ) ≥ ‖f_θ − f̄‖²/C₀` over random `θ` with
/// `‖f_θ − f̄‖∞ ≤ η` inside `Θ`.
pub fn estimate_margin_constant(
    ctx: &PopulationContext,
    eta: f64,
    l1_radius: f64,
    samples: usize,
    seed: u64,
) -> Result<MarginEstimate> {
    let truth = ctx.dgp().theta_true().to_vec();
    let m = truth.len();
    let atoms = ctx.dgp().covariates().atoms();
    let ratios: Vec<Option<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let mut rng = rng::stream(seed, i as u64);
            let dir: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let sup = atoms.iter().map(|a| dot(a, &dir).abs()).fold(0.0, f64::max);
            if sup == 0.0 {
                return Ok(None);
            }
            let radius = eta * (0.02 + 0.98 * rng.random::<f64>());
            let theta: Vec<f64> = truth.iter().zip(&dir).map(|(t, d)| t + d * radius / sup).collect();
            if l1_norm(&theta) > l1_radius {
                return Ok(None);
            }
            let excess = ctx.excess_risk(&theta)?;
            let dist = ctx.l2_distance(&theta, &truth);
            if excess <= 0.0 {
                return Ok(None);
            }
            Ok(Some(dist * dist / excess))
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = ratios.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Assumption("no margin samples fell inside Θ".into()));
    }
    Ok(MarginEstimate {
        c0: used.iter().copied().fold(0.0, f64::max),
        samples: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleQuantities {
    pub theta_star: Vec<f64>,
    pub support: Vec<usize>,
    pub c0: f64,
    pub c0_estimated: bool,
    pub lambda_n: f64,
    /// `D(supp θ*_n)`.
    pub d_star: f64,
    /// `𝒱_{θ*_n}`.
    pub v_star: f64,
    /// `ℰ(f_{θ*_n})`.
    pub excess_star: f64,
    pub eps_star: f64,
    pub zeta_star: f64,
    pub cond1_ok: bool,
    /// Achieved `‖f_{θ*_n} − f̄‖∞`.
    pub cond1_sup: f64,
    pub cond2_ok: bool,
    /// Achieved `‖f_{θ(ε*_n)} − f̄‖∞`, from a heuristic search.
    pub cond2_sup: f64,
    pub cond2_heuristic: bool,
    pub theta_eps: Vec<f64>,
    /// Radius `d_b ζ*_n / b` of the `I`-ball around `θ*_n`.
    pub ball_radius: f64,
    pub supports_evaluated: usize,
    pub supports_skipped: usize,
}

fn supports_up_to(m: usize, s_max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..s_max.min(m) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |l| l + 1);
            for k in start..m {
                let mut t = s.clone();
                t.push(k);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Minimizer of the population loss over coefficients supported on `support`
/// and lying in `Θ`.
pub fn restricted_minimizer(ctx: &PopulationContext, support: &[usize], l1_radius: f64) -> Result<Vec<f64>> {
    let m = ctx.dgp().dim();
    let mut theta = vec![0.0; m];
    if support.is_empty() {
        return Ok(theta);
    }
    let s = support.len();
    let mut value = ctx.expected_loss(&theta)?;
    for _ in 0..100 {
        let d = ctx.loss_derivatives(&theta, support, true)?;
        if sup_norm(&d.gradient) <= 1e-11 {
            break;
        }
        let hess = DMatrix::from_row_slice(s, s, &d.hessian);
        let rhs = nalgebra::DVector::from_iterator(s, d.gradient.iter().map(|g| -g));
        let step = hess
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Divergence("singular population Hessian on support".into()))?;
        let slope: f64 = step.iter().zip(&d.gradient).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        loop {
            let mut cand = theta.clone();
            for (i, &k) in support.iter().enumerate() {
                cand[k] += alpha * step[i];
            }
            let v = ctx.expected_loss(&cand)?;
            if v <= value + 1e-4 * alpha * slope || alpha < 1e-8 {
                theta = cand;
                value = v;
                break;
            }
            alpha *= 0.5;
        }
        if step.amax() * alpha <= 1e-12 * (1.0 + sup_norm(&theta)) {
            break;
        }
        if sup_norm(&theta) > 1e3 {
            return Err(Error::Divergence("population Newton diverged".into()));
        }
    }
    if l1_norm(&theta) > l1_radius {
        theta = projected_descent(ctx, support, theta, l1_radius)?;
    }
    Ok(theta)
}

/// Projected gradient descent on `l` over the ℓ₁ ball, restricted to `support`.
fn projected_descent(ctx: &PopulationContext, support: &[usize], start: Vec<f64>, radius: f64) -> Result<Vec<f64>> {
    let mut theta = start;
    project_l1_ball(&mut theta, radius);
    let mut value = ctx.expected_loss(&theta)?;
    let mut step = 1.0;
    for _ in 0..500 {
        let g = ctx.loss_derivatives(&theta, support, false)?.gradient;
        let mut moved = false;
        while step > 1e-12 {
            let mut cand = theta.clone();
            for (i, &k) in support.iter().enumerate() {
                cand[k] -= step * g[i];
            }
            project_l1_ball(&mut cand, radius);
            let v = ctx.expected_loss(&cand)?;
            if v < value {
                let change = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = cand;
                value = v;
                moved = change > 1e-12;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(theta)
}

/// Projection onto `{θ : Σ w_k|θ_k − c_k| ≤ radius}` (all `w_k > 0`).
pub fn project_weighted_l1_ball(v: &mut [f64], center: &[f64], weights: &[f64], radius: f64) {
    let u: Vec<f64> = v.iter().zip(center).map(|(a, c)| a - c).collect();
    let norm: f64 = u.iter().zip(weights).map(|(x, w)| w * x.abs()).sum();
    if norm <= radius {
        return;
    }
    if radius <= 0.0 {
        v.copy_from_slice(center);
        return;
    }
    // Σ w_k max(|u_k| − t w_k, 0) = radius, solved by bisection on t.
    let mass = |t: f64| -> f64 { u.iter().zip(weights).map(|(x, w)| w * (x.abs() - t * w).max(0.0)).sum() };
    let (mut lo, mut hi) = (0.0, u.iter().zip(weights).map(|(x, w)| x.abs() / w).fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for k in 0..v.len() {
        v[k] = center[k] + u[k].signum() * (u[k].abs() - hi * weights[k]).max(0.0);
    }
}

/// Projection onto the intersection of the `I`-ball around `center` and `Θ`
/// (Dykstra's alternating projections).
fn project_search_region(v: &[f64], center: &[f64], sigma: &[f64], radius: f64, l1_radius: f64) -> Vec<f64> {
    let m = v.len();
    let mut x = v.to_vec();
    let mut p = vec![0.0; m];
    let mut q = vec![0.0; m];
    for _ in 0..200 {
        let mut y: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        project_weighted_l1_ball(&mut y, center, sigma, radius);
        for k in 0..m {
            p[k] = x[k] + p[k] - y[k];
        }
        let mut z: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
        project_l1_ball(&mut z, l1_radius);
        for k in 0..m {
            q[k] = y[k] + q[k] - z[k];
        }
        let change = z.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = z;
        if change < 1e-13 {
            break;
        }
    }
    x
}

/// Multi-start projected descent for
/// `argmin { δℰ(f_θ) − 2λ_n I₁(θ − θ*|θ*) : I(θ − θ*) ≤ radius, θ ∈ Θ }`.
/// The objective is not convex, so the result is a heuristic.
#[allow(clippy::too_many_arguments)]
fn search_theta_eps(
    ctx: &PopulationContext,
    theta_star: &[f64],
    sigma: &[f64],
    delta: f64,
    lambda_n: f64,
    radius: f64,
    l1_radius: f64,
    starts: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = theta_star.len();
    if radius <= 0.0 {
        return Ok(theta_star.to_vec());
    }
    let on_support: Vec<bool> = theta_star.iter().map(|t| *t != 0.0).collect();
    let objective = |th: &[f64]| -> Result<f64> {
        let i1: f64 = (0..m).filter(|&k| on_support[k]).map(|k| sigma[k] * (th[k] - theta_star[k]).abs()).sum();
        Ok(delta * ctx.excess_risk(th)? - 2.0 * lambda_n * i1)
    };
    let project = |v: &[f64]| project_search_region(v, theta_star, sigma, radius, l1_radius);

    let results: Vec<(f64, Vec<f64>)> = (0..starts)
        .into_par_iter()
        .map(|s| -> Result<(f64, Vec<f64>)> {
            let mut rng = rng::stream(seed, s as u64);
            let start = match s {
                0 => theta_star.to_vec(),
                1 => project(ctx.dgp().theta_true()),
                _ => {
                    let dir: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let scale = radius * rng.random::<f64>() / weighted_l1(&dir, sigma).max(1e-300);
                    let raw: Vec<f64> = theta_star.iter().zip(&dir).map(|(c, d)| c + scale * d).collect();
                    project(&raw)
                }
            };
            let mut x = start;
            let mut fx = objective(&x)?;
            let mut step = 1.0;
            for _ in 0..60 {
                let mut g = ctx.expected_loss_gradient(&x)?;
                for k in 0..m {
                    g[k] *= delta;
                    if on_support[k] {
                        let d = x[k] - theta_star[k];
                        // supergradient of −|·| at 0: push away along the smooth part
                        let sgn = if d != 0.0 { d.signum() } else if g[k] > 0.0 { -1.0 } else { 1.0 };
                        g[k] -= 2.0 * lambda_n * sigma[k] * sgn;
                    }
                }
                let mut improved = false;
                while step > 1e-10 {
                    let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                    let cand = project(&cand);
                    let fc = objective(&cand)?;
                    if fc < fx - 1e-15 {
                        x = cand;
                        fx = fc;
                        improved = true;
                        step *= 2.0;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            Ok((fx, x))
        })
        .collect::<Result<_>>()?;
    let best = results
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.0.total_cmp(&b.0).then(i.cmp(j)))
        .map(|(_, r)| r.1)
        .expect("at least one start");
    Ok(best)
}

/// `(ε, excess, D, θ)` for one candidate support.
type SupportCandidate = (f64, f64, f64, Vec<f64>);

/// Oracle `θ*_n` by exhaustive support enumeration up to `s_max`, the
/// derived `ε*_n`, `ζ*_n`, and Conditions I and II.
pub fn oracle_quantities(
    ctx: &PopulationContext,
    cfg: &BoundConfig,
    constants: &BoundConstants,
    s_max: usize,
    seed: u64,
) -> Result<OracleQuantities> {
    cfg.validate()?;
    let law = ctx.dgp().covariates();
    let m = law.dim();
    if s_max > m {
        return Err(Error::invalid(format!("support budget {s_max} exceeds m = {m}")));
    }
    let (c0, c0_estimated) = match cfg.c0 {
        Some(c) => (c, false),
        None => (
            estimate_margin_constant(ctx, cfg.eta, cfg.l1_radius, 256, rng::derive_seed(seed, "margin"))?.c0,
            true,
        ),
    };
    let margin = QuadraticMargin::new(c0)?;
    let lambda_n = constants.lam_n;

    let supports = supports_up_to(m, s_max);
    let evaluated: Vec<Option<SupportCandidate>> = supports
        .par_iter()
        .map(|s| {
            let d = match compatibility_d(law, s) {
                Ok(d) if d.is_finite() => d,
                _ => return None,
            };
            let theta = match restricted_minimizer(ctx, s, cfg.l1_radius) {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("skipping support {s:?}: {e}");
                    return None;
                }
            };
            let excess = ctx.excess_risk(&theta).ok()?;
            let v = margin.estimation_error(cfg.delta, lambda_n, d);
            Some((excess + v, excess, d, theta))
        })
        .collect();
    let skipped = evaluated.iter().filter(|e| e.is_none()).count();
    let (best_idx, best) = evaluated
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
        .min_by(|(i, a), (j, b)| a.0.total_cmp(&b.0).then(i.cmp(j)))
        .ok_or_else(|| Error::Assumption("no support produced a feasible oracle candidate".into()))?;
    let (_, excess_star, d_star, theta_star) = best.clone();
    let v_star = margin.estimation_error(cfg.delta, lambda_n, d_star);
    let eps_star = (1.0 + cfg.delta) * excess_star + v_star;
    let zeta_star = eps_star / constants.lam0;
    let truth = ctx.dgp().theta_true();
    let cond1_sup = ctx.sup_distance(&theta_star, truth);

    let ball_radius = constants.d_b * zeta_star / cfg.b;
    let theta_eps = search_theta_eps(
        ctx,
        &theta_star,
        &constants.sigma,
        cfg.delta,
        lambda_n,
        ball_radius,
        cfg.l1_radius,
        32,
        rng::derive_seed(seed, "theta_eps"),
    )?;
    let cond2_sup = ctx.sup_distance(&theta_eps, truth);

    Ok(OracleQuantities {
        support: supports[best_idx].clone(),
        theta_star,
        c0,
        c0_estimated,
        lambda_n,
        d_star,
        v_star,
        excess_star,
        eps_star,
        zeta_star,
        cond1_ok: cond1_sup <= cfg.eta,
        cond1_sup,
        cond2_ok: cond2_sup <= cfg.eta,
        cond2_sup,
        cond2_heuristic: true,
        theta_eps,
        ball_radius,
        supports_evaluated: supports.len() - skipped,
        supports_skipped: skipped,
    })
}

/// Outcome of sampling the inequality
/// `2λ_n I₁(θ − θ*_n) ≤ δℰ(f_θ) + ε*_n − ℰ(f_{θ*_n})` over the `I`-ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginInequalityCheck {
    pub tested: usize,
    pub violations: usize,
    /// Smallest value of right side minus left side.
    pub min_slack: f64,
    pub conditions_certified: bool,
}

pub fn check_l1_margin_inequality(
    ctx: &PopulationContext,
    cfg: &BoundConfig,
    oracle: &OracleQuantities,
    sigma: &[f64],
    count: usize,
    seed: u64,
) -> Result<MarginInequalityCheck> {
    let m = sigma.len();
    let theta_star = &oracle.theta_star;
    let slacks: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = rng::stream(seed, i as u64);
            let dir: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let scale = oracle.ball_radius * rng.random::<f64>() / weighted_l1(&dir, sigma).max(1e-300);
            let raw: Vec<f64> = theta_star.iter().zip(&dir).map(|(c, d)| c + scale * d).collect();
            let theta = project_search_region(&raw, theta_star, sigma, oracle.ball_radius, cfg.l1_radius);
            let diff: Vec<f64> = theta.iter().zip(theta_star).map(|(a, b)| a - b).collect();
            let i1 = weighted_norms(&diff, theta_star, sigma)?.i1;
            let lhs = 2.0 * oracle.lambda_n * i1;
            let rhs = cfg.delta * ctx.excess_risk(&theta)? + oracle.eps_star - oracle.excess_star;
            Ok(rhs - lhs)
        })
        .collect::<Result<_>>()?;
    Ok(MarginInequalityCheck {
        tested: count,
        violations: slacks.iter().filter(|s| **s < -1e-10).count(),
        min_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
        conditions_certified: oracle.cond1_ok && oracle.cond2_ok,
    })
}

//! Weighted-ℓ₁ penalized Cox regression.
//!
//! `fit_lasso` minimizes `l_n(θ) + λ Σ_k w_k |θ_k|` by accelerated proximal
//! gradient with backtracking (there is no global Lipschitz constant for
//! `∇l_n`), restarting momentum whenever the objective would increase. Once
//! the iterate is close, a Newton step on the active set with fixed signs is
//! attempted; it is accepted only when it lowers the objective without
//! changing any sign. Convergence is declared on the KKT residual.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::emploss::{partial_likelihood, partial_likelihood_derivatives};
use crate::error::{Error, Result};
use crate::numeric::{l1_norm, sup_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `σ̂_k` computed from the sample.
    Empirical,
    /// `σ_k = (E ψ_k²)^{1/2}` from the known population.
    Theoretical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub initial_step: f64,
    pub backtracking: f64,
    pub acceleration: bool,
    pub weight_mode: WeightMode,
    /// Radius of the constraint `Σ|θ_k| ≤ L_m`; `None` leaves θ unconstrained.
    pub l1_radius: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            kkt_tolerance: 1e-8,
            initial_step: 1.0,
            backtracking: 0.5,
            acceleration: true,
            weight_mode: WeightMode::Empirical,
            l1_radius: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::invalid("kkt_tolerance must be positive"));
        }
        if !(self.backtracking > 0.0 && self.backtracking < 1.0) {
            return Err(Error::invalid("backtracking factor must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::invalid("initial_step must be positive"));
        }
        if let Some(r) = self.l1_radius {
            if !(r > 0.0) {
                return Err(Error::invalid("l1_radius must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub lambda: f64,
    pub theta_hat: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Zero-based indices of the nonzero coefficients.
    pub active_set: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn penalty(theta: &[f64], lambda: f64, weights: &[f64]) -> f64 {
    lambda * theta.iter().zip(weights).map(|(t, w)| w * t.abs()).sum::<f64>()
}

/// `l_n(θ) + λ Σ w_k |θ_k|`.
pub fn penalized_objective(dataset: &Dataset, theta: &[f64], lambda: f64, weights: &[f64]) -> Result<f64> {
    Ok(partial_likelihood(dataset, theta)? + penalty(theta, lambda, weights))
}

fn kkt_from_gradient(grad: &[f64], theta: &[f64], lambda: f64, weights: &[f64]) -> f64 {
    grad.iter()
        .zip(theta)
        .zip(weights)
        .map(|((g, t), w)| {
            let lw = lambda * w;
            if lw == 0.0 {
                g.abs()
            } else if *t == 0.0 {
                (g.abs() - lw).max(0.0)
            } else {
                (g + lw * t.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the subgradient optimality conditions at `θ`.
pub fn kkt_residual(dataset: &Dataset, theta: &[f64], lambda: f64, weights: &[f64]) -> Result<f64> {
    let g = partial_likelihood_derivatives(dataset, theta, false)?.gradient;
    Ok(kkt_from_gradient(&g, theta, lambda, weights))
}

/// Smallest `λ` for which `θ = 0` satisfies the KKT conditions.
pub fn lambda_max(dataset: &Dataset, weights: &[f64]) -> Result<f64> {
    let g = partial_likelihood_derivatives(dataset, &vec![0.0; dataset.dim()], false)?.gradient;
    Ok(g.iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(g, w)| g.abs() / w)
        .fold(0.0, f64::max))
}

fn soft_threshold(v: f64, thr: f64) -> f64 {
    if v > thr {
        v - thr
    } else if v < -thr {
        v + thr
    } else {
        0.0
    }
}

/// Euclidean projection onto `{θ : Σ|θ_k| ≤ radius}`.
pub fn project_l1_ball(v: &mut [f64], radius: f64) {
    if l1_norm(v) <= radius {
        return;
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - radius) / (j + 1) as f64;
        if *uj > t {
            shift = t;
        }
    }
    for x in v.iter_mut() {
        *x = soft_threshold(*x, shift);
    }
}

fn validate_inputs(dataset: &Dataset, lambda: f64, weights: &[f64]) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("penalty level must be finite and >= 0, got {lambda}")));
    }
    if weights.len() != dataset.dim() {
        return Err(Error::invalid("weight vector has the wrong length"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    if dataset.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    Ok(())
}

pub fn fit_lasso(dataset: &Dataset, lambda: f64, weights: &[f64], opts: &FitOptions) -> Result<FitResult> {
    fit_lasso_from(dataset, lambda, weights, opts, &vec![0.0; dataset.dim()])
}

/// Like [`fit_lasso`] but started from `start` (warm start).
pub fn fit_lasso_from(
    dataset: &Dataset,
    lambda: f64,
    weights: &[f64],
    opts: &FitOptions,
    start: &[f64],
) -> Result<FitResult> {
    opts.validate()?;
    validate_inputs(dataset, lambda, weights)?;
    if start.len() != dataset.dim() {
        return Err(Error::invalid("start vector has the wrong length"));
    }
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 && lambda > 0.0 {
            log::warn!("covariate {} has zero weight and is left unpenalized", k + 1);
        }
    }

    let m = dataset.dim();
    let thresholds: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
    let prox = |v: &[f64], step: f64| -> Vec<f64> {
        let mut z: Vec<f64> = v.iter().zip(&thresholds).map(|(x, t)| soft_threshold(*x, step * t)).collect();
        if let Some(r) = opts.l1_radius {
            project_l1_ball(&mut z, r);
        }
        z
    };

    let mut x = start.to_vec();
    if let Some(r) = opts.l1_radius {
        project_l1_ball(&mut x, r);
    }
    let mut fx = partial_likelihood_derivatives(dataset, &x, false)?;
    let mut obj_x = fx.value + penalty(&x, lambda, weights);
    let mut kkt = kkt_from_gradient(&fx.gradient, &x, lambda, weights);
    let constrained_active = |v: &[f64]| opts.l1_radius.is_some_and(|r| l1_norm(v) >= r * (1.0 - 1e-12));

    let mut y = x.clone();
    let mut fy = fx.clone();
    let mut momentum = 1.0_f64;
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut mapping_norm = f64::INFINITY;

    while iterations < opts.max_iterations {
        if kkt <= opts.kkt_tolerance && !constrained_active(&x) {
            break;
        }
        if constrained_active(&x) && mapping_norm <= opts.kkt_tolerance {
            break;
        }
        iterations += 1;

        if kkt < 1e-3 && !constrained_active(&x) {
            let polished = newton_polish(dataset, &x, obj_x, lambda, weights, &fx.gradient)?
                .filter(|(z, _, _)| opts.l1_radius.is_none_or(|r| l1_norm(z) < r));
            if let Some((z, fz, obj_z)) = polished {
                x = z;
                fx = fz;
                obj_x = obj_z;
                kkt = kkt_from_gradient(&fx.gradient, &x, lambda, weights);
                y = x.clone();
                fy = fx.clone();
                momentum = 1.0;
                continue;
            }
        }

        // backtracking from y
        step /= opts.backtracking;
        let (z, fz) = loop {
            let v: Vec<f64> = y.iter().zip(&fy.gradient).map(|(a, g)| a - step * g).collect();
            let z = prox(&v, step);
            let fz = partial_likelihood_derivatives(dataset, &z, false)?;
            let mut lin = 0.0;
            let mut sq = 0.0;
            for k in 0..m {
                let d = z[k] - y[k];
                lin += fy.gradient[k] * d;
                sq += d * d;
            }
            if fz.value <= fy.value + lin + sq / (2.0 * step) + 1e-15 * fy.value.abs() {
                mapping_norm = sq.sqrt() / step;
                break (z, fz);
            }
            step *= opts.backtracking;
            if step < 1e-20 {
                return Err(Error::invalid("step size underflow in backtracking"));
            }
        };
        let obj_z = fz.value + penalty(&z, lambda, weights);

        if obj_z > obj_x {
            // restart from the last accepted point
            momentum = 1.0;
            y = x.clone();
            fy = fx.clone();
            if y == z {
                break;
            }
            continue;
        }

        let next_momentum = if opts.acceleration {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        } else {
            1.0
        };
        let beta = (momentum - 1.0) / next_momentum;
        y = z.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        if let Some(r) = opts.l1_radius {
            project_l1_ball(&mut y, r);
        }
        fy = if beta == 0.0 {
            fz.clone()
        } else {
            partial_likelihood_derivatives(dataset, &y, false)?
        };
        momentum = next_momentum;
        x = z;
        fx = fz;
        obj_x = obj_z;
        kkt = kkt_from_gradient(&fx.gradient, &x, lambda, weights);
    }

    let (converged, note) = if constrained_active(&x) {
        (
            mapping_norm <= opts.kkt_tolerance,
            Some("l1 constraint active: converged on the proximal-gradient mapping".to_string()),
        )
    } else {
        (kkt <= opts.kkt_tolerance, None)
    };
    let note = if !converged && note.is_none() {
        Some(format!("stopped after {iterations} iterations with KKT residual {kkt:e}"))
    } else {
        note
    };
    Ok(FitResult {
        lambda,
        active_set: (0..m).filter(|&k| x[k] != 0.0).collect(),
        objective: obj_x,
        kkt_residual: kkt,
        iterations,
        converged,
        theta_hat: x,
        note,
    })
}

type Polished = (Vec<f64>, crate::emploss::PartialLikelihood, f64);

/// One Newton step on the active set with signs held fixed.
fn newton_polish(
    dataset: &Dataset,
    x: &[f64],
    obj_x: f64,
    lambda: f64,
    weights: &[f64],
    grad: &[f64],
) -> Result<Option<Polished>> {
    let active: Vec<usize> = (0..x.len()).filter(|&k| x[k] != 0.0 || weights[k] * lambda == 0.0).collect();
    if active.is_empty() {
        return Ok(None);
    }
    // inactive coordinates must already satisfy their KKT condition
    let inactive_ok = (0..x.len())
        .filter(|k| !active.contains(k))
        .all(|k| grad[k].abs() <= lambda * weights[k]);
    if !inactive_ok {
        return Ok(None);
    }
    let full = partial_likelihood_derivatives(dataset, x, true)?;
    let h = full.hessian.expect("hessian requested");
    let m = x.len();
    let s = active.len();
    let hess = DMatrix::from_fn(s, s, |i, j| h[active[i] * m + active[j]]);
    let rhs = DVector::from_fn(s, |i, _| {
        let k = active[i];
        -(grad[k] + lambda * weights[k] * x[k].signum())
    });
    let Some(chol) = hess.cholesky() else {
        return Ok(None);
    };
    let dir = chol.solve(&rhs);
    let mut alpha = 1.0;
    while alpha > 1e-4 {
        let mut z = x.to_vec();
        for (i, &k) in active.iter().enumerate() {
            z[k] += alpha * dir[i];
        }
        let signs_kept = active
            .iter()
            .all(|&k| weights[k] * lambda == 0.0 || z[k].signum() == x[k].signum() && z[k] != 0.0);
        if signs_kept {
            let fz = partial_likelihood_derivatives(dataset, &z, false)?;
            let obj_z = fz.value + penalty(&z, lambda, weights);
            if obj_z <= obj_x {
                let kkt_old = kkt_from_gradient(grad, x, lambda, weights);
                let kkt_new = kkt_from_gradient(&fz.gradient, &z, lambda, weights);
                if kkt_new < kkt_old {
                    return Ok(Some((z, fz, obj_z)));
                }
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Unpenalized maximum partial likelihood estimate by Newton's method with
/// step halving.
pub fn fit_mle(dataset: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    fit_mle_from(dataset, opts, &vec![0.0; dataset.dim()])
}

pub fn fit_mle_from(dataset: &Dataset, opts: &FitOptions, start: &[f64]) -> Result<FitResult> {
    const GRAD_TOL: f64 = 1e-10;
    const STEP_TOL: f64 = 1e-6;
    const DIVERGENCE_NORM: f64 = 1e3;
    opts.validate()?;
    if dataset.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    let m = dataset.dim();
    let mut theta = start.to_vec();
    let mut iterations = 0;
    loop {
        let d = partial_likelihood_derivatives(dataset, &theta, true)?;
        let gnorm = sup_norm(&d.gradient);
        let h = d.hessian.expect("hessian requested");
        let hess = DMatrix::from_row_slice(m, m, &h);
        let step = hess
            .cholesky()
            .map(|c| c.solve(&DVector::from_iterator(m, d.gradient.iter().map(|g| -g))));
        let Some(step) = step else {
            if gnorm <= GRAD_TOL && iterations > 0 {
                return Err(Error::Divergence(format!(
                    "Hessian became singular at |θ|∞ = {:.3} (monotone likelihood)",
                    sup_norm(&theta)
                )));
            }
            return Err(Error::Divergence("Hessian is singular: design degenerate on events".into()));
        };
        let step_norm = step.amax();
        if gnorm <= GRAD_TOL && step_norm <= STEP_TOL * (1.0 + sup_norm(&theta)) {
            return Ok(FitResult {
                lambda: 0.0,
                active_set: (0..m).filter(|&k| theta[k] != 0.0).collect(),
                objective: d.value,
                kkt_residual: gnorm,
                iterations,
                converged: true,
                theta_hat: theta,
                note: None,
            });
        }
        if iterations >= opts.max_iterations {
            return Ok(FitResult {
                lambda: 0.0,
                active_set: (0..m).filter(|&k| theta[k] != 0.0).collect(),
                objective: d.value,
                kkt_residual: gnorm,
                iterations,
                converged: false,
                theta_hat: theta,
                note: Some("Newton iteration limit reached".into()),
            });
        }
        iterations += 1;
        let slope: f64 = step.iter().zip(&d.gradient).map(|(s, g)| s * g).sum();
        let mut alpha = 1.0;
        let next = loop {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + alpha * s).collect();
            let v = partial_likelihood(dataset, &cand)?;
            if v <= d.value + 1e-4 * alpha * slope {
                break cand;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                if step_norm <= STEP_TOL * (1.0 + sup_norm(&theta)) {
                    // rounding floor reached next to the optimum
                    return Ok(FitResult {
                        lambda: 0.0,
                        active_set: (0..m).filter(|&k| theta[k] != 0.0).collect(),
                        objective: d.value,
                        kkt_residual: gnorm,
                        iterations,
                        converged: gnorm <= GRAD_TOL,
                        theta_hat: theta,
                        note: Some("line search reached the rounding floor".into()),
                    });
                }
                // the objective is flat along a long Newton direction
                return Err(Error::Divergence(format!(
                    "line search stalled at |θ|∞ = {:.3} with Newton step {step_norm:.3e} (monotone likelihood)",
                    sup_norm(&theta)
                )));
            }
        };
        if sup_norm(&next) > DIVERGENCE_NORM {
            return Err(Error::Divergence(format!(
                "|θ|∞ exceeded {DIVERGENCE_NORM} (monotone likelihood)"
            )));
        }
        theta = next;
    }
}

/// Warm-started fits over a strictly decreasing grid of penalty levels.
/// Non-convergence at one level is recorded in its result and the path
/// continues.
pub fn regularization_path(
    dataset: &Dataset,
    lambdas: &[f64],
    weights: &[f64],
    opts: &FitOptions,
) -> Result<Vec<FitResult>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("penalty grid is empty"));
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) || lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("penalty grid must be positive and strictly decreasing"));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    let mut start = vec![0.0; dataset.dim()];
    for &lambda in lambdas {
        let fit = fit_lasso_from(dataset, lambda, weights, opts, &start)?;
        if !fit.converged {
            log::warn!("path fit at lambda = {lambda:e} did not converge");
        }
        start = fit.theta_hat.clone();
        out.push(fit);
    }
    Ok(out)
}

/// Path CSV: coefficient rows `lambda,k,theta_k` (nonzeros, one-based `k`)
/// followed by a summary row per penalty level.
pub fn write_path_csv<W: Write>(path: &[FitResult], w: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["lambda", "k", "theta_k", "objective", "kkt_residual", "df"])?;
    for fit in path {
        let lam = format!("{}", fit.lambda);
        for &k in &fit.active_set {
            wtr.write_record([lam.as_str(), &format!("{}", k + 1), &format!("{}", fit.theta_hat[k]), "", "", ""])?;
        }
        wtr.write_record([
            lam.as_str(),
            "",
            "",
            &format!("{}", fit.objective),
            &format!("{}", fit.kkt_residual),
            &format!("{}", fit.active_set.len()),
        ])?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, BaselineHazard, CensoringLaw, CovariateLaw, Dgp, Observation};
    use crate::emploss::{empirical_sigma, partial_likelihood_gradient};

    fn dgp(m: usize, theta: Vec<f64>) -> Dgp {
        Dgp::new(
            CovariateLaw::hadamard(m).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(3.0, 1.5).unwrap(),
            theta,
        )
        .unwrap()
    }

    #[test]
    fn large_lambda_gives_exact_zero() {
        let d = sample_dataset(&dgp(4, vec![0.8, -0.5, 0.0, 0.0]), 200, 1).unwrap();
        let w = empirical_sigma(&d);
        let lmax = lambda_max(&d, &w).unwrap();
        let fit = fit_lasso(&d, lmax, &w, &FitOptions::default()).unwrap();
        assert!(fit.theta_hat.iter().all(|v| *v == 0.0));
        assert!(fit.converged);
        let fit = fit_lasso(&d, 1.01 * lmax, &w, &FitOptions::default()).unwrap();
        assert!(fit.theta_hat.iter().all(|v| *v == 0.0));
        let fit = fit_lasso(&d, 0.5 * lmax, &w, &FitOptions::default()).unwrap();
        assert!(!fit.active_set.is_empty());
    }

    #[test]
    fn converged_fits_pass_kkt_and_objective_recomputes() {
        let d = sample_dataset(&dgp(6, vec![0.8, -0.5, 0.3, 0.0, 0.0, 0.0]), 300, 2).unwrap();
        let w = empirical_sigma(&d);
        let lmax = lambda_max(&d, &w).unwrap();
        for frac in [0.8, 0.4, 0.1, 0.01] {
            let fit = fit_lasso(&d, frac * lmax, &w, &FitOptions::default()).unwrap();
            assert!(fit.converged, "frac {frac}: {:?}", fit.note);
            assert!(fit.kkt_residual <= 1e-8);
            let recomputed = penalized_objective(&d, &fit.theta_hat, fit.lambda, &w).unwrap();
            assert!((recomputed - fit.objective).abs() <= 1e-12);
            let again = kkt_residual(&d, &fit.theta_hat, fit.lambda, &w).unwrap();
            assert_eq!(again, fit.kkt_residual);
        }
    }

    #[test]
    fn kkt_grows_off_the_optimum() {
        let d = sample_dataset(&dgp(3, vec![0.8, -0.5, 0.0]), 200, 3).unwrap();
        let w = empirical_sigma(&d);
        let lam = 0.3 * lambda_max(&d, &w).unwrap();
        let fit = fit_lasso(&d, lam, &w, &FitOptions::default()).unwrap();
        let mut off = fit.theta_hat.clone();
        off[0] += 0.1;
        assert!(kkt_residual(&d, &off, lam, &w).unwrap() > fit.kkt_residual);
    }

    #[test]
    fn unpenalized_fit_matches_newton() {
        let d = sample_dataset(&dgp(3, vec![0.8, -0.5, 0.2]), 100, 4).unwrap();
        let w = empirical_sigma(&d);
        let mle = fit_mle(&d, &FitOptions::default()).unwrap();
        assert!(mle.converged);
        assert!(sup_norm(&partial_likelihood_gradient(&d, &mle.theta_hat).unwrap()) <= 1e-10);
        let fit = fit_lasso(&d, 0.0, &w, &FitOptions::default()).unwrap();
        for (a, b) in fit.theta_hat.iter().zip(&mle.theta_hat) {
            assert!((a - b).abs() <= 1e-6);
        }
        let again = fit_mle_from(&d, &FitOptions::default(), &mle.theta_hat).unwrap();
        assert!(again.iterations <= 1);
        assert_eq!(kkt_residual(&d, &mle.theta_hat, 0.0, &w).unwrap(), sup_norm(&partial_likelihood_gradient(&d, &mle.theta_hat).unwrap()));
    }

    #[test]
    fn separable_data_reports_divergence() {
        let d = Dataset::new(vec![
            Observation { y: 1.0, event: true, x: vec![0.0] },
            Observation { y: 2.0, event: true, x: vec![1.0] },
        ])
        .unwrap();
        assert!(matches!(fit_mle(&d, &FitOptions::default()), Err(Error::Divergence(_))));
    }

    #[test]
    fn balanced_binary_covariate_converges() {
        let mk = |y: f64, x: f64| Observation { y, event: true, x: vec![x] };
        let d = Dataset::new(vec![mk(1.0, 1.0), mk(2.0, 0.0), mk(3.0, 1.0), mk(4.0, 0.0), mk(5.0, 0.0), mk(6.0, 1.0)])
            .unwrap();
        let fit = fit_mle(&d, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.kkt_residual <= 1e-10);
    }

    #[test]
    fn no_events_rejected() {
        let d = Dataset::new(vec![Observation { y: 1.0, event: false, x: vec![1.0] }]).unwrap();
        assert!(matches!(fit_lasso(&d, 0.1, &[1.0], &FitOptions::default()), Err(Error::NoEvents)));
    }

    #[test]
    fn path_starts_at_zero_and_singleton_matches() {
        let d = sample_dataset(&dgp(4, vec![0.8, -0.5, 0.0, 0.0]), 200, 5).unwrap();
        let w = empirical_sigma(&d);
        let lmax = lambda_max(&d, &w).unwrap();
        let grid: Vec<f64> = (0..6).map(|i| lmax * 0.6f64.powi(i)).collect();
        let path = regularization_path(&d, &grid, &w, &FitOptions::default()).unwrap();
        assert!(path[0].theta_hat.iter().all(|v| *v == 0.0));
        assert!(path.iter().all(|f| f.converged && f.kkt_residual <= 1e-8));
        let single = regularization_path(&d, &grid[2..3], &w, &FitOptions::default()).unwrap();
        let direct = fit_lasso(&d, grid[2], &w, &FitOptions::default()).unwrap();
        assert_eq!(single[0], direct);
        assert!(regularization_path(&d, &[0.1, 0.2], &w, &FitOptions::default()).is_err());

        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,k,theta_k,objective,kkt_residual,df\n"));
        assert_eq!(text.lines().count(), 1 + path.len() + path.iter().map(|f| f.active_set.len()).sum::<usize>());
    }

    #[test]
    fn l1_ball_projection() {
        let mut v = vec![3.0, -1.0, 0.5];
        project_l1_ball(&mut v, 2.0);
        assert!((l1_norm(&v) - 2.0).abs() < 1e-12);
        assert_eq!(v, vec![2.0, 0.0, 0.0]);
        let mut w = vec![0.3, -0.2];
        project_l1_ball(&mut w, 1.0);
        assert_eq!(w, vec![0.3, -0.2]);
    }

    #[test]
    fn constrained_fit_respects_radius() {
        let d = sample_dataset(&dgp(3, vec![1.5, -1.0, 0.0]), 300, 6).unwrap();
        let w = empirical_sigma(&d);
        let opts = FitOptions { l1_radius: Some(0.5), ..FitOptions::default() };
        let fit = fit_lasso(&d, 0.001, &w, &opts).unwrap();
        assert!(l1_norm(&fit.theta_hat) <= 0.5 + 1e-12);
        assert!(fit.converged, "{:?}", fit.note);
    }
}

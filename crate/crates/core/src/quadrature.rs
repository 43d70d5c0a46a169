//! Adaptive Simpson quadrature for vector-valued integrands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Relative tolerance, measured against the largest component of the
    /// integral of `|f|` over the interval.
    pub rel_tol: f64,
    /// Maximum number of interval splits per call.
    pub max_subdivisions: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_subdivisions: 200_000,
        }
    }
}

impl QuadratureOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("quadrature tolerance must be positive"));
        }
        if self.max_subdivisions < 4 {
            return Err(Error::invalid("quadrature needs at least 4 subdivisions"));
        }
        Ok(())
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: Vec<f64>,
    fm: Vec<f64>,
    fb: Vec<f64>,
    whole: Vec<f64>,
    tol: f64,
}

fn simpson(a: f64, b: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    let h = (b - a) / 6.0;
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((x, y), z)| h * (x + 4.0 * y + z))
        .collect()
}

/// Integrates `f` over `[a, b]`; `f(t, out)` writes `dim` components into `out`.
pub fn integrate<F>(f: F, a: f64, b: f64, dim: usize, opts: &QuadratureOptions) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let mut total = vec![0.0; dim];
    if !(b > a) {
        return Ok(total);
    }
    let eval = |t: f64| {
        let mut v = vec![0.0; dim];
        f(t, &mut v);
        v
    };

    // Coarse pass over four panels fixes the absolute tolerance.
    const START: usize = 4;
    let nodes: Vec<f64> = (0..=2 * START)
        .map(|i| a + (b - a) * i as f64 / (2 * START) as f64)
        .collect();
    let values: Vec<Vec<f64>> = nodes.iter().map(|&t| eval(t)).collect();
    let mut scale = 0.0_f64;
    for j in 0..dim {
        let abs: Vec<f64> = values.iter().map(|v| v[j].abs()).collect();
        let mut s = 0.0;
        for p in 0..START {
            let h = (nodes[2 * p + 2] - nodes[2 * p]) / 6.0;
            s += h * (abs[2 * p] + 4.0 * abs[2 * p + 1] + abs[2 * p + 2]);
        }
        scale = scale.max(s);
    }
    let abs_tol = opts.rel_tol * scale;
    let min_width = (b - a) * 1e-12;

    let mut stack: Vec<Panel> = (0..START)
        .rev()
        .map(|p| {
            let (pa, pb) = (nodes[2 * p], nodes[2 * p + 2]);
            let (fa, fm, fb) = (
                values[2 * p].clone(),
                values[2 * p + 1].clone(),
                values[2 * p + 2].clone(),
            );
            let whole = simpson(pa, pb, &fa, &fm, &fb);
            Panel {
                a: pa,
                b: pb,
                fa,
                fm,
                fb,
                whole,
                tol: abs_tol / START as f64,
            }
        })
        .collect();

    let mut splits = 0usize;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let flm = eval(0.5 * (p.a + m));
        let frm = eval(0.5 * (m + p.b));
        let left = simpson(p.a, m, &p.fa, &flm, &p.fm);
        let right = simpson(m, p.b, &p.fm, &frm, &p.fb);
        let err = left
            .iter()
            .zip(&right)
            .zip(&p.whole)
            .map(|((l, r), w)| (l + r - w).abs())
            .fold(0.0_f64, f64::max);
        if err.is_nan() {
            return Err(Error::Quadrature {
                lo: p.a,
                hi: p.b,
                subdivisions: splits,
            });
        }
        if err <= 15.0 * p.tol || (p.b - p.a) < min_width {
            for j in 0..dim {
                let s = left[j] + right[j];
                total[j] += s + (s - p.whole[j]) / 15.0;
            }
            continue;
        }
        splits += 1;
        if splits > opts.max_subdivisions {
            return Err(Error::Quadrature {
                lo: a,
                hi: b,
                subdivisions: splits,
            });
        }
        let half = 0.5 * p.tol;
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm.clone(),
            fm: frm,
            fb: p.fb,
            whole: right,
            tol: half,
        });
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol: half,
        });
    }
    Ok(total)
}

/// Scalar convenience wrapper.
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, opts: &QuadratureOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    Ok(integrate(|t, out| out[0] = f(t), a, b, 1, opts)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let o = QuadratureOptions::default();
        let v = integrate_scalar(|t| t * t, 0.0, 3.0, &o).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate_scalar(|t| (-2.0 * t).exp(), 0.0, 1.5, &o).unwrap();
        let exact = (1.0 - (-3.0f64).exp()) / 2.0;
        assert!((v - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn vector_integrand() {
        let o = QuadratureOptions::default();
        let v = integrate(
            |t, out| {
                out[0] = t.sin();
                out[1] = t.ln_1p();
            },
            0.0,
            1.0,
            2,
            &o,
        )
        .unwrap();
        assert!((v[0] - (1.0 - 1f64.cos())).abs() < 1e-11);
        assert!((v[1] - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        let o = QuadratureOptions {
            rel_tol: 1e-15,
            max_subdivisions: 4,
        };
        assert!(integrate_scalar(|t| (50.0 * t).sin().abs(), 0.0, 1.0, &o).is_err());
    }
}

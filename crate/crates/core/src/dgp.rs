//! Synthetic censored-survival population and the datasets sampled from it.
//!
//! Covariates take finitely many values (atoms). Each atom row holds the
//! basis evaluations `ψ_1(x), …, ψ_m(x)` directly, so the identity basis is
//! the common case and any other basis is supplied as a precomputed table.
//! Event times follow a Cox model with piecewise-constant baseline hazard;
//! censoring is `min(Uniform[0, upper], tau)`, independent of the covariates.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::dot;
use crate::rng;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateLaw {
    atoms: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl CovariateLaw {
    pub fn new(atoms: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDgp("covariate law has no atoms".into()));
        }
        if atoms.len() != probs.len() {
            return Err(Error::InvalidDgp(format!(
                "{} atoms but {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        let m = atoms[0].len();
        if m == 0 {
            return Err(Error::InvalidDgp("atoms must have at least one coordinate".into()));
        }
        for (r, a) in atoms.iter().enumerate() {
            if a.len() != m {
                return Err(Error::InvalidDgp(format!(
                    "atom {r} has length {} (expected {m})",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDgp(format!("atom {r} has a non-finite entry")));
            }
        }
        for (r, &p) in probs.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidDgp(format!("probability {r} is not positive: {p}")));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDgp(format!("probabilities sum to {total}, not 1")));
        }
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                if atoms[i] == atoms[j] {
                    return Err(Error::InvalidDgp(format!("atoms {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { atoms, probs })
    }

    /// Uniform law on the rows of a Sylvester–Hadamard matrix, restricted to
    /// columns `1..=m`. The basis is orthonormal under this law: every
    /// `σ_k = 1` and the Gram matrix is the identity.
    pub fn hadamard(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDgp("hadamard design needs m >= 1".into()));
        }
        let size = (m + 1).next_power_of_two();
        let atoms: Vec<Vec<f64>> = (0..size)
            .map(|r| {
                (1..=m)
                    .map(|c| if (r & c).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let probs = vec![1.0 / size as f64; size];
        Self::new(atoms, probs)
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of basis functions `m`.
    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `σ_k = (E ψ_k²)^{1/2}`, exact over the atoms.
    pub fn sigma(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                self.atoms
                    .iter()
                    .zip(&self.probs)
                    .map(|(a, p)| p * a[k] * a[k])
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `E[ψ_j ψ_k]`.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        let mut g = vec![vec![0.0; m]; m];
        for (a, p) in self.atoms.iter().zip(&self.probs) {
            for j in 0..m {
                for k in 0..m {
                    g[j][k] += p * a[j] * a[k];
                }
            }
        }
        g
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (r, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return r;
            }
        }
        self.probs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
}

impl BaselineHazard {
    /// `breakpoints[j]` is the left end of the segment with hazard `rates[j]`;
    /// the last segment extends to infinity.
    pub fn new(breakpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != rates.len() {
            return Err(Error::InvalidDgp(
                "hazard needs equally many breakpoints and rates (at least one)".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidDgp("first hazard breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidDgp("hazard breakpoints must be strictly increasing".into()));
        }
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidDgp("hazard rates must be positive and finite".into()));
        }
        Ok(Self { breakpoints, rates })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rate])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    fn segment(&self, t: f64) -> usize {
        match self.breakpoints.partition_point(|&b| b <= t) {
            0 => 0,
            j => j - 1,
        }
    }

    /// `λ₀(t)`, right-continuous at breakpoints.
    pub fn rate(&self, t: f64) -> f64 {
        self.rates[self.segment(t)]
    }

    /// `Λ₀(t) = ∫₀ᵗ λ₀`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.rates.len() {
            let lo = self.breakpoints[j];
            if t <= lo {
                break;
            }
            let hi = self.breakpoints.get(j + 1).copied().unwrap_or(f64::INFINITY);
            acc += self.rates[j] * (t.min(hi) - lo);
        }
        acc
    }

    /// Solves `Λ₀(t) = e` for `e ≥ 0`.
    pub fn inverse_cumulative(&self, e: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.rates.len() {
            let lo = self.breakpoints[j];
            let hi = self.breakpoints.get(j + 1).copied().unwrap_or(f64::INFINITY);
            let seg = self.rates[j] * (hi - lo);
            if acc + seg >= e {
                return lo + (e - acc) / self.rates[j];
            }
            acc += seg;
        }
        unreachable!("last hazard segment is unbounded")
    }

    /// Pieces of `[0, end]` on which `λ₀` is constant.
    pub fn pieces(&self, end: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for j in 0..self.rates.len() {
            let lo = self.breakpoints[j];
            if lo >= end {
                break;
            }
            let hi = self.breakpoints.get(j + 1).copied().unwrap_or(f64::INFINITY).min(end);
            out.push((lo, hi));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringLaw {
    /// Upper end of the uniform censoring law; `f64::INFINITY` means
    /// administrative censoring only.
    upper: f64,
    tau: f64,
}

impl CensoringLaw {
    pub fn new(upper: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidDgp(format!("tau must be positive and finite, got {tau}")));
        }
        if !(upper > tau) {
            return Err(Error::InvalidDgp(format!(
                "uniform censoring bound {upper} must exceed tau = {tau}"
            )));
        }
        Ok(Self { upper, tau })
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `P(C₀ ≥ t)` for `0 ≤ t ≤ tau`.
    pub fn survival(&self, t: f64) -> f64 {
        if self.upper.is_infinite() {
            1.0
        } else {
            1.0 - t / self.upper
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DgpParts", into = "DgpParts")]
pub struct Dgp {
    covariates: CovariateLaw,
    hazard: BaselineHazard,
    censoring: CensoringLaw,
    theta_true: Vec<f64>,
    true_eta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DgpParts {
    covariates: CovariateLaw,
    hazard: BaselineHazard,
    censoring: CensoringLaw,
    theta_true: Vec<f64>,
}

impl TryFrom<DgpParts> for Dgp {
    type Error = Error;
    fn try_from(p: DgpParts) -> Result<Self> {
        let covariates = CovariateLaw::new(p.covariates.atoms, p.covariates.probs)?;
        let hazard = BaselineHazard::new(p.hazard.breakpoints, p.hazard.rates)?;
        let censoring = CensoringLaw::new(p.censoring.upper, p.censoring.tau)?;
        Dgp::new(covariates, hazard, censoring, p.theta_true)
    }
}

impl From<Dgp> for DgpParts {
    fn from(d: Dgp) -> Self {
        Self {
            covariates: d.covariates,
            hazard: d.hazard,
            censoring: d.censoring,
            theta_true: d.theta_true,
        }
    }
}

impl Dgp {
    pub fn new(
        covariates: CovariateLaw,
        hazard: BaselineHazard,
        censoring: CensoringLaw,
        theta_true: Vec<f64>,
    ) -> Result<Self> {
        if theta_true.len() != covariates.dim() {
            return Err(Error::InvalidDgp(format!(
                "theta_true has length {} but atoms have {} coordinates",
                theta_true.len(),
                covariates.dim()
            )));
        }
        if theta_true.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDgp("theta_true must be finite".into()));
        }
        let true_eta = covariates.atoms().iter().map(|a| dot(a, &theta_true)).collect();
        let dgp = Self {
            covariates,
            hazard,
            censoring,
            theta_true,
            true_eta,
        };
        let pi = dgp.pi();
        if !(pi > 0.0) {
            return Err(Error::InvalidDgp(format!("P(Y >= tau) = {pi} is not positive")));
        }
        Ok(dgp)
    }

    pub fn covariates(&self) -> &CovariateLaw {
        &self.covariates
    }

    pub fn hazard(&self) -> &BaselineHazard {
        &self.hazard
    }

    pub fn censoring(&self) -> &CensoringLaw {
        &self.censoring
    }

    pub fn theta_true(&self) -> &[f64] {
        &self.theta_true
    }

    pub fn dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn tau(&self) -> f64 {
        self.censoring.tau
    }

    /// `f̄(x_r)` for every atom.
    pub fn true_eta(&self) -> &[f64] {
        &self.true_eta
    }

    /// `π = P(Y ≥ τ)`.
    pub fn pi(&self) -> f64 {
        let tau = self.tau();
        let cum = self.hazard.cumulative(tau);
        let st: f64 = self
            .covariates
            .probs()
            .iter()
            .zip(&self.true_eta)
            .map(|(p, eta)| p * (-cum * eta.exp()).exp())
            .sum();
        self.censoring.survival(tau) * st
    }

    /// `P(Y ≥ t | X = x)` on `[0, τ]`.
    pub fn at_risk_probability(&self, x: &[f64], t: f64) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "covariate vector has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if !(0.0..=self.tau()).contains(&t) {
            return Err(Error::invalid(format!("t = {t} outside [0, tau = {}]", self.tau())));
        }
        let eta = dot(x, &self.theta_true);
        Ok((-self.hazard.cumulative(t) * eta.exp()).exp() * self.censoring.survival(t))
    }

    /// Draws one `(Y, Δ, X)` triple; returns the atom index alongside.
    pub fn sample_observation<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Observation) {
        let r = self.covariates.sample_index(rng);
        let e: f64 = rng.sample(Exp1);
        let t = self.hazard.inverse_cumulative(e * (-self.true_eta[r]).exp());
        let u: f64 = rng.random();
        let c0 = if self.censoring.upper.is_infinite() {
            f64::INFINITY
        } else {
            u * self.censoring.upper
        };
        let c = c0.min(self.tau());
        let obs = Observation {
            y: t.min(c),
            event: t <= c,
            x: self.covariates.atoms()[r].clone(),
        };
        (r, obs)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let obs = (0..n).map(|_| self.sample_observation(rng).1).collect();
        Dataset::new(obs)
    }
}

/// Draws `n` iid observations; deterministic in `(dgp, n, seed)`.
pub fn sample_dataset(dgp: &Dgp, n: usize, seed: u64) -> Result<Dataset> {
    dgp.sample_with(n, &mut rng::stream(seed, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub event: bool,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn delta(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    sort_index: Vec<usize>,
    dim: usize,
}

/// Total order used for `sort_index`: time, then event flag, then covariates.
/// Rows equal under this order are identical, so the summation order of
/// every risk-set sum is a function of the multiset of rows alone.
fn canonical_cmp(a: &Observation, b: &Observation) -> Ordering {
    a.y.total_cmp(&b.y)
        .then(a.event.cmp(&b.event))
        .then_with(|| {
            a.x.iter()
                .zip(&b.x)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let Some(first) = observations.first() else {
            return Err(Error::EmptyDataset);
        };
        let dim = first.x.len();
        for (i, o) in observations.iter().enumerate() {
            if o.x.len() != dim {
                return Err(Error::invalid(format!(
                    "observation {i} has {} covariates, expected {dim}",
                    o.x.len()
                )));
            }
            if !o.y.is_finite() || o.y < 0.0 || o.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("observation {i} has invalid values")));
            }
        }
        let mut sort_index: Vec<usize> = (0..observations.len()).collect();
        // stable sort: identical rows keep their original order
        sort_index.sort_by(|&i, &j| canonical_cmp(&observations[i], &observations[j]));
        Ok(Self {
            observations,
            sort_index,
            dim,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Permutation putting `y` in nondecreasing order.
    pub fn sort_index(&self) -> &[usize] {
        &self.sort_index
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn event_count(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    /// Observations in `sort_index` order.
    pub fn sorted(&self) -> impl DoubleEndedIterator<Item = &Observation> + ExactSizeIterator {
        self.sort_index.iter().map(move |&i| &self.observations[i])
    }

    /// Copy with every covariate column `k` multiplied by `scale[k]`.
    pub fn rescaled(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.dim {
            return Err(Error::invalid("scale vector has the wrong length"));
        }
        let obs = self
            .observations
            .iter()
            .map(|o| Observation {
                y: o.y,
                event: o.event,
                x: o.x.iter().zip(scale).map(|(v, s)| v * s).collect(),
            })
            .collect();
        Dataset::new(obs)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_csv(BufWriter::new(file)).map_err(io_err)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "delta".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        wtr.write_record(&header)?;
        for o in &self.observations {
            let mut rec = vec![format!("{}", o.y), if o.event { "1" } else { "0" }.to_string()];
            rec.extend(o.x.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let csv_err = |line: u64, message: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => Error::Io {
                    path: path.to_path_buf(),
                    source: std::io::Error::other(e.to_string()),
                },
                _ => csv_err(1, e.to_string()),
            })?;
        let header = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "y" || &header[1] != "delta" {
            return Err(csv_err(1, "header must be y,delta,x1,...,xm".into()));
        }
        for (k, name) in header.iter().skip(2).enumerate() {
            if name != format!("x{}", k + 1) {
                return Err(csv_err(1, format!("unexpected column name {name:?}")));
            }
        }
        let m = header.len() - 2;
        let mut obs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                csv_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != m + 2 {
                return Err(csv_err(line, format!("expected {} fields, found {}", m + 2, rec.len())));
            }
            let num = |idx: usize| -> Result<f64> {
                let v: f64 = rec[idx]
                    .parse()
                    .map_err(|_| csv_err(line, format!("field {:?} is not a number", &rec[idx])))?;
                if !v.is_finite() {
                    return Err(csv_err(line, format!("field {:?} is not finite", &rec[idx])));
                }
                Ok(v)
            };
            let y = num(0)?;
            if y < 0.0 {
                return Err(csv_err(line, format!("negative time {y}")));
            }
            let d = num(1)?;
            let event = if d == 1.0 {
                true
            } else if d == 0.0 {
                false
            } else {
                return Err(csv_err(line, format!("delta must be 0 or 1, found {}", &rec[1])));
            };
            let x = (0..m).map(|k| num(k + 2)).collect::<Result<Vec<_>>>()?;
            obs.push(Observation { y, event, x });
        }
        Dataset::new(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_dgp() -> Dgp {
        Dgp::new(
            CovariateLaw::new(vec![vec![1.0]], vec![1.0]).unwrap(),
            BaselineHazard::constant(1.0).unwrap(),
            CensoringLaw::new(2.0, 1.0).unwrap(),
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let dgp = unit_dgp();
        let a = sample_dataset(&dgp, 5, 7).unwrap();
        let b = sample_dataset(&dgp, 5, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_dataset(&dgp, 5, 8).unwrap());
    }

    #[test]
    fn rejects_zero_sample_size() {
        assert!(sample_dataset(&unit_dgp(), 0, 1).is_err());
    }

    #[test]
    fn rejects_unbounded_follow_up() {
        assert!(CensoringLaw::new(f64::INFINITY, f64::INFINITY).is_err());
        assert!(CensoringLaw::new(1.0, 1.0).is_err());
        assert!(CensoringLaw::new(f64::INFINITY, 1.0).is_ok());
    }

    #[test]
    fn at_risk_probability_closed_forms() {
        let dgp = unit_dgp();
        assert_eq!(dgp.at_risk_probability(&[1.0], 0.0).unwrap(), 1.0);
        let mid = dgp.at_risk_probability(&[1.0], 0.5).unwrap();
        assert!((mid - (-0.5f64).exp() * 0.75).abs() < 1e-15);
        let end = dgp.at_risk_probability(&[1.0], 1.0).unwrap();
        assert!((end - (-1.0f64).exp() * 0.5).abs() < 1e-15);
        assert!((end - dgp.pi()).abs() < 1e-15);
        assert!(dgp.at_risk_probability(&[1.0], 1.5).is_err());
        assert!(dgp.at_risk_probability(&[1.0], -0.1).is_err());
    }

    #[test]
    fn hazard_inverse_round_trips() {
        let h = BaselineHazard::new(vec![0.0, 0.3, 0.8], vec![0.5, 2.0, 1.0]).unwrap();
        for &t in &[0.0, 0.1, 0.3, 0.55, 0.8, 1.7, 5.0] {
            let e = h.cumulative(t);
            assert!((h.inverse_cumulative(e) - t).abs() < 1e-12, "t = {t}");
        }
        assert_eq!(h.pieces(1.0), vec![(0.0, 0.3), (0.3, 0.8), (0.8, 1.0)]);
        assert_eq!(h.pieces(0.3), vec![(0.0, 0.3)]);
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(CovariateLaw::new(vec![vec![1.0], vec![1.0]], vec![0.5, 0.5]).is_err());
        assert!(CovariateLaw::new(vec![vec![1.0], vec![2.0]], vec![0.5, 0.6]).is_err());
        assert!(CovariateLaw::new(vec![vec![1.0], vec![2.0]], vec![1.0, 0.0]).is_err());
        assert!(BaselineHazard::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(BaselineHazard::new(vec![0.1], vec![1.0]).is_err());
        assert!(BaselineHazard::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn hadamard_design_is_orthonormal() {
        for m in [1, 3, 4, 10] {
            let law = CovariateLaw::hadamard(m).unwrap();
            for (j, row) in law.gram().iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    let expect = if j == k { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn observations_respect_tau() {
        let dgp = unit_dgp();
        let d = sample_dataset(&dgp, 500, 3).unwrap();
        assert!(d.observations().iter().all(|o| o.y >= 0.0 && o.y <= 1.0));
        let ys: Vec<f64> = d.sorted().map(|o| o.y).collect();
        assert!(ys.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let dgp = unit_dgp();
        let d = sample_dataset(&dgp, 50, 11).unwrap();
        d.save_csv(&path).unwrap();
        assert_eq!(Dataset::load_csv(&path).unwrap(), d);

        std::fs::write(&path, "y,delta,x1\n").unwrap();
        assert!(matches!(Dataset::load_csv(&path), Err(Error::EmptyDataset)));

        std::fs::write(&path, "y,delta,x1\n0.5,1,1\n0.7,2,1\n").unwrap();
        match Dataset::load_csv(&path) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}

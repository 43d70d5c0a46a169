//! TOML configuration schema.

use std::path::{Path, PathBuf};

use coxcert::bounds::BoundConfig;
use coxcert::dgp::{BaselineHazard, CensoringLaw, CovariateLaw, Dgp};
use coxcert::quadrature::QuadratureOptions;
use coxcert::solver::FitOptions;
use coxcert::verify::{VerificationPlan, VerifyOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub dgp: Option<DgpConfig>,
    pub quadrature: Option<QuadratureOptions>,
    pub simulate: Option<SimulateConfig>,
    pub solver: Option<SolverConfig>,
    pub bounds: Option<BoundsConfig>,
    pub verify: Option<VerifyOptions>,
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub covariates: CovariatesConfig,
    pub hazard: HazardConfig,
    pub censoring: CensoringConfig,
    pub theta_true: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariatesConfig {
    /// Rows of a Sylvester–Hadamard matrix, `m` columns, uniform weights.
    Hadamard { hadamard: usize },
    Explicit { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardConfig {
    /// Left endpoints of the constant pieces, starting at 0.
    #[serde(default = "zero_breakpoint")]
    pub breakpoints: Vec<f64>,
    pub rates: Vec<f64>,
}

fn zero_breakpoint() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensoringConfig {
    pub tau: f64,
    /// Upper end of the uniform censoring law; omit for administrative
    /// censoring at `tau` only.
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    /// `"A1"`: `λ_n = (1+b)(λ̄ᴬ + λ̄ᴮ)` from the bounds block.
    Rule(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: LambdaSpec,
    #[serde(default)]
    pub options: FitOptions,
    /// Number of points on a geometric λ-path written next to the fit.
    pub path_points: Option<usize>,
    #[serde(default = "default_path_ratio")]
    pub path_ratio: f64,
}

fn default_path_ratio() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub b: f64,
    pub d: f64,
    pub delta: f64,
    pub r1: f64,
    pub n1: Option<u32>,
    pub n2: Option<u32>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    #[serde(default = "one")]
    pub w: f64,
    pub c0: Option<f64>,
    pub eta: f64,
    pub l1_radius: f64,
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    /// Sample size for the constants; defaults to the verify or simulate size.
    pub n: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn default_s_max() -> usize {
    2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dataset: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub path_csv: Option<PathBuf>,
    pub replications_csv: Option<PathBuf>,
}

/// A parsed config together with the hash of its source text.
pub struct LoadedConfig {
    pub config: Config,
    pub hash: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config: Config =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig {
        config,
        hash: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

pub fn require<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    block
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing [{name}] block")))
}

impl DgpConfig {
    pub fn build(&self) -> Result<Dgp, CliError> {
        let covariates = match &self.covariates {
            CovariatesConfig::Hadamard { hadamard } => CovariateLaw::hadamard(*hadamard),
            CovariatesConfig::Explicit { atoms, probs } => CovariateLaw::new(atoms.clone(), probs.clone()),
        }
        .map_err(config_error)?;
        let hazard =
            BaselineHazard::new(self.hazard.breakpoints.clone(), self.hazard.rates.clone()).map_err(config_error)?;
        let censoring = CensoringLaw::new(self.censoring.upper.unwrap_or(f64::INFINITY), self.censoring.tau)
            .map_err(config_error)?;
        Dgp::new(covariates, hazard, censoring, self.theta_true.clone()).map_err(config_error)
    }
}

fn config_error(e: coxcert::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl BoundsConfig {
    pub fn build(&self) -> Result<BoundConfig, CliError> {
        let pick = |n: Option<u32>, v: Option<f64>, name: &str| -> Result<f64, CliError> {
            match (n, v) {
                (Some(n), None) => Ok((1.0 + self.b).powi(-(n as i32))),
                (None, Some(v)) => Ok(v),
                (Some(_), Some(_)) => Err(CliError::Config(format!("give either n{name} or delta{name}, not both"))),
                (None, None) => Err(CliError::Config(format!("[bounds] needs n{name} or delta{name}"))),
            }
        };
        let cfg = BoundConfig {
            b: self.b,
            d: self.d,
            delta: self.delta,
            r1: self.r1,
            delta1: pick(self.n1, self.delta1, "1")?,
            delta2: pick(self.n2, self.delta2, "2")?,
            w: self.w,
            c0: self.c0,
            eta: self.eta,
            l1_radius: self.l1_radius,
        };
        cfg.validate().map_err(config_error)?;
        Ok(cfg)
    }
}

impl Config {
    pub fn quadrature(&self) -> QuadratureOptions {
        self.quadrature.unwrap_or_default()
    }

    /// Sample size used for bound constants.
    pub fn bounds_sample_size(&self) -> Result<usize, CliError> {
        self.bounds
            .as_ref()
            .and_then(|b| b.n)
            .or(self.verify.as_ref().map(|v| v.n))
            .or(self.simulate.as_ref().map(|s| s.n))
            .ok_or_else(|| CliError::Config("no sample size: set bounds.n, verify.n or simulate.n".into()))
    }

    pub fn plan(&self, seed: u64) -> Result<VerificationPlan, CliError> {
        let bounds = require(&self.bounds, "bounds")?;
        let verify = require(&self.verify, "verify")?.clone();
        Ok(VerificationPlan {
            dgp: require(&self.dgp, "dgp")?.build()?,
            quadrature: self.quadrature(),
            bounds: bounds.build()?,
            s_max: bounds.s_max,
            fit: self.solver.as_ref().map(|s| s.options.clone()).unwrap_or_default(),
            verify,
            seed,
        })
    }
}

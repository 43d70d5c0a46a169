mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coxcert::bounds::{self, BoundConstants};
use coxcert::dgp::{sample_dataset, Dataset};
use coxcert::emploss::empirical_sigma;
use coxcert::population::PopulationContext;
use coxcert::solver::{self, FitResult, WeightMode};
use coxcert::verify::{self, REPORT_VERSION};
use serde::Serialize;

use crate::config::{require, LambdaSpec, LoadedConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "coxcert", version, about = "Lasso Cox regression with certified oracle-inequality checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "COXCERT_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the configured model and write it as CSV.
    Simulate,
    /// Fit the weighted-lasso Cox model to a CSV dataset.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Report bound constants, oracle quantities and the theorem probability.
    Bounds,
    /// Run the Monte-Carlo verification checks.
    Verify,
    /// Run the excess-risk rate sweep over the configured n-grid.
    Sweep,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let loaded = config::load(path)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate => cmd_simulate(cli, &loaded),
        Command::Fit { data } => cmd_fit(cli, &loaded, data.as_deref()),
        Command::Bounds => cmd_bounds(cli, &loaded),
        Command::Verify => cmd_verify(cli, &loaded),
        Command::Sweep => cmd_sweep(cli, &loaded),
    })
}

fn seed(cli: &Cli, loaded: &LoadedConfig) -> u64 {
    cli.seed.or(loaded.config.seed).unwrap_or(0)
}

fn output_path<'a>(cli: &'a Cli, fallback: Option<&'a PathBuf>) -> Option<&'a Path> {
    cli.out.as_deref().or(fallback.map(|p| p.as_path()))
}

fn write_bytes(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn outputs(loaded: &LoadedConfig) -> config::OutputConfig {
    loaded.config.output.clone().unwrap_or_default()
}

fn cmd_simulate(cli: &Cli, loaded: &LoadedConfig) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let dgp = require(&cfg.dgp, "dgp")?.build()?;
    let n = require(&cfg.simulate, "simulate")?.n;
    let data = sample_dataset(&dgp, n, seed(cli, loaded))?;
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes).map_err(|e| CliError::Io(e.to_string()))?;
    write_bytes(output_path(cli, outputs(loaded).dataset.as_ref()), &bytes)
}

#[derive(Serialize)]
struct KktCertificate {
    residual: f64,
    tolerance: f64,
    certified: bool,
}

#[derive(Serialize)]
struct MleCrossCheck {
    newton_theta: Vec<f64>,
    max_abs_difference: f64,
}

#[derive(Serialize)]
struct FitReport {
    version: &'static str,
    config_hash: String,
    n: usize,
    events: usize,
    lambda_rule: Option<String>,
    lambda: f64,
    lambda_max: f64,
    weight_mode: WeightMode,
    weights: Vec<f64>,
    fit: FitResult,
    kkt: KktCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    constants: Option<BoundConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mle_cross_check: Option<MleCrossCheck>,
}

fn cmd_fit(cli: &Cli, loaded: &LoadedConfig, data: Option<&Path>) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let solver_cfg = require(&cfg.solver, "solver")?;
    let out = outputs(loaded);
    let data_path = data
        .or(out.dataset.as_deref())
        .ok_or_else(|| CliError::Config("no dataset: pass --data or set output.dataset".into()))?;
    let dataset = Dataset::load_csv(data_path)?;
    let opts = solver_cfg.options.clone();
    opts.validate()?;

    let weights = match opts.weight_mode {
        WeightMode::Empirical => empirical_sigma(&dataset),
        WeightMode::Theoretical => require(&cfg.dgp, "dgp")?.build()?.covariates().sigma(),
    };
    if weights.len() != dataset.dim() {
        return Err(CliError::Config("dataset and model have different dimensions".into()));
    }
    let (lambda, rule, constants) = match &solver_cfg.lambda {
        LambdaSpec::Value(v) => (*v, None, None),
        LambdaSpec::Rule(r) if r.eq_ignore_ascii_case("A1") => {
            let dgp = require(&cfg.dgp, "dgp")?.build()?;
            let bcfg = require(&cfg.bounds, "bounds")?.build()?;
            let c = bounds::bound_constants(&dgp, dataset.len(), &bcfg)?;
            (c.lam_n, Some("A1".to_string()), Some(c))
        }
        LambdaSpec::Rule(r) => return Err(CliError::Config(format!("unknown lambda rule {r:?}; use a number or \"A1\""))),
    };
    let fit = solver::fit_lasso(&dataset, lambda, &weights, &opts)?;
    let mle_cross_check = if lambda == 0.0 {
        let newton = solver::fit_mle(&dataset, &opts)?;
        let diff = newton
            .theta_hat
            .iter()
            .zip(&fit.theta_hat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Some(MleCrossCheck {
            newton_theta: newton.theta_hat,
            max_abs_difference: diff,
        })
    } else {
        None
    };
    if let (Some(points), Some(path_out)) = (solver_cfg.path_points, out.path_csv.as_ref()) {
        if points < 2 || !(solver_cfg.path_ratio > 0.0 && solver_cfg.path_ratio < 1.0) {
            return Err(CliError::Config("path_points must be ≥ 2 and path_ratio in (0, 1)".into()));
        }
        let top = solver::lambda_max(&dataset, &weights)?;
        let grid: Vec<f64> = (0..points)
            .map(|i| top * solver_cfg.path_ratio.powf(i as f64 / (points - 1) as f64))
            .collect();
        let path = solver::regularization_path(&dataset, &grid, &weights, &opts)?;
        let mut bytes = Vec::new();
        solver::write_path_csv(&path, &mut bytes).map_err(|e| CliError::Io(e.to_string()))?;
        write_bytes(Some(path_out), &bytes)?;
    }
    let report = FitReport {
        version: REPORT_VERSION,
        config_hash: loaded.hash.clone(),
        n: dataset.len(),
        events: dataset.event_count(),
        lambda_rule: rule,
        lambda,
        lambda_max: solver::lambda_max(&dataset, &weights)?,
        weight_mode: opts.weight_mode,
        weights,
        kkt: KktCertificate {
            residual: fit.kkt_residual,
            tolerance: opts.kkt_tolerance,
            certified: fit.kkt_residual <= opts.kkt_tolerance,
        },
        fit,
        constants,
        mle_cross_check,
    };
    let bytes = match cli.format {
        Format::Json => to_json(&report)?,
        Format::Csv => csv_bytes(
            &["k", "theta_hat"],
            &report
                .fit
                .theta_hat
                .iter()
                .enumerate()
                .map(|(k, t)| vec![(k + 1).to_string(), format!("{t:e}")])
                .collect::<Vec<_>>(),
        ),
    };
    write_bytes(output_path(cli, out.report.as_ref()), &bytes)?;
    if !report.fit.converged {
        return Err(CliError::Solver(
            report.fit.note.clone().unwrap_or_else(|| "iteration limit reached".into()),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    version: &'static str,
    config_hash: String,
    seed: u64,
    n: usize,
    config: bounds::BoundConfig,
    constants: BoundConstants,
    theorem_probability: bounds::TheoremProbability,
    w_sensitivity: Vec<bounds::WSensitivity>,
    true_support_compatibility: f64,
    oracle: bounds::OracleQuantities,
    l1_margin_inequality: bounds::MarginInequalityCheck,
}

fn cmd_bounds(cli: &Cli, loaded: &LoadedConfig) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let dgp = require(&cfg.dgp, "dgp")?.build()?;
    let bcfg_raw = require(&cfg.bounds, "bounds")?;
    let bcfg = bcfg_raw.build()?;
    let n = cfg.bounds_sample_size()?;
    let seed = seed(cli, loaded);
    let ctx = PopulationContext::new(dgp, cfg.quadrature())?;
    let constants = bounds::bound_constants(ctx.dgp(), n, &bcfg)?;
    let oracle = bounds::oracle_quantities(&ctx, &bcfg, &constants, bcfg_raw.s_max, seed)?;
    let support: Vec<usize> = (0..ctx.dgp().dim()).filter(|&k| ctx.dgp().theta_true()[k] != 0.0).collect();
    let report = BoundsReport {
        version: REPORT_VERSION,
        config_hash: loaded.hash.clone(),
        seed,
        n,
        theorem_probability: bounds::theorem_probability(&bcfg, &constants, n)?,
        w_sensitivity: bounds::w_sensitivity(&bcfg, &constants, &[1.0, 10.0, 100.0])?,
        true_support_compatibility: bounds::compatibility_d(ctx.dgp().covariates(), &support)?,
        l1_margin_inequality: bounds::check_l1_margin_inequality(
            &ctx,
            &bcfg,
            &oracle,
            &constants.sigma,
            1000,
            coxcert::rng::derive_seed(seed, "l1_margin"),
        )?,
        config: bcfg,
        constants,
        oracle,
    };
    let bytes = match cli.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let c = &report.constants;
            let p = &report.theorem_probability;
            let rows: Vec<Vec<String>> = [
                ("k_m", c.k_m),
                ("l_m", c.l_m),
                ("u_m", c.u_m),
                ("a_n", c.a_n),
                ("abar_n", c.abar_n),
                ("lambda_a", c.lam_a),
                ("lambda_b", c.lam_b),
                ("lambda_0", c.lam0),
                ("lambda_n", c.lam_n),
                ("d_b", c.d_b),
                ("pi", c.pi),
                ("eps_star", report.oracle.eps_star),
                ("zeta_star", report.oracle.zeta_star),
                ("theorem_probability_raw", p.raw),
                ("theorem_probability_clipped", p.clipped),
            ]
            .iter()
            .map(|(k, v)| vec![k.to_string(), format!("{v:e}")])
            .collect();
            csv_bytes(&["name", "value"], &rows)
        }
    };
    write_bytes(output_path(cli, outputs(loaded).report.as_ref()), &bytes)
}

fn cmd_verify(cli: &Cli, loaded: &LoadedConfig) -> Result<(), CliError> {
    let plan = loaded.config.plan(seed(cli, loaded))?;
    let mut report = verify::run_verification(&plan)?;
    report.config_hash = Some(loaded.hash.clone());
    let out = outputs(loaded);
    if let Some(p) = out.replications_csv.as_ref() {
        let mut bytes = Vec::new();
        verify::write_replications_csv(&report.checks, &mut bytes)?;
        write_bytes(Some(p), &bytes)?;
    }
    let bytes = match cli.format {
        Format::Json => to_json(&report)?,
        Format::Csv => csv_bytes(
            &["check", "replications", "empirical", "mc_standard_error", "bound", "verdict"],
            &report
                .checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        c.replications.to_string(),
                        format!("{:e}", c.empirical),
                        format!("{:e}", c.mc_standard_error),
                        format!("{:e}", c.bound),
                        serde_json::to_value(c.verdict)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    };
    write_bytes(output_path(cli, out.report.as_ref()), &bytes)?;
    if report.any_failed() {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| c.verdict == verify::Verdict::Fail)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::Verification(failed.join(", ")));
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport {
    version: &'static str,
    config_hash: String,
    seed: u64,
    sweep: verify::SweepResult,
}

fn cmd_sweep(cli: &Cli, loaded: &LoadedConfig) -> Result<(), CliError> {
    let seed = seed(cli, loaded);
    let plan = loaded.config.plan(seed)?;
    let sweep = verify::run_sweep(&plan)?;
    let bytes = match cli.format {
        Format::Json => to_json(&SweepReport {
            version: REPORT_VERSION,
            config_hash: loaded.hash.clone(),
            seed,
            sweep,
        })?,
        Format::Csv => csv_bytes(
            &["n", "lambda", "median_excess", "mean_excess", "mean_nonzero", "inconclusive"],
            &sweep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        format!("{:e}", r.lambda),
                        format!("{:e}", r.median_excess),
                        format!("{:e}", r.mean_excess),
                        format!("{:e}", r.mean_nonzero),
                        r.inconclusive.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    };
    write_bytes(output_path(cli, outputs(loaded).report.as_ref()), &bytes)
}

//! `emrates`: simulate datasets, run EM, estimate adaptive rates, evaluate
//! the theoretical bounds and run replicate studies.
//!
//! Every subcommand writes into the output directory (`--out`, else
//! `$EMRATES_OUT_DIR`, else `./emrates-out`) and finishes with a
//! `manifest.json` listing each emitted file with its SHA-256.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use em_rates::em::{estimate_rate_from_errors, estimate_rate_to_limit, run_em, EmSettings, RateFitSettings};
use em_rates::experiments::run_experiment;
use em_rates::io;
use em_rates::oracle::{
    check_sample_size_conditions, closed_form_bounds, epsilon_bounds, finite_sample_params,
    mc_population_grv_bound, BoundConstants,
};
use em_rates::rates::{compute_empirical_rates, BallSpec, KappaCeiling};
use em_rates::search::SearchBudget;
use em_rates::{Dataset, ModelKind, ModelSpec};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

const OUT_ENV: &str = "EMRATES_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "emrates", version, about = "EM with data-adaptive convergence-rate estimation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "emrates-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Run EM on a stored dataset and write its trajectory.
    RunEm(RunEmArgs),
    /// Estimate the empirical rates of a stored dataset.
    Rates(RatesArgs),
    /// Closed-form bounds, population estimates, ε-bounds and sample-size conditions.
    Oracle(OracleArgs),
    /// Run a replicate study from a TOML config.
    Experiment(ExperimentArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    Gmm,
    Mlr,
    Rmc,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Gmm => ModelKind::Gmm,
            KindArg::Mlr => ModelKind::Mlr,
            KindArg::Rmc => ModelKind::Rmc,
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: KindArg,
    /// Dimension; required unless --theta-star is given.
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated true parameter. Defaults to `(ησ/√p)·1` with η = --snr.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta_star: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_miss: f64,
}

impl ModelArgs {
    fn build(&self) -> anyhow::Result<ModelSpec> {
        let kind = self.model.into();
        Ok(match &self.theta_star {
            Some(t) => {
                if let Some(p) = self.p {
                    if p != t.len() {
                        bail!(em_rates::Error::DimensionMismatch { expected: p, got: t.len() });
                    }
                }
                ModelSpec::new(kind, DVector::from_vec(t.clone()), self.sigma, self.eps_miss)?
            }
            None => {
                let Some(p) = self.p else {
                    bail!(em_rates::Error::InvalidArgument("either --p or --theta-star is required".into()));
                };
                ModelSpec::with_snr(kind, p, self.snr, self.sigma, self.eps_miss)?
            }
        })
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of samples (n ≥ 1).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RunEmArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated initial point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    theta0: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Append the iterate coordinates to the trajectory CSV.
    #[arg(long)]
    theta_columns: bool,
}

#[derive(Args, Debug)]
struct BallArgs {
    /// Contraction radius r.
    #[arg(long)]
    r: f64,
    /// Outer radius R (default: +∞).
    #[arg(long = "R")]
    r_outer: Option<f64>,
}

impl BallArgs {
    fn build(&self, model: &ModelSpec) -> anyhow::Result<BallSpec> {
        Ok(BallSpec::new(self.r, self.r_outer.unwrap_or(f64::INFINITY), model.theta_star())?)
    }
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    ball: BallArgs,
    #[arg(long, default_value_t = 64)]
    directions: usize,
    #[arg(long, default_value_t = 8)]
    radii: usize,
    #[arg(long, default_value_t = 20)]
    refine_steps: usize,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    ball: BallArgs,
    /// Sample size for the ε-bounds and conditions.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Proxy size for the Monte-Carlo population estimate (skipped when absent).
    #[arg(long)]
    mc_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file with the bound constants `c, c1, c2, c3, mlr_exponent_loss`.
    #[arg(long)]
    constants_file: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    directions: usize,
    #[arg(long, default_value_t = 8)]
    radii: usize,
    #[arg(long, default_value_t = 20)]
    refine_steps: usize,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    master_seed: Option<u64>,
    config: serde_json::Value,
    files: Vec<FileEntry>,
    wall_seconds: f64,
}

/// Collects the files a subcommand emits.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.into());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let p = self.path(name);
        io::write_json(value, &p)?;
        Ok(())
    }

    fn finish(self, command: &'static str, seed: Option<u64>, config: serde_json::Value, start: Instant) -> anyhow::Result<()> {
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let bytes = std::fs::read(self.dir.join(rel))?;
            files.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            master_seed: seed,
            config,
            files,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        io::write_json(&manifest, &self.dir.join("manifest.json"))?;
        eprintln!("wrote {} files to {}", self.files.len() + 1, self.dir.display());
        Ok(())
    }
}

fn budget(directions: usize, radii: usize, refine_steps: usize) -> anyhow::Result<SearchBudget> {
    let b = SearchBudget {
        directions,
        radii,
        refine_steps,
    };
    b.validate()?;
    Ok(b)
}

fn simulate(a: &SimulateArgs, out: &mut Outputs) -> anyhow::Result<(Option<u64>, serde_json::Value)> {
    if a.n == 0 {
        bail!(em_rates::Error::InvalidArgument("--n must satisfy n ≥ 1 (got 0)".into()));
    }
    let model = a.model.build()?;
    let data = Dataset::generate(&model, a.n, a.seed)?;
    io::save_dataset(&data, &out.path("dataset.csv"))?;
    Ok((Some(a.seed), json!({ "model": model, "n": a.n, "seed": a.seed })))
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    io::load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn run_em_cmd(a: &RunEmArgs, out: &mut Outputs) -> anyhow::Result<(Option<u64>, serde_json::Value)> {
    let data = load(&a.data)?;
    let settings = EmSettings {
        max_iters: a.max_iters,
        param_tol: a.tol,
    };
    let theta0 = DVector::from_vec(a.theta0.clone());
    let traj = run_em(data.model(), &data, &theta0, &settings)?;
    let f = std::fs::File::create(out.path("trajectory.csv"))?;
    io::write_trajectory_csv(&traj, a.theta_columns, std::io::BufWriter::new(f))?;
    let fit = RateFitSettings::default();
    let to_truth = estimate_rate_from_errors(&traj.errors, &fit);
    let to_limit = estimate_rate_to_limit(&traj, fit.limit_cutoff);
    out.json(
        "em_summary.json",
        &json!({
            "iterations": traj.len() - 1,
            "stopped_reason": traj.stopped_reason,
            "final_error": traj.final_error(),
            "final_theta": traj.last().as_slice(),
            "rate_to_truth": to_truth.as_ref().ok(),
            "rate_to_truth_error": to_truth.as_ref().err().map(|e| e.to_string()),
            "rate_to_limit": to_limit.as_ref().ok(),
            "rate_to_limit_error": to_limit.as_ref().err().map(|e| e.to_string()),
            "min_loglik_increment": traj.min_loglik_increment(),
        }),
    )?;
    Ok((
        Some(data.seed()),
        json!({ "data": a.data, "theta0": a.theta0, "em": settings, "theta_columns": a.theta_columns }),
    ))
}

fn rates_cmd(a: &RatesArgs, out: &mut Outputs) -> anyhow::Result<(Option<u64>, serde_json::Value)> {
    let data = load(&a.data)?;
    let ball = a.ball.build(data.model())?;
    let b = budget(a.directions, a.radii, a.refine_steps)?;
    let rates = compute_empirical_rates(data.model(), &data, &ball, &b, &KappaCeiling::none())?;
    out.json("rates.json", &rates)?;
    Ok((Some(data.seed()), json!({ "data": a.data, "ball": ball, "budget": b })))
}

fn oracle_cmd(a: &OracleArgs, out: &mut Outputs) -> anyhow::Result<(Option<u64>, serde_json::Value)> {
    let model = a.model.build()?;
    let ball = a.ball.build(&model)?;
    let constants: BoundConstants = match &a.constants_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| em_rates::Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => BoundConstants::default(),
    };
    constants.validate()?;
    let b = budget(a.directions, a.radii, a.refine_steps)?;
    let closed = closed_form_bounds(&model, &ball, &constants);
    let population = a
        .mc_n
        .map(|n_mc| mc_population_grv_bound(&model, &ball, n_mc, &b, a.seed))
        .transpose()?;
    let mut report = json!({
        "constants_label": BoundConstants::LABEL,
        "closed_form": closed.as_ref().ok(),
        "closed_form_error": closed.as_ref().err().map(|e| e.to_string()),
        "population": population,
    });
    if let Some(n) = a.n {
        let eps = epsilon_bounds(&model, a.delta, &ball, n, &constants)?;
        let per_source = |params: &em_rates::oracle::ContractionParams| {
            json!({
                "finite_sample": finite_sample_params(params, &eps),
                "conditions": check_sample_size_conditions(params, &eps, &ball),
            })
        };
        report["epsilon_bounds"] = json!(eps);
        report["closed_form_finite_sample"] = closed.as_ref().ok().map(per_source).into();
        report["population_finite_sample"] = population.as_ref().map(|p| per_source(&p.params)).into();
    }
    out.json("oracle.json", &report)?;
    Ok((
        Some(a.seed),
        json!({ "model": model, "ball": ball, "n": a.n, "delta": a.delta, "mc_n": a.mc_n, "constants": constants, "budget": b }),
    ))
}

fn experiment_cmd(a: &ExperimentArgs, out: &mut Outputs) -> anyhow::Result<(Option<u64>, serde_json::Value)> {
    let cfg = io::load_experiment_config(&a.config).with_context(|| format!("loading config {}", a.config.display()))?;
    let result = run_experiment(&cfg)?;
    let created = io::write_experiment_outputs(&result, &out.dir)?;
    out.files.extend(created);
    std::fs::write(out.path("config.toml"), cfg.to_toml()?)?;
    Ok((Some(cfg.master_seed), serde_json::to_value(&cfg)?))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(em_rates::Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let start = Instant::now();
    let mut out = Outputs::new(&cli.out)?;
    let (name, (seed, config)) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(a, &mut out)?),
        Command::RunEm(a) => ("run-em", run_em_cmd(a, &mut out)?),
        Command::Rates(a) => ("rates", rates_cmd(a, &mut out)?),
        Command::Oracle(a) => ("oracle", oracle_cmd(a, &mut out)?),
        Command::Experiment(a) => ("experiment", experiment_cmd(a, &mut out)?),
    };
    out.finish(name, seed, config, start)
}

/// 3 for numerical failures, 2 for everything else (bad input, missing files).
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<em_rates::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

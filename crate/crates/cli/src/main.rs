//! `stochmor` command-line driver: build benchmark models, reduce them, evaluate
//! error bounds and compare trajectories by Monte Carlo simulation.

mod config;
mod error;
mod output;
mod pipeline;
mod sweep;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};
use stochmor::io::save_model;

use config::{ExperimentConfig, InputArgs, ModelArgs, ModelSource, ReduceArgs, SimArgs};
use error::{CliError, CliResult};
use pipeline::{Reduction, SimSettings};

#[derive(Debug, Parser)]
#[command(name = "stochmor", version, about = "Optimal model order reduction for linear stochastic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a model directory (Matrix Market files plus model.json).
    Build {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a model and write the reduced model and optimality residuals.
    Reduce {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        reduce: ReduceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted L2 distance (or E1/E2/E3) between a model and a reduced model.
    Distance {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory written by `reduce`.
        #[arg(long)]
        reduced: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Output error bound for a reduced model.
    Bounds {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        reduced: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the worst-case mean output error.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        reduced: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce, evaluate and simulate for a list of orders.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        reduce: ReduceArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated orders; items may be ranges `A..B` or `A..B:STEP` (inclusive).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        r_list: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build, reduce, check optimality, bound and simulate in one go.
    Run {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        reduce: ReduceArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| execute(cli.command));
    match result {
        Ok(value) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&value).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr().lock(), "{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("STOCHMOR_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("STOCHMOR_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

fn execute(command: Command) -> CliResult<Value> {
    match command {
        Command::Build { model, out } => build(&model, &out),
        Command::Reduce { model, reduce, out } => reduce_cmd(&model, &reduce, &out),
        Command::Distance { model, reduced, out } => distance(&model, &reduced, out.as_deref()),
        Command::Bounds { model, reduced, input, out } => bounds(&model, &reduced, &input, out.as_deref()),
        Command::Simulate { model, reduced, sim, seed, out } => simulate(&model, &reduced, &sim, seed, &out),
        Command::Sweep { model, reduce, sim, r_list, out } => sweep_cmd(&model, &reduce, &sim, &r_list, &out),
        Command::Run { model, reduce, sim, out } => run(&model, &reduce, &sim, &out),
    }
}

fn build(args: &ModelArgs, out: &Path) -> CliResult<Value> {
    let loaded = config::load_model(args)?;
    let manifest = save_model(&loaded.model, out, loaded.metadata)?;
    Ok(json!({
        "manifest": manifest,
        "kind": config::kind_name(loaded.model.kind),
        "n": loaded.model.state_dim(),
        "m1": loaded.model.input_dim(),
        "m2": loaded.model.noise_dim(),
        "p": loaded.model.output_dim(),
    }))
}

fn reduce_cmd(args: &ModelArgs, reduce: &ReduceArgs, out: &Path) -> CliResult<Value> {
    let loaded = config::load_model(args)?;
    let algorithm = config::resolve_algorithm(reduce.algorithm, &loaded.model)?;
    let orders = config::resolve_orders(reduce, algorithm)?;
    let opts = pipeline::irka_options(reduce.tol, reduce.max_iter, reduce.seed)?;
    let out = config::out_dir(out)?;
    let reduction = pipeline::reduce(&loaded.model, algorithm, orders, &opts)?;
    reduction.save(&out.join("reduced"))?;
    let residuals = pipeline::residuals(&loaded.model, &reduction)?;
    output::write_json(&out.join("residuals.json"), &residuals)?;
    Ok(json!({ "algorithm": algorithm, "orders": orders, "residuals": residuals }))
}

fn distance(args: &ModelArgs, reduced: &Path, out: Option<&Path>) -> CliResult<Value> {
    let loaded = config::load_model(args)?;
    let reduction = Reduction::load(reduced)?;
    let reports: Map<String, Value> = pipeline::distance_reports(&loaded.model, &reduction)?
        .into_iter()
        .map(|(k, r)| Ok((k.to_string(), serde_json::to_value(r)?)))
        .collect::<CliResult<_>>()?;
    let value = Value::Object(reports);
    if let Some(out) = out {
        output::write_json(&config::out_dir(out)?.join("distance.json"), &value)?;
    }
    Ok(value)
}

fn bounds(args: &ModelArgs, reduced: &Path, input: &InputArgs, out: Option<&Path>) -> CliResult<Value> {
    let loaded = config::load_model(args)?;
    let (signal, horizon) = config::resolve_input(input, loaded.preset)?;
    let reduction = Reduction::load(reduced)?;
    let evaluation = pipeline::evaluate(&loaded.model, &reduction, &signal, horizon)?;
    if let Some(out) = out {
        output::write_bounds(&config::out_dir(out)?.join("bounds.csv"), &evaluation)?;
    }
    Ok(serde_json::to_value(evaluation)?)
}

fn sim_settings(sim: &SimArgs, loaded: &config::LoadedModel, seed: u64) -> CliResult<SimSettings> {
    config::check_sim(sim)?;
    let (input, horizon) = config::resolve_input(&sim.input, loaded.preset)?;
    let scheme = config::resolve_scheme(sim.scheme, &loaded.model, sim.dt)?;
    Ok(SimSettings { dt: sim.dt, paths: sim.paths, horizon, input, scheme, seed })
}

fn simulate(args: &ModelArgs, reduced: &Path, sim: &SimArgs, seed: u64, out: &Path) -> CliResult<Value> {
    let start = Instant::now();
    let loaded = config::load_model(args)?;
    let settings = sim_settings(sim, &loaded, seed)?;
    let reduction = Reduction::load(reduced)?;
    let out = config::out_dir(out)?;
    let (result, summary) = pipeline::simulate(&loaded.model, reduction.target(), &settings)?;
    output::write_mean_error_curve(&out.join("mean_error_curve.csv"), &result)?;
    output::write_sample_trajectory(&out.join("sample_trajectory.csv"), &result)?;
    let value = json!({
        "simulation": summary,
        "horizon": settings.horizon,
        "input": settings.input,
        "scheme": settings.scheme,
        "runtime_seconds": start.elapsed().as_secs_f64(),
    });
    output::write_json(&out.join("simulation.json"), &value)?;
    Ok(value)
}

/// Expands `2,4`, `1..16` and `2..18:2` into a list of orders.
fn parse_r_list(items: &[String]) -> CliResult<Vec<usize>> {
    let bad = |s: &str| CliError::Usage(format!("invalid order '{s}' in --r-list"));
    let mut out = Vec::new();
    for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if let Some((lo, rest)) = item.split_once("..") {
            let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
            let lo: usize = lo.parse().map_err(|_| bad(item))?;
            let hi: usize = hi.parse().map_err(|_| bad(item))?;
            let step: usize = step.parse().ok().filter(|&s| s > 0).ok_or_else(|| bad(item))?;
            out.extend((lo..=hi).step_by(step));
        } else {
            out.push(item.parse().map_err(|_| bad(item))?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("--r-list is empty".into()));
    }
    if out.contains(&0) {
        return Err(CliError::Usage("orders in --r-list must be positive".into()));
    }
    Ok(out)
}

fn sweep_cmd(args: &ModelArgs, reduce: &ReduceArgs, sim: &SimArgs, r_list: &[String], out: &Path) -> CliResult<Value> {
    let r_list = parse_r_list(r_list)?;
    if reduce.r.is_some() || reduce.r1.is_some() {
        return Err(CliError::Usage("sweep takes its orders from --r-list; --r2 may fix the noise order of two_step".into()));
    }
    let loaded = config::load_model(args)?;
    let algorithm = config::resolve_algorithm(reduce.algorithm, &loaded.model)?;
    if reduce.r2.is_some() && algorithm != config::Algorithm::TwoStep {
        return Err(CliError::Usage("--r2 only applies to two_step".into()));
    }
    let opts = pipeline::irka_options(reduce.tol, reduce.max_iter, reduce.seed)?;
    let settings = if sim.paths == 0 { None } else { Some(sim_settings(sim, &loaded, reduce.seed)?) };
    let out = config::out_dir(out)?;
    let rows = sweep::sweep(&sweep::SweepSpec { model: &loaded.model, algorithm, r_list: &r_list, r2: reduce.r2, opts, sim: settings })?;
    output::write_sweep(&out.join("sweep.csv"), &rows)?;
    output::write_sweep_runtime(&out.join("sweep_runtime.csv"), &rows)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    Ok(json!({ "algorithm": algorithm, "rows": rows.len(), "not_ok": failed, "table": out.join("sweep.csv") }))
}

fn run(args: &ModelArgs, reduce: &ReduceArgs, sim: &SimArgs, out: &Path) -> CliResult<Value> {
    let start = Instant::now();
    let loaded = config::load_model(args)?;
    let algorithm = config::resolve_algorithm(reduce.algorithm, &loaded.model)?;
    let orders = config::resolve_orders(reduce, algorithm)?;
    let opts = pipeline::irka_options(reduce.tol, reduce.max_iter, reduce.seed)?;
    let settings = sim_settings(sim, &loaded, reduce.seed)?;
    let config = ExperimentConfig {
        source: ModelSource::from_args(args),
        algorithm,
        orders: Some(orders),
        seed: reduce.seed,
        tol: reduce.tol,
        max_iter: reduce.max_iter,
        dt: settings.dt,
        paths: settings.paths,
        horizon: settings.horizon,
        input: settings.input,
        scheme: settings.scheme,
        out: out.to_path_buf(),
    };
    let out = config::out_dir(out)?;

    let reduction = pipeline::reduce(&loaded.model, algorithm, orders, &opts)?;
    reduction.save(&out.join("reduced"))?;
    let residuals = pipeline::residuals(&loaded.model, &reduction)?;
    output::write_json(&out.join("residuals.json"), &residuals)?;
    let evaluation = pipeline::evaluate(&loaded.model, &reduction, &settings.input, settings.horizon)?;
    output::write_bounds(&out.join("bounds.csv"), &evaluation)?;
    let (result, simulation) = pipeline::simulate(&loaded.model, reduction.target(), &settings)?;
    output::write_mean_error_curve(&out.join("mean_error_curve.csv"), &result)?;
    output::write_sample_trajectory(&out.join("sample_trajectory.csv"), &result)?;

    let summary = json!({
        "config": config,
        "converged": reduction.converged(),
        "iterations": reduction.iterations(),
        "residual_max": residuals.max,
        "evaluation": evaluation,
        "simulation": simulation,
        "runtime_seconds": start.elapsed().as_secs_f64(),
    });
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};
use stochmor::io::load_model_with_metadata;
use stochmor::linalg::eigenvalues;
use stochmor::metrics::InputSignal;
use stochmor::sdesim::Scheme;
use stochmor::wave::{build_wave_model, OutputKind, Preset, WaveConfig, DEFAULT_EPSILON, DEFAULT_N};
use stochmor::{NoiseKind, StateSpaceModel};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    BilinearIrka,
    TwoStep,
    OneStep,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BilinearIrka => "bilinear_irka",
            Algorithm::TwoStep => "two_step",
            Algorithm::OneStep => "one_step",
        }
    }

    fn required_kind(self) -> NoiseKind {
        match self {
            Algorithm::BilinearIrka => NoiseKind::Multiplicative,
            Algorithm::TwoStep | Algorithm::OneStep => NoiseKind::Additive,
        }
    }

    fn default_for(kind: NoiseKind) -> Option<Self> {
        match kind {
            NoiseKind::Multiplicative => Some(Algorithm::BilinearIrka),
            NoiseKind::Additive => Some(Algorithm::TwoStep),
            NoiseKind::Deterministic => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
#[value(rename_all = "snake_case")]
pub enum SchemeChoice {
    /// Explicit unless some eigenvalue of A amplifies by more than 1 + dt per step.
    #[default]
    Auto,
    Explicit,
    DriftImplicit,
}

#[derive(Debug, Clone, Args)]
#[group(skip)]
pub struct ModelArgs {
    /// Built-in wave benchmark (`mult` or `add`).
    #[arg(long, value_parser = parse_preset, required_unless_present = "model", conflicts_with = "model")]
    pub preset: Option<Preset>,
    /// Model manifest (`model.json`) or a directory containing one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// State dimension of the preset.
    #[arg(long = "n", default_value_t = DEFAULT_N)]
    pub n: usize,
    #[arg(long, value_parser = parse_output, default_value = "position")]
    pub output: OutputKind,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReduceArgs {
    /// Defaults to bilinear_irka for multiplicative and two_step for additive models.
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Order of the input subsystem (two_step).
    #[arg(long)]
    pub r1: Option<usize>,
    /// Order of the noise subsystem (two_step).
    #[arg(long)]
    pub r2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// `constant:VALUE` or `exp:RATE`; defaults to the preset input, else constant:1.
    #[arg(long, value_parser = parse_input)]
    pub input: Option<InputSignal>,
    /// Final time T.
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Number of Monte Carlo paths M.
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = SchemeChoice::Auto)]
    pub scheme: SchemeChoice,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).map_err(|e| e.to_string())
}

fn parse_output(s: &str) -> Result<OutputKind, String> {
    match s {
        "position" => Ok(OutputKind::Position),
        "velocity" => Ok(OutputKind::Velocity),
        _ => Err(format!("unknown output '{s}' (expected 'position' or 'velocity')")),
    }
}

pub fn parse_input(s: &str) -> Result<InputSignal, String> {
    let (tag, value) = s.split_once(':').ok_or_else(|| format!("input '{s}' must look like constant:VALUE or exp:RATE"))?;
    let value: f64 = value.trim().parse().map_err(|_| format!("invalid number in input '{s}'"))?;
    if !value.is_finite() {
        return Err(format!("input '{s}' is not finite"));
    }
    match tag {
        "constant" | "const" => Ok(InputSignal::Constant { value }),
        "exp" => Ok(InputSignal::Exponential { rate: value }),
        _ => Err(format!("unknown input type '{tag}'")),
    }
}

/// A loaded model together with where it came from.
pub struct LoadedModel {
    pub model: StateSpaceModel,
    pub metadata: Map<String, Value>,
    pub preset: Option<Preset>,
}

pub fn load_model(args: &ModelArgs) -> CliResult<LoadedModel> {
    if let Some(preset) = args.preset {
        let config = WaveConfig::preset(preset, args.n).with_output(args.output).with_epsilon(args.epsilon);
        let model = build_wave_model(&config)?;
        let mut metadata = Map::new();
        metadata.insert("preset".into(), preset.name().into());
        metadata.insert("n".into(), args.n.into());
        metadata.insert("output".into(), serde_json::to_value(args.output)?);
        metadata.insert("epsilon".into(), args.epsilon.into());
        return Ok(LoadedModel { model, metadata, preset: Some(preset) });
    }
    let path = args.model.as_deref().expect("clap enforces a model source");
    let (model, metadata) = load_model_with_metadata(path)?;
    let preset = metadata.get("preset").and_then(Value::as_str).and_then(|s| Preset::parse(s).ok());
    Ok(LoadedModel { model, metadata, preset })
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSource {
    Preset { name: &'static str, n: usize, output: OutputKind, epsilon: f64 },
    Manifest { path: PathBuf },
}

impl ModelSource {
    pub fn from_args(args: &ModelArgs) -> Self {
        match (args.preset, &args.model) {
            (Some(p), _) => ModelSource::Preset { name: p.name(), n: args.n, output: args.output, epsilon: args.epsilon },
            (None, Some(path)) => ModelSource::Manifest { path: path.clone() },
            (None, None) => unreachable!("clap enforces a model source"),
        }
    }
}

/// Reduction orders; `r2` is set only for two_step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Orders {
    pub r1: usize,
    pub r2: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub source: ModelSource,
    pub algorithm: Algorithm,
    pub orders: Option<Orders>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub dt: f64,
    pub paths: usize,
    pub horizon: f64,
    pub input: InputSignal,
    pub scheme: Scheme,
    pub out: PathBuf,
}

/// Picks the algorithm and checks it against the model kind.
pub fn resolve_algorithm(requested: Option<Algorithm>, model: &StateSpaceModel) -> CliResult<Algorithm> {
    let algorithm = match requested {
        Some(a) => a,
        None => Algorithm::default_for(model.kind)
            .ok_or_else(|| CliError::Incompatible(format!("no reduction algorithm applies to a {:?} model", model.kind)))?,
    };
    if algorithm.required_kind() != model.kind {
        return Err(CliError::Incompatible(format!(
            "algorithm {} requires a {} model, got {}",
            algorithm.name(),
            kind_name(algorithm.required_kind()),
            kind_name(model.kind)
        )));
    }
    Ok(algorithm)
}

pub fn kind_name(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::Deterministic => "deterministic",
        NoiseKind::Additive => "additive",
        NoiseKind::Multiplicative => "multiplicative",
    }
}

pub fn resolve_orders(args: &ReduceArgs, algorithm: Algorithm) -> CliResult<Orders> {
    let missing = |flag: &str| CliError::Usage(format!("{} needs {flag}", algorithm.name()));
    match algorithm {
        Algorithm::TwoStep => {
            let r1 = args.r1.or(args.r).ok_or_else(|| missing("--r1 or --r"))?;
            let r2 = args.r2.or(args.r).ok_or_else(|| missing("--r2 or --r"))?;
            Ok(Orders { r1, r2: Some(r2) })
        }
        _ => {
            if args.r1.is_some() || args.r2.is_some() {
                return Err(CliError::Usage(format!("--r1/--r2 only apply to two_step; use --r with {}", algorithm.name())));
            }
            Ok(Orders { r1: args.r.ok_or_else(|| missing("--r"))?, r2: None })
        }
    }
}

pub fn resolve_input(args: &InputArgs, preset: Option<Preset>) -> CliResult<(InputSignal, f64)> {
    if !(args.horizon > 0.0 && args.horizon.is_finite()) {
        return Err(CliError::Usage(format!("--horizon must be positive, got {}", args.horizon)));
    }
    let input = args.input.or(preset.map(Preset::input)).unwrap_or(InputSignal::Constant { value: 1.0 });
    Ok((input, args.horizon))
}

pub fn resolve_scheme(choice: SchemeChoice, model: &StateSpaceModel, dt: f64) -> CliResult<Scheme> {
    Ok(match choice {
        SchemeChoice::Explicit => Scheme::Explicit,
        SchemeChoice::DriftImplicit => Scheme::DriftImplicit,
        SchemeChoice::Auto => {
            let amplification = eigenvalues(&model.a)?.iter().map(|l| (1.0 + dt * l).norm()).fold(0.0, f64::max);
            if amplification <= 1.0 + dt {
                Scheme::Explicit
            } else {
                Scheme::DriftImplicit
            }
        }
    })
}

pub fn check_sim(args: &SimArgs) -> CliResult<()> {
    if !(args.dt > 0.0 && args.dt.is_finite()) {
        return Err(CliError::Usage(format!("--dt must be positive, got {}", args.dt)));
    }
    Ok(())
}

pub fn out_dir(out: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

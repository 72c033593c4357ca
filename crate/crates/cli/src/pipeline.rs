use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use stochmor::io::{load_model, load_reduction, save_reduction, save_two_step, ReductionRecord};
use stochmor::irka::{
    one_step_weight_gram, optimality_residuals_parts, reduce_bilinear_irka, reduce_one_step, reduce_two_step,
    IrkaOptions, OptimalityResiduals, Parts, ReductionResult, TwoStepReduction,
};
use stochmor::linalg::hcat;
use stochmor::matrixeq::SolveOptions;
use stochmor::metrics::{output_error_bound, AdditiveEvaluator, BoundTerms, DistanceEvaluator, DistanceReport, InputSignal};
use stochmor::sdesim::{sample_noise_paths, simulate_pair_with, Scheme, SimTarget, SimulationResult, SimulationSummary, TimeGrid};
use stochmor::{Mat, NoiseKind, StateSpaceModel, C64};

use crate::config::{Algorithm, Orders};
use crate::error::{CliError, CliResult};

pub enum Reduction {
    Single(ReductionResult),
    TwoStep(TwoStepReduction),
}

impl Reduction {
    pub fn converged(&self) -> bool {
        match self {
            Reduction::Single(r) => r.converged,
            Reduction::TwoStep(t) => t.part1.converged && t.part2.converged,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            Reduction::Single(r) => r.iterations,
            Reduction::TwoStep(t) => t.part1.iterations.max(t.part2.iterations),
        }
    }

    pub fn target(&self) -> SimTarget<'_> {
        match self {
            Reduction::Single(r) => SimTarget::Model(&r.reduced),
            Reduction::TwoStep(t) => SimTarget::TwoStep(t),
        }
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        match self {
            Reduction::Single(r) => save_reduction(r, dir)?,
            Reduction::TwoStep(t) => save_two_step(t, dir)?,
        }
        Ok(())
    }

    /// Reads a directory written by [`Reduction::save`]. A bare model directory
    /// without bases is accepted as a single reduced model.
    pub fn load(dir: &Path) -> CliResult<Self> {
        if dir.join("part1").is_dir() {
            return Ok(Reduction::TwoStep(TwoStepReduction { part1: load_result(&dir.join("part1"))?, part2: load_result(&dir.join("part2"))? }));
        }
        Ok(Reduction::Single(load_result(dir)?))
    }
}

fn load_result(dir: &Path) -> CliResult<ReductionResult> {
    if !dir.join("V.mtx").exists() {
        let reduced = load_model(dir)?;
        return Ok(ReductionResult { reduced, v: Mat::zeros(0, 0), wb: Mat::zeros(0, 0), history: Vec::new(), converged: true, iterations: 0 });
    }
    let (reduced, v, wb, record) = load_reduction(dir)?;
    let ReductionRecord { converged, iterations, history } = record;
    let history = history.into_iter().map(|h| h.into_iter().map(|[re, im]| C64::new(re, im)).collect()).collect();
    Ok(ReductionResult { reduced, v, wb, history, converged, iterations })
}

pub fn irka_options(tol: f64, max_iter: usize, seed: u64) -> CliResult<IrkaOptions> {
    if !(tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
    }
    Ok(IrkaOptions { tol, max_iter, seed, ..IrkaOptions::default() })
}

pub fn reduce(model: &StateSpaceModel, algorithm: Algorithm, orders: Orders, opts: &IrkaOptions) -> CliResult<Reduction> {
    Ok(match algorithm {
        Algorithm::BilinearIrka => {
            let w = stochmor::WeightMatrix::identity(model.input_dim());
            Reduction::Single(reduce_bilinear_irka(model, orders.r1, &w, opts)?)
        }
        Algorithm::OneStep => Reduction::Single(reduce_one_step(model, orders.r1, opts)?),
        Algorithm::TwoStep => Reduction::TwoStep(reduce_two_step(model, orders.r1, orders.r2.unwrap_or(orders.r1), opts)?),
    })
}

fn solve_options() -> SolveOptions {
    IrkaOptions::default().solve
}

fn linear_parts<'a>(a: &'a Mat, b: &'a Mat, c: &'a Mat, empty: &'a Mat) -> Parts<'a> {
    Parts { a, b, c, n: &[], k: empty }
}

#[derive(Debug, Serialize)]
pub struct ResidualRecord {
    pub converged: bool,
    pub iterations: usize,
    pub max: f64,
    /// One entry for single reductions, `part1`/`part2` for two-step.
    pub residuals: Value,
}

pub fn residuals(model: &StateSpaceModel, reduction: &Reduction) -> CliResult<ResidualRecord> {
    let opts = solve_options();
    let empty = Mat::zeros(0, 0);
    let m1 = model.input_dim();
    let (values, max) = match reduction {
        Reduction::Single(r) if model.kind == NoiseKind::Additive => {
            let red = &r.reduced;
            let b = hcat(&model.b1, model.b2.as_ref().expect("validated additive model"));
            let bh = hcat(&red.b1, red.b2.as_ref().ok_or_else(|| CliError::Incompatible("reduced model has no B2".into()))?);
            let res = optimality_residuals_parts(
                &linear_parts(&model.a, &b, &model.c, &empty),
                &linear_parts(&red.a, &bh, &red.c, &empty),
                &one_step_weight_gram(m1, &model.k),
                &opts,
            )?;
            let max = res.max();
            (serde_json::to_value(res)?, max)
        }
        Reduction::Single(r) => {
            let k = model.coupling_covariance();
            let red = &r.reduced;
            let res = optimality_residuals_parts(
                &Parts { a: &model.a, b: &model.b1, c: &model.c, n: model.noise_matrices(), k: &k },
                &Parts { a: &red.a, b: &red.b1, c: &red.c, n: red.noise_matrices(), k: &k },
                &Mat::identity(m1, m1),
                &opts,
            )?;
            let max = res.max();
            (serde_json::to_value(res)?, max)
        }
        Reduction::TwoStep(t) => {
            let b2 = model.b2.as_ref().ok_or_else(|| CliError::Incompatible("two-step residuals need an additive model".into()))?;
            let (p1, p2) = (&t.part1.reduced, &t.part2.reduced);
            let p2b = p2.b2.as_ref().ok_or_else(|| CliError::Incompatible("noise subsystem has no B2".into()))?;
            let res1: OptimalityResiduals = optimality_residuals_parts(
                &linear_parts(&model.a, &model.b1, &model.c, &empty),
                &linear_parts(&p1.a, &p1.b1, &p1.c, &empty),
                &Mat::identity(m1, m1),
                &opts,
            )?;
            let res2 = optimality_residuals_parts(
                &linear_parts(&model.a, b2, &model.c, &empty),
                &linear_parts(&p2.a, p2b, &p2.c, &empty),
                &model.k,
                &opts,
            )?;
            let max = res1.max().max(res2.max());
            (json!({ "part1": res1, "part2": res2 }), max)
        }
    };
    Ok(ResidualRecord { converged: reduction.converged(), iterations: reduction.iterations(), max, residuals: values })
}

/// Error quantities and the output bound for one reduction.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub mode: &'static str,
    pub distance: Option<f64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
    pub u_norm: f64,
    pub bound: f64,
}

/// Full reports behind an [`Evaluation`], keyed by quantity.
pub fn distance_reports(model: &StateSpaceModel, reduction: &Reduction) -> CliResult<Vec<(&'static str, DistanceReport)>> {
    let opts = solve_options();
    match (model.kind, reduction) {
        (NoiseKind::Additive, Reduction::Single(r)) => {
            let eval = AdditiveEvaluator::new(model, &opts)?;
            let m = &r.reduced;
            let b2 = m.b2.as_ref().ok_or_else(|| CliError::Incompatible("one-step reduction without B2".into()))?;
            Ok(vec![
                ("e1", eval.e1(&m.a, &m.b1, &m.c)?),
                ("e2", eval.e2(&m.a, b2, &m.c)?),
                ("e3", eval.e3(&m.a, &m.b1, b2, &m.c)?),
            ])
        }
        (NoiseKind::Additive, Reduction::TwoStep(t)) => {
            let eval = AdditiveEvaluator::new(model, &opts)?;
            let (p1, p2) = (&t.part1.reduced, &t.part2.reduced);
            let b2 = p2.b2.as_ref().ok_or_else(|| CliError::Incompatible("noise subsystem without B2".into()))?;
            Ok(vec![("e1", eval.e1(&p1.a, &p1.b1, &p1.c)?), ("e2", eval.e2(&p2.a, b2, &p2.c)?)])
        }
        (_, Reduction::Single(r)) => {
            let k = model.coupling_covariance();
            let full = Parts { a: &model.a, b: &model.b1, c: &model.c, n: model.noise_matrices(), k: &k };
            let m1 = model.input_dim();
            let eval = DistanceEvaluator::new(&full, &Mat::identity(m1, m1), &opts)?;
            let red = &r.reduced;
            if red.noise_matrices().len() != model.noise_matrices().len() {
                return Err(CliError::Incompatible("full and reduced models have different numbers of noise matrices".into()));
            }
            Ok(vec![("distance", eval.distance(&Parts { a: &red.a, b: &red.b1, c: &red.c, n: red.noise_matrices(), k: &k })?)])
        }
        (_, Reduction::TwoStep(_)) => Err(CliError::Incompatible("a two-step reduction needs an additive model".into())),
    }
}

pub fn evaluate(model: &StateSpaceModel, reduction: &Reduction, input: &InputSignal, horizon: f64) -> CliResult<Evaluation> {
    let u_norm = input.l2_norm(horizon);
    let reports = distance_reports(model, reduction)?;
    let get = |key: &str| reports.iter().find(|(k, _)| *k == key).map(|(_, r)| r.distance);
    let (distance, e1, e2, e3) = (get("distance"), get("e1"), get("e2"), get("e3"));
    let terms = match (distance, e1, e2, e3) {
        (Some(distance), ..) => BoundTerms::Multiplicative { distance },
        (_, _, _, Some(e3)) => BoundTerms::AdditiveOneStep { e3 },
        (_, Some(e1), Some(e2), None) => BoundTerms::AdditiveTwoStep { e1, e2 },
        _ => unreachable!("distance_reports returns a complete set"),
    };
    let mode = match terms {
        BoundTerms::Multiplicative { .. } => "multiplicative",
        BoundTerms::AdditiveTwoStep { .. } => "additive_two_step",
        BoundTerms::AdditiveOneStep { .. } => "additive_one_step",
    };
    Ok(Evaluation { mode, distance, e1, e2, e3, u_norm, bound: output_error_bound(terms, u_norm)? })
}

#[derive(Debug, Clone, Copy)]
pub struct SimSettings {
    pub dt: f64,
    pub paths: usize,
    pub horizon: f64,
    pub input: InputSignal,
    pub scheme: Scheme,
    pub seed: u64,
}

pub fn simulate(model: &StateSpaceModel, target: SimTarget, s: &SimSettings) -> CliResult<(SimulationResult, SimulationSummary)> {
    if s.paths == 0 {
        return Err(CliError::Usage("--paths must be positive".into()));
    }
    let grid = TimeGrid::with_dt(s.horizon, s.dt)?;
    let noise = sample_noise_paths(&model.k, grid, s.paths, s.seed)?;
    let result = simulate_pair_with(model, target, &s.input, &noise, s.scheme)?;
    let summary = result.summary(&noise);
    Ok((result, summary))
}

use std::time::Instant;

use rayon::prelude::*;
use stochmor::irka::{reduce_linear_irka, IrkaOptions, Parts, ReductionResult, TwoStepReduction};
use stochmor::metrics::{sqrtm_psd, AdditiveEvaluator, DistanceEvaluator};
use stochmor::{Mat, StateSpaceModel, WeightMatrix};

use crate::config::Algorithm;
use crate::error::CliResult;
use crate::pipeline::{reduce, SimSettings, Reduction};

#[derive(Debug, Clone, Default)]
pub struct SweepRow {
    pub r: usize,
    pub distance: Option<f64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
    pub sup_error: Option<f64>,
    pub std_error: Option<f64>,
    /// `ok`, `not_converged`, or `<error kind>: <message>` for the first failing stage.
    pub status: String,
    pub runtime: f64,
}

enum Evaluator {
    Distance(DistanceEvaluator),
    Additive(AdditiveEvaluator),
}

pub struct SweepSpec<'a> {
    pub model: &'a StateSpaceModel,
    pub algorithm: Algorithm,
    pub r_list: &'a [usize],
    /// Fixed noise-subsystem order for two_step; `None` uses r.
    pub r2: Option<usize>,
    pub opts: IrkaOptions,
    /// Simulation settings without the seed; `None` skips simulation.
    pub sim: Option<SimSettings>,
}

/// One row per r, in input order. Row seeds are `seed + r` for both the
/// reduction and the noise paths.
pub fn sweep(spec: &SweepSpec) -> CliResult<Vec<SweepRow>> {
    let model = spec.model;
    let solve = spec.opts.solve;
    let evaluator = match spec.algorithm {
        Algorithm::BilinearIrka => {
            let k = model.coupling_covariance();
            let full = Parts { a: &model.a, b: &model.b1, c: &model.c, n: model.noise_matrices(), k: &k };
            let m1 = model.input_dim();
            Evaluator::Distance(DistanceEvaluator::new(&full, &Mat::identity(m1, m1), &solve)?)
        }
        Algorithm::TwoStep | Algorithm::OneStep => Evaluator::Additive(AdditiveEvaluator::new(model, &solve)?),
    };
    Ok(spec.r_list.par_iter().map(|&r| row(spec, &evaluator, r)).collect())
}

fn status_of(e: &crate::error::CliError) -> String {
    format!("{}: {}", e.kind(), e)
}

fn row(spec: &SweepSpec, evaluator: &Evaluator, r: usize) -> SweepRow {
    let start = Instant::now();
    let seed = spec.opts.seed.wrapping_add(r as u64);
    let opts = IrkaOptions { seed, ..spec.opts.clone() };
    let mut out = SweepRow { r, ..SweepRow::default() };
    let result = fill(spec, evaluator, r, &opts, seed, &mut out);
    out.status = match result {
        Err(e) => status_of(&e),
        Ok(false) => "not_converged".into(),
        Ok(true) => "ok".into(),
    };
    out.runtime = start.elapsed().as_secs_f64();
    out
}

/// Fills `out` stage by stage; returns whether the reduction converged.
fn fill(spec: &SweepSpec, evaluator: &Evaluator, r: usize, opts: &IrkaOptions, seed: u64, out: &mut SweepRow) -> CliResult<bool> {
    let model = spec.model;
    let reduction = match (spec.algorithm, evaluator) {
        (Algorithm::TwoStep, Evaluator::Additive(eval)) => two_step_row(model, eval, r, spec.r2.unwrap_or(r), opts, out)?,
        (algorithm, eval) => {
            let orders = crate::config::Orders { r1: r, r2: None };
            let reduction = reduce(model, algorithm, orders, opts)?;
            let Reduction::Single(res) = &reduction else { unreachable!("single-model algorithm") };
            let red = &res.reduced;
            match eval {
                Evaluator::Distance(d) => {
                    let k = model.coupling_covariance();
                    out.distance = Some(d.distance(&Parts { a: &red.a, b: &red.b1, c: &red.c, n: red.noise_matrices(), k: &k })?.distance);
                }
                Evaluator::Additive(a) => {
                    let b = a.one_step(res, 0.0)?;
                    (out.e1, out.e2, out.e3) = (Some(b.e1), Some(b.e2), b.e3);
                }
            }
            reduction
        }
    };
    if let Some(sim) = spec.sim {
        let (_, summary) = crate::pipeline::simulate(model, reduction.target(), &SimSettings { seed, ..sim })?;
        out.sup_error = Some(summary.estimate);
        out.std_error = Some(summary.std_error);
    }
    Ok(reduction.converged())
}

/// Reduces the input and noise subsystems independently so that either
/// error is reported even when the other subsystem fails.
fn two_step_row(model: &StateSpaceModel, eval: &AdditiveEvaluator, r1: usize, r2: usize, opts: &IrkaOptions, out: &mut SweepRow) -> CliResult<Reduction> {
    let b2 = model.b2.as_ref().expect("validated additive model");
    let m1 = model.input_dim();
    let part1 = reduce_linear_irka(&model.a, &model.b1, &model.c, r1, &Mat::identity(m1, m1), opts).and_then(|(a, b, c, res)| {
        out.e1 = Some(eval.e1(&a, &b, &c)?.distance);
        Ok(res)
    });
    let k_sqrt = sqrtm_psd(&model.k)?;
    WeightMatrix::new(k_sqrt.clone())?;
    let part2 = reduce_linear_irka(&model.a, b2, &model.c, r2, &(&k_sqrt * &k_sqrt), opts).and_then(|(a, b, c, mut res)| {
        out.e2 = Some(eval.e2(&a, &b, &c)?.distance);
        res.reduced = StateSpaceModel::additive(a, Mat::zeros(r2, m1), b, c, model.k.clone())?;
        Ok(res)
    });
    let (part1, part2): (ReductionResult, ReductionResult) = (part1?, part2?);
    Ok(Reduction::TwoStep(TwoStepReduction { part1, part2 }))
}

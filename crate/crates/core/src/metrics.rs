//! Gramian-based `L²(𝒲)` distances between impulse responses, the additive
//! error bounds E1/E2/E3 and the resulting output-error bounds.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irka::{one_step_weight_gram, Parts, ReductionResult, TwoStepReduction};
use crate::linalg::{asymmetry, hcat, symmetrize, Mat, SchurForm};
use crate::matrixeq::{
    solve_generalized_lyapunov, solve_generalized_lyapunov_schur, solve_mixed_sylvester_schur, SchurOp,
    SolveMethod, SolveOptions, SolveReport,
};
use crate::model::{is_ms_stable, NoiseKind, StateSpaceModel, WeightMatrix, PSD_TOL, SYMMETRY_TOL};

/// Symmetric PSD square root; eigenvalues within tolerance below zero are clamped.
pub fn sqrtm_psd(k: &Mat) -> Result<Mat> {
    if !k.is_square() {
        return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", k.nrows(), k.ncols())));
    }
    if k.is_empty() {
        return Ok(k.clone());
    }
    if k.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let asym = asymmetry(k);
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(symmetrize(k));
    let norm = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * norm {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * Mat::from_diagonal(&roots) * q.transpose())))
}

/// Deterministic input `u(t)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputSignal {
    Constant { value: f64 },
    /// `u(t) = exp(rate·t)`
    Exponential { rate: f64 },
}

impl InputSignal {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            InputSignal::Constant { value } => value,
            InputSignal::Exponential { rate } => (rate * t).exp(),
        }
    }

    /// `‖u‖_{L²(0,T)}` in closed form.
    pub fn l2_norm(&self, horizon: f64) -> f64 {
        match *self {
            InputSignal::Constant { value } => value.abs() * horizon.sqrt(),
            InputSignal::Exponential { rate } => {
                if rate == 0.0 {
                    horizon.sqrt()
                } else {
                    ((2.0 * rate * horizon).exp_m1() / (2.0 * rate)).sqrt()
                }
            }
        }
    }
}

pub type SolveSummary = SolveReport<()>;

fn summary<T>(r: &SolveReport<T>) -> SolveSummary {
    SolveReport { x: (), residual_norm: r.residual_norm, iterations: r.iterations, method: r.method }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    pub distance: f64,
    /// `tr_full + tr_red − 2·tr_cross` before clamping at zero.
    pub distance_squared_raw: f64,
    pub tr_full: f64,
    pub tr_red: f64,
    pub tr_cross: f64,
    /// Reports for `P`, `P̂` and `P₂`, in that order.
    pub gramian_reports: Vec<SolveSummary>,
}

/// Evaluates `‖H − Ĥ‖_{L²(𝒲)}` against many reduced systems, caching the
/// Schur form of `A` and the full Gramian `P`.
#[derive(Debug, Clone)]
pub struct DistanceEvaluator {
    schur: Arc<SchurForm>,
    b: Mat,
    c: Mat,
    n: Vec<Mat>,
    k: Mat,
    wgram: Mat,
    p: Mat,
    p_report: SolveSummary,
    tr_full: f64,
    opts: SolveOptions,
}

impl DistanceEvaluator {
    pub fn new(full: &Parts, wgram: &Mat, opts: &SolveOptions) -> Result<Self> {
        let schur = Arc::new(SchurForm::new(full.a)?);
        Self::with_schur(schur, full, wgram, opts)
    }

    pub fn with_schur(schur: Arc<SchurForm>, full: &Parts, wgram: &Mat, opts: &SolveOptions) -> Result<Self> {
        check_parts(full, wgram)?;
        if full.n.is_empty() {
            let abscissa = schur.eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            if !(abscissa < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "full system is not asymptotically stable (spectral abscissa {abscissa:.3e})"
                )));
            }
        }
        let rhs = symmetrize(&(full.b * wgram * full.b.transpose()));
        let rep = solve_generalized_lyapunov_schur(&schur, full.n, full.k, &rhs, opts)?;
        let tr_full = (full.c * &rep.x * full.c.transpose()).trace();
        Ok(Self {
            schur,
            b: full.b.clone(),
            c: full.c.clone(),
            n: full.n.to_vec(),
            k: full.k.clone(),
            wgram: wgram.clone(),
            p_report: summary(&rep),
            p: rep.x,
            tr_full,
            opts: *opts,
        })
    }

    /// Evaluator for the same `A`, `C`, `N` with a precomputed Gramian.
    fn from_gramian(schur: Arc<SchurForm>, full: &Parts, wgram: &Mat, p: Mat, p_report: SolveSummary, opts: &SolveOptions) -> Self {
        let tr_full = (full.c * &p * full.c.transpose()).trace();
        Self {
            schur,
            b: full.b.clone(),
            c: full.c.clone(),
            n: full.n.to_vec(),
            k: full.k.clone(),
            wgram: wgram.clone(),
            p,
            p_report,
            tr_full,
            opts: *opts,
        }
    }

    pub fn gramian(&self) -> &Mat {
        &self.p
    }

    pub fn schur(&self) -> &Arc<SchurForm> {
        &self.schur
    }

    pub fn distance(&self, red: &Parts) -> Result<DistanceReport> {
        let r = red.a.nrows();
        if red.b.ncols() != self.b.ncols() || red.c.nrows() != self.c.nrows() || red.c.ncols() != r || red.b.nrows() != r {
            return Err(Error::Dimension("reduced system is incompatible with the full system".into()));
        }
        if red.n.len() != self.n.len() {
            return Err(Error::Dimension("full and reduced systems have different numbers of noise matrices".into()));
        }
        let reduced_model = StateSpaceModel {
            a: red.a.clone(),
            b1: red.b.clone(),
            b2: None,
            n: (!red.n.is_empty()).then(|| red.n.to_vec()),
            c: red.c.clone(),
            k: if red.n.is_empty() { Mat::zeros(0, 0) } else { self.k.clone() },
            kind: if red.n.is_empty() { NoiseKind::Deterministic } else { NoiseKind::Multiplicative },
        };
        let stab = is_ms_stable(&reduced_model)?;
        if !stab.stable {
            return Err(Error::InvalidArgument(format!(
                "reduced system is not mean-square stable (abscissa {:.3e})",
                stab.spectral_abscissa
            )));
        }
        let rschur = SchurForm::new(red.a)?;
        let p_hat = solve_generalized_lyapunov(red.a, red.n, &self.k, &symmetrize(&(red.b * &self.wgram * red.b.transpose())), &self.opts)?;
        let p2 = solve_mixed_sylvester_schur(
            SchurOp::new(&self.schur),
            SchurOp::transposed(&rschur),
            &self.n,
            red.n,
            &self.k,
            &(&self.b * &self.wgram * red.b.transpose()),
            &self.opts,
        )?;
        let tr_red = (red.c * &p_hat.x * red.c.transpose()).trace();
        let tr_cross = (&self.c * &p2.x * red.c.transpose()).trace();
        let raw = self.tr_full + tr_red - 2.0 * tr_cross;
        Ok(DistanceReport {
            distance: raw.max(0.0).sqrt(),
            distance_squared_raw: raw,
            tr_full: self.tr_full,
            tr_red,
            tr_cross,
            gramian_reports: vec![self.p_report.clone(), summary(&p_hat), summary(&p2)],
        })
    }
}

fn check_parts(p: &Parts, wgram: &Mat) -> Result<()> {
    let n = p.a.nrows();
    if !p.a.is_square() || p.b.nrows() != n || p.c.ncols() != n || p.n.iter().any(|m| m.shape() != (n, n)) {
        return Err(Error::Dimension("inconsistent system dimensions".into()));
    }
    if wgram.shape() != (p.b.ncols(), p.b.ncols()) {
        return Err(Error::Dimension(format!(
            "weight is {}x{}, expected {}x{}",
            wgram.nrows(),
            wgram.ncols(),
            p.b.ncols(),
            p.b.ncols()
        )));
    }
    if !p.n.is_empty() && p.k.shape() != (p.n.len(), p.n.len()) {
        return Err(Error::Dimension("covariance does not match the noise matrices".into()));
    }
    Ok(())
}

/// `‖H − Ĥ‖_{L²(𝒲)}` for general parts.
pub fn l2w_distance_parts(full: &Parts, red: &Parts, wgram: &Mat, opts: &SolveOptions) -> Result<DistanceReport> {
    DistanceEvaluator::new(full, wgram, opts)?.distance(red)
}

/// `‖H − Ĥ‖_{L²(𝒲)}` between the input-to-output responses (through `B1`) of two models.
pub fn l2w_distance(model: &StateSpaceModel, reduced: &StateSpaceModel, w: &WeightMatrix) -> Result<DistanceReport> {
    l2w_distance_with(model, reduced, w, &SolveOptions::default())
}

pub fn l2w_distance_with(model: &StateSpaceModel, reduced: &StateSpaceModel, w: &WeightMatrix, opts: &SolveOptions) -> Result<DistanceReport> {
    let mult = [model.kind, reduced.kind].iter().filter(|k| **k == NoiseKind::Multiplicative).count();
    if mult == 1 {
        return Err(Error::InvalidArgument("cannot compare a multiplicative model with a non-multiplicative one".into()));
    }
    if mult == 2 {
        if model.noise_dim() != reduced.noise_dim() {
            return Err(Error::Dimension("models have different numbers of noise matrices".into()));
        }
        let diff = (&model.k - &reduced.k).norm();
        if diff > 1e-12 * model.k.norm().max(1.0) {
            return Err(Error::InvalidArgument("models have different noise covariances".into()));
        }
    }
    if model.input_dim() != reduced.input_dim() || model.output_dim() != reduced.output_dim() {
        return Err(Error::Dimension("models have different input or output dimensions".into()));
    }
    let k = model.coupling_covariance();
    let full = Parts { a: &model.a, b: &model.b1, c: &model.c, n: model.noise_matrices(), k: &k };
    let red = Parts { a: &reduced.a, b: &reduced.b1, c: &reduced.c, n: reduced.noise_matrices(), k: &k };
    l2w_distance_parts(&full, &red, &w.gram(), opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdditiveBounds {
    pub e1: f64,
    pub e2: f64,
    /// Only defined for one-step reductions.
    pub e3: Option<f64>,
    pub u_norm: f64,
}

/// Caches the three full Gramians of an additive model (`P_E3 = P_E1 + P_E2`).
#[derive(Debug, Clone)]
pub struct AdditiveEvaluator {
    e1: DistanceEvaluator,
    e2: DistanceEvaluator,
    e3: DistanceEvaluator,
}

impl AdditiveEvaluator {
    pub fn new(model: &StateSpaceModel, opts: &SolveOptions) -> Result<Self> {
        if model.kind != NoiseKind::Additive {
            return Err(Error::InvalidArgument(format!("additive bounds need an additive model, got {:?}", model.kind)));
        }
        let b2 = model.b2.as_ref().ok_or_else(|| Error::InvalidArgument("additive model without B2".into()))?;
        let m1 = model.input_dim();
        let empty = Mat::zeros(0, 0);
        let schur = Arc::new(SchurForm::new(&model.a)?);
        let p1 = Parts { a: &model.a, b: &model.b1, c: &model.c, n: &[], k: &empty };
        let e1 = DistanceEvaluator::with_schur(schur.clone(), &p1, &Mat::identity(m1, m1), opts)?;
        let k_sqrt = sqrtm_psd(&model.k)?;
        let p2 = Parts { a: &model.a, b: b2, c: &model.c, n: &[], k: &empty };
        let e2 = DistanceEvaluator::with_schur(schur.clone(), &p2, &(&k_sqrt * &k_sqrt), opts)?;
        let b = hcat(&model.b1, b2);
        let p3 = Parts { a: &model.a, b: &b, c: &model.c, n: &[], k: &empty };
        let p = e1.gramian() + e2.gramian();
        let rep = SolveReport { x: (), residual_norm: e1.p_report.residual_norm.max(e2.p_report.residual_norm), iterations: 0, method: SolveMethod::Direct };
        let e3 = DistanceEvaluator::from_gramian(schur, &p3, &one_step_weight_gram(m1, &model.k), p, rep, opts);
        Ok(Self { e1, e2, e3 })
    }

    pub fn e1(&self, a: &Mat, b1: &Mat, c: &Mat) -> Result<DistanceReport> {
        let empty = Mat::zeros(0, 0);
        self.e1.distance(&Parts { a, b: b1, c, n: &[], k: &empty })
    }

    pub fn e2(&self, a: &Mat, b2: &Mat, c: &Mat) -> Result<DistanceReport> {
        let empty = Mat::zeros(0, 0);
        self.e2.distance(&Parts { a, b: b2, c, n: &[], k: &empty })
    }

    pub fn e3(&self, a: &Mat, b1: &Mat, b2: &Mat, c: &Mat) -> Result<DistanceReport> {
        let empty = Mat::zeros(0, 0);
        let b = hcat(b1, b2);
        self.e3.distance(&Parts { a, b: &b, c, n: &[], k: &empty })
    }

    pub fn two_step(&self, red: &TwoStepReduction, u_norm: f64) -> Result<AdditiveBounds> {
        let r1 = &red.part1.reduced;
        let r2 = &red.part2.reduced;
        let b2 = r2.b2.as_ref().ok_or_else(|| Error::InvalidArgument("noise subsystem without B2".into()))?;
        Ok(AdditiveBounds {
            e1: self.e1(&r1.a, &r1.b1, &r1.c)?.distance,
            e2: self.e2(&r2.a, b2, &r2.c)?.distance,
            e3: None,
            u_norm,
        })
    }

    pub fn one_step(&self, red: &ReductionResult, u_norm: f64) -> Result<AdditiveBounds> {
        let m = &red.reduced;
        let b2 = m.b2.as_ref().ok_or_else(|| Error::InvalidArgument("one-step reduction without B2".into()))?;
        Ok(AdditiveBounds {
            e1: self.e1(&m.a, &m.b1, &m.c)?.distance,
            e2: self.e2(&m.a, b2, &m.c)?.distance,
            e3: Some(self.e3(&m.a, &m.b1, b2, &m.c)?.distance),
            u_norm,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AdditiveReduction<'a> {
    TwoStep(&'a TwoStepReduction),
    OneStep(&'a ReductionResult),
}

pub fn additive_bounds(model: &StateSpaceModel, reduction: AdditiveReduction, u_norm: f64) -> Result<AdditiveBounds> {
    let eval = AdditiveEvaluator::new(model, &SolveOptions::default())?;
    match reduction {
        AdditiveReduction::TwoStep(r) => eval.two_step(r, u_norm),
        AdditiveReduction::OneStep(r) => eval.one_step(r, u_norm),
    }
}

/// Error quantities entering the output-error bound, tagged by mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundTerms {
    Multiplicative { distance: f64 },
    AdditiveTwoStep { e1: f64, e2: f64 },
    AdditiveOneStep { e3: f64 },
}

/// Upper bound on `sup_t E‖y(t) − ŷ(t)‖`.
pub fn output_error_bound(terms: BoundTerms, u_norm: f64) -> Result<f64> {
    if !(u_norm >= 0.0) {
        return Err(Error::InvalidArgument(format!("input norm must be non-negative, got {u_norm}")));
    }
    Ok(match terms {
        BoundTerms::Multiplicative { distance } => distance * u_norm,
        BoundTerms::AdditiveTwoStep { e1, e2 } => e1 * u_norm + e2,
        BoundTerms::AdditiveOneStep { e3 } => std::f64::consts::SQRT_2 * e3 * u_norm.max(1.0),
    })
}

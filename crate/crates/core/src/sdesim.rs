//! Euler–Maruyama simulation under common random numbers.
//!
//! Paths are processed in fixed blocks of [`PATH_BLOCK`] columns; each path
//! draws from its own ChaCha stream, so results do not depend on the number
//! of worker threads or on the order in which blocks complete.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::irka::TwoStepReduction;
use crate::linalg::Mat;
use crate::metrics::{sqrtm_psd, InputSignal};
use crate::model::{NoiseKind, StateSpaceModel};

pub const PATH_BLOCK: usize = 32;
pub const DIVERGENCE_LIMIT: f64 = 1e12;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_PATHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid time grid: T={horizon}, steps={steps}")));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with step closest to `dt`.
    pub fn with_dt(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Self::new(horizon, ((horizon / dt).round() as usize).max(1))
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// Correlated Wiener increments `Δw = √dt·F·z`, generated on demand.
#[derive(Debug, Clone)]
pub struct NoisePathSet {
    pub grid: TimeGrid,
    pub paths: usize,
    pub seed: u64,
    pub k: Mat,
    factor: Mat,
}

pub fn sample_noise_paths(k: &Mat, grid: TimeGrid, paths: usize, seed: u64) -> Result<NoisePathSet> {
    if paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let factor = sqrtm_psd(k)?;
    Ok(NoisePathSet { grid, paths, seed, k: k.clone(), factor })
}

impl NoisePathSet {
    pub fn noise_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn factor(&self) -> &Mat {
        &self.factor
    }

    /// Increment generator for `path`, positioned at `step`. Each path owns
    /// the ChaCha stream `path` under `seed`; step `s` consumes the `s`-th
    /// block of `m2` standard normals of that stream.
    pub fn stream(&self, path: usize, step: usize) -> IncrementStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let m = self.noise_dim();
        for _ in 0..step * m {
            let _: f64 = rng.sample(StandardNormal);
        }
        IncrementStream {
            rng,
            factor: self.factor.as_slice().to_vec(),
            scale: self.grid.dt().sqrt(),
            z: vec![0.0; m],
        }
    }

    pub fn increment(&self, path: usize, step: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.noise_dim());
        self.stream(path, step).next_into(out.as_mut_slice());
        out
    }

    /// All increments of one path as an `m2 × steps` matrix.
    pub fn path_increments(&self, path: usize) -> Mat {
        let m = self.noise_dim();
        let mut s = self.stream(path, 0);
        let mut out = Mat::zeros(m, self.grid.steps);
        for k in 0..self.grid.steps {
            s.next_into(out.column_mut(k).as_mut_slice());
        }
        out
    }

    pub fn materialize(&self) -> Vec<Mat> {
        (0..self.paths).into_par_iter().map(|p| self.path_increments(p)).collect()
    }
}

pub struct IncrementStream {
    rng: ChaCha8Rng,
    factor: Vec<f64>,
    scale: f64,
    z: Vec<f64>,
}

impl IncrementStream {
    pub fn next_into(&mut self, out: &mut [f64]) {
        let m = self.z.len();
        for z in self.z.iter_mut() {
            *z = self.rng.sample(StandardNormal);
        }
        out.fill(0.0);
        for (j, &z) in self.z.iter().enumerate() {
            for (o, f) in out.iter_mut().zip(&self.factor[j * m..(j + 1) * m]) {
                *o += f * z;
            }
        }
        for o in out.iter_mut() {
            *o *= self.scale;
        }
    }
}

/// Time-stepping scheme for the state equation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `x⁺ = x + (Ax + B1u(t_k))dt + noise(x)`
    #[default]
    Explicit,
    /// `x⁺ = x + (Ax⁺ + B1u(t_{k+1}))dt + noise(x)`; stable for stiff or
    /// lightly damped oscillatory drifts.
    DriftImplicit,
}

/// Deterministic input driving every simulation path.
pub trait InputFunction: Sync {
    fn eval_into(&self, t: f64, out: &mut DVector<f64>);
}

/// A scalar signal drives every input channel.
impl InputFunction for InputSignal {
    fn eval_into(&self, t: f64, out: &mut DVector<f64>) {
        out.fill(self.eval(t));
    }
}

impl<F: Fn(f64) -> DVector<f64> + Sync> InputFunction for F {
    fn eval_into(&self, t: f64, out: &mut DVector<f64>) {
        out.copy_from(&self(t));
    }
}

enum LinOp {
    Dense(Mat),
    Sparse { rows: usize, ptr: Vec<usize>, idx: Vec<usize>, val: Vec<f64> },
}

impl LinOp {
    fn new(m: &Mat) -> Self {
        let nnz = m.iter().filter(|x| **x != 0.0).count();
        if nnz * 10 > m.len() {
            return LinOp::Dense(m.clone());
        }
        let mut ptr = vec![0];
        let mut idx = Vec::with_capacity(nnz);
        let mut val = Vec::with_capacity(nnz);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    idx.push(j);
                    val.push(m[(i, j)]);
                }
            }
            ptr.push(idx.len());
        }
        LinOp::Sparse { rows: m.nrows(), ptr, idx, val }
    }

    /// `out = self · x`
    fn apply(&self, x: &Mat, out: &mut Mat) {
        match self {
            LinOp::Dense(m) => out.gemm(1.0, m, x, 0.0),
            LinOp::Sparse { rows, ptr, idx, val } => {
                for j in 0..x.ncols() {
                    let xc = x.column(j);
                    for i in 0..*rows {
                        let mut acc = 0.0;
                        for t in ptr[i]..ptr[i + 1] {
                            acc += val[t] * xc[idx[t]];
                        }
                        out[(i, j)] = acc;
                    }
                }
            }
        }
    }
}

struct Dynamics {
    /// `A` for the explicit scheme, `(I − dt·A)⁻¹` for the implicit one.
    prop: LinOp,
    scheme: Scheme,
    b1: Mat,
    b2: Option<Mat>,
    n: Vec<LinOp>,
    c: Mat,
}

impl Dynamics {
    fn new(m: &StateSpaceModel, scheme: Scheme, dt: f64) -> Result<Self> {
        let prop = match scheme {
            Scheme::Explicit => m.a.clone(),
            Scheme::DriftImplicit => {
                let n = m.a.nrows();
                let lhs = Mat::identity(n, n) - &m.a * dt;
                let cond = crate::linalg::cond2(&lhs);
                if !(cond < 1e14) {
                    return Err(Error::Singular { what: "I - dt*A".into(), cond });
                }
                lhs.lu().try_inverse().ok_or_else(|| Error::Singular { what: "I - dt*A".into(), cond })?
            }
        };
        Ok(Self {
            prop: LinOp::new(&prop),
            scheme,
            b1: m.b1.clone(),
            b2: if m.kind == NoiseKind::Additive { m.b2.clone() } else { None },
            n: m.noise_matrices().iter().map(LinOp::new).collect(),
            c: m.c.clone(),
        })
    }

    fn dim(&self) -> usize {
        self.b1.nrows()
    }
}

struct BlockState {
    x: Mat,
    drift: Mat,
    tmp: Mat,
    bu: DVector<f64>,
}

impl BlockState {
    fn new(n: usize, width: usize) -> Self {
        Self { x: Mat::zeros(n, width), drift: Mat::zeros(n, width), tmp: Mat::zeros(n, width), bu: DVector::zeros(n) }
    }

    /// One Euler–Maruyama step; `dw` is `m2 × width`, `u` is evaluated at
    /// the left node (explicit) or the right node (drift-implicit).
    fn step(&mut self, d: &Dynamics, u: &DVector<f64>, dt: f64, dw: &Mat) {
        self.bu.gemv(dt, &d.b1, u, 0.0);
        match d.scheme {
            Scheme::Explicit => {
                d.prop.apply(&self.x, &mut self.drift);
                self.drift *= dt;
            }
            Scheme::DriftImplicit => self.drift.copy_from(&self.x),
        }
        for mut col in self.drift.column_iter_mut() {
            col += &self.bu;
        }
        for (i, ni) in d.n.iter().enumerate() {
            ni.apply(&self.x, &mut self.tmp);
            for j in 0..self.x.ncols() {
                let w = dw[(i, j)];
                self.drift.column_mut(j).axpy(w, &self.tmp.column(j), 1.0);
            }
        }
        if let Some(b2) = &d.b2 {
            self.drift.gemm(1.0, b2, dw, 1.0);
        }
        match d.scheme {
            Scheme::Explicit => self.x += &self.drift,
            Scheme::DriftImplicit => d.prop.apply(&self.drift, &mut self.x),
        }
    }

    fn check(&self, first_path: usize, step: usize) -> Result<()> {
        for (j, col) in self.x.column_iter().enumerate() {
            let norm = col.norm();
            if !(norm <= DIVERGENCE_LIMIT) {
                return Err(Error::Divergence { path: first_path + j, step });
            }
        }
        Ok(())
    }
}

/// System whose output trajectory is simulated.
#[derive(Debug, Clone, Copy)]
pub enum SimTarget<'a> {
    Model(&'a StateSpaceModel),
    /// Sum of the outputs of both reduced subsystems.
    TwoStep(&'a TwoStepReduction),
}

impl<'a> SimTarget<'a> {
    fn parts(&self) -> Vec<&'a StateSpaceModel> {
        match *self {
            SimTarget::Model(m) => vec![m],
            SimTarget::TwoStep(t) => vec![&t.part1.reduced, &t.part2.reduced],
        }
    }
}

impl<'a> From<&'a StateSpaceModel> for SimTarget<'a> {
    fn from(m: &'a StateSpaceModel) -> Self {
        SimTarget::Model(m)
    }
}

impl<'a> From<&'a TwoStepReduction> for SimTarget<'a> {
    fn from(t: &'a TwoStepReduction) -> Self {
        SimTarget::TwoStep(t)
    }
}

/// Output trajectories, one `p × (steps+1)` matrix per path.
#[derive(Debug, Clone)]
pub struct Trajectories {
    pub t: Vec<f64>,
    pub y: Vec<Mat>,
}

/// Simulates `target` from `x0 = 0` on every path of `paths` with the explicit scheme.
pub fn simulate_outputs(target: SimTarget, u: &dyn InputFunction, paths: &NoisePathSet) -> Result<Trajectories> {
    simulate_outputs_with(target, u, paths, Scheme::Explicit)
}

pub fn simulate_outputs_with(target: SimTarget, u: &dyn InputFunction, paths: &NoisePathSet, scheme: Scheme) -> Result<Trajectories> {
    let models = target.parts();
    let p = models[0].output_dim();
    let m1 = models[0].input_dim();
    for m in &models {
        if m.output_dim() != p || m.input_dim() != m1 {
            return Err(Error::Dimension("subsystems have different input or output dimensions".into()));
        }
        let needs = match m.kind {
            NoiseKind::Deterministic => None,
            NoiseKind::Additive | NoiseKind::Multiplicative => Some(m.noise_dim()),
        };
        if let Some(m2) = needs {
            if m2 != paths.noise_dim() {
                return Err(Error::Dimension(format!(
                    "model has {m2} noise channels but the path set has {}",
                    paths.noise_dim()
                )));
            }
        }
    }
    let grid = paths.grid;
    let dt = grid.dt();
    let dyns = models.iter().map(|m| Dynamics::new(m, scheme, dt)).collect::<Result<Vec<_>>>()?;
    let shift = usize::from(scheme == Scheme::DriftImplicit);
    let inputs: Vec<DVector<f64>> = (0..=grid.steps)
        .map(|k| {
            let mut v = DVector::zeros(m1);
            u.eval_into(grid.time(k), &mut v);
            v
        })
        .collect();
    let m2 = paths.noise_dim();
    let blocks: Vec<usize> = (0..paths.paths).step_by(PATH_BLOCK).collect();
    let results: Vec<Result<Vec<Mat>>> = blocks
        .par_iter()
        .map(|&start| {
            let width = PATH_BLOCK.min(paths.paths - start);
            let mut streams: Vec<IncrementStream> = (start..start + width).map(|q| paths.stream(q, 0)).collect();
            let mut states: Vec<BlockState> = dyns.iter().map(|d| BlockState::new(d.dim(), width)).collect();
            let mut out = vec![Mat::zeros(p, grid.steps + 1); width];
            let mut dw = Mat::zeros(m2, width);
            let mut y = Mat::zeros(p, width);
            for k in 0..=grid.steps {
                y.fill(0.0);
                for (d, s) in dyns.iter().zip(&states) {
                    y.gemm(1.0, &d.c, &s.x, 1.0);
                }
                for (j, o) in out.iter_mut().enumerate() {
                    o.column_mut(k).copy_from(&y.column(j));
                }
                if k == grid.steps {
                    break;
                }
                for (j, s) in streams.iter_mut().enumerate() {
                    s.next_into(dw.column_mut(j).as_mut_slice());
                }
                for (d, s) in dyns.iter().zip(states.iter_mut()) {
                    s.step(d, &inputs[k + shift], dt, &dw);
                    s.check(start, k + 1)?;
                }
            }
            Ok(out)
        })
        .collect();
    let mut y = Vec::with_capacity(paths.paths);
    for r in results {
        y.extend(r?);
    }
    Ok(Trajectories { t: grid.nodes(), y })
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub t: Vec<f64>,
    pub y_full: Vec<Mat>,
    pub y_reduced: Vec<Mat>,
    pub mean_error_curve: Vec<f64>,
    pub sup_estimate: f64,
    pub sup_std_error: f64,
    /// Grid index where the mean error is largest.
    pub argmax: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub estimate: f64,
    pub std_error: f64,
    pub argmax_time: f64,
    pub paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
}

impl SimulationResult {
    pub fn summary(&self, paths: &NoisePathSet) -> SimulationSummary {
        SimulationSummary {
            estimate: self.sup_estimate,
            std_error: self.sup_std_error,
            argmax_time: self.t[self.argmax],
            paths: paths.paths,
            steps: paths.grid.steps,
            dt: paths.grid.dt(),
            seed: paths.seed,
        }
    }
}

/// Pathwise comparison of two trajectory sets simulated on the same noise.
pub fn compare_outputs(full: Trajectories, reduced: Trajectories) -> Result<SimulationResult> {
    if full.y.len() != reduced.y.len() || full.t.len() != reduced.t.len() {
        return Err(Error::Dimension("trajectory sets differ in paths or grid".into()));
    }
    let nodes = full.t.len();
    let errors: Vec<Vec<f64>> = full
        .y
        .iter()
        .zip(&reduced.y)
        .map(|(a, b)| (0..nodes).map(|k| (a.column(k) - b.column(k)).norm()).collect())
        .collect();
    let m = errors.len() as f64;
    let mut curve = vec![0.0; nodes];
    for e in &errors {
        for (c, v) in curve.iter_mut().zip(e) {
            *c += v;
        }
    }
    curve.iter_mut().for_each(|c| *c /= m);
    let argmax = curve
        .iter()
        .enumerate()
        .fold(0, |best, (k, v)| if *v > curve[best] { k } else { best });
    let mean = curve[argmax];
    let var = if errors.len() > 1 {
        errors.iter().map(|e| (e[argmax] - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(SimulationResult {
        t: full.t,
        y_full: full.y,
        y_reduced: reduced.y,
        sup_estimate: mean,
        sup_std_error: (var / m).sqrt(),
        mean_error_curve: curve,
        argmax,
    })
}

pub fn simulate_pair<'a>(
    model: &StateSpaceModel,
    reduced: impl Into<SimTarget<'a>>,
    u: &dyn InputFunction,
    paths: &NoisePathSet,
) -> Result<SimulationResult> {
    simulate_pair_with(model, reduced, u, paths, Scheme::Explicit)
}

pub fn simulate_pair_with<'a>(
    model: &StateSpaceModel,
    reduced: impl Into<SimTarget<'a>>,
    u: &dyn InputFunction,
    paths: &NoisePathSet,
    scheme: Scheme,
) -> Result<SimulationResult> {
    let full = simulate_outputs_with(SimTarget::Model(model), u, paths, scheme)?;
    let red = simulate_outputs_with(reduced.into(), u, paths, scheme)?;
    compare_outputs(full, red)
}

/// `(sup_estimate, sup_std_error)`
pub fn worst_case_mean_error(result: &SimulationResult) -> (f64, f64) {
    (result.sup_estimate, result.sup_std_error)
}

/// Coefficients of the matrix ODE
/// `Ẋ = AX + XÂᵀ + Σ k_ij N_i X N̂_jᵀ`, `X(0) = L·L̂ᵀ`.
#[derive(Debug, Clone, Copy)]
pub struct LemmaSystem<'a> {
    pub a: &'a Mat,
    pub ahat: &'a Mat,
    pub n: &'a [Mat],
    pub nhat: &'a [Mat],
    pub k: &'a Mat,
    pub l: &'a Mat,
    pub lhat: &'a Mat,
}

impl LemmaSystem<'_> {
    fn check(&self) -> Result<()> {
        let (n, r) = (self.a.nrows(), self.ahat.nrows());
        let ok = self.a.is_square()
            && self.ahat.is_square()
            && self.n.len() == self.nhat.len()
            && self.n.iter().all(|m| m.shape() == (n, n))
            && self.nhat.iter().all(|m| m.shape() == (r, r))
            && (self.n.is_empty() || self.k.shape() == (self.n.len(), self.n.len()))
            && self.l.nrows() == n
            && self.lhat.nrows() == r
            && self.l.ncols() == self.lhat.ncols();
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("inconsistent matrix ODE coefficients".into()))
        }
    }

    fn rhs(&self, x: &Mat) -> Mat {
        let mut out = self.a * x + x * self.ahat.transpose();
        for (i, ni) in self.n.iter().enumerate() {
            for (j, nj) in self.nhat.iter().enumerate() {
                let kij = self.k[(i, j)];
                if kij != 0.0 {
                    out += kij * (ni * x * nj.transpose());
                }
            }
        }
        out
    }
}

/// Classical RK4 trajectory of the matrix ODE on every grid node.
pub fn lemma_ode_evolve(sys: &LemmaSystem, grid: &TimeGrid) -> Result<Vec<Mat>> {
    sys.check()?;
    let h = grid.dt();
    let mut x = sys.l * sys.lhat.transpose();
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(x.clone());
    for _ in 0..grid.steps {
        let k1 = sys.rhs(&x);
        let k2 = sys.rhs(&(&x + &k1 * (h / 2.0)));
        let k3 = sys.rhs(&(&x + &k2 * (h / 2.0)));
        let k4 = sys.rhs(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(x.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub mean: Mat,
    /// Entrywise standard error of `mean`.
    pub std_error: Mat,
    pub paths: usize,
}

/// Monte Carlo estimate of `E[Φ(T,s)·L·L̂ᵀ·Φ̂ᵀ(T,s)]` with `s` the grid time
/// of `start_step`; both fundamental solutions share the increments of `paths`.
pub fn lemma_monte_carlo(sys: &LemmaSystem, paths: &NoisePathSet, start_step: usize) -> Result<MomentEstimate> {
    sys.check()?;
    if sys.n.len() != paths.noise_dim() {
        return Err(Error::Dimension("noise matrices do not match the path set".into()));
    }
    if start_step >= paths.grid.steps {
        return Err(Error::InvalidArgument("start step must precede the final grid node".into()));
    }
    let (n, r, q) = (sys.a.nrows(), sys.ahat.nrows(), sys.l.ncols());
    let m2 = paths.noise_dim();
    let dt = paths.grid.dt();
    let steps = paths.grid.steps;
    let block = 8 * PATH_BLOCK;
    let starts: Vec<usize> = (0..paths.paths).step_by(block).collect();
    let partial: Vec<Result<(Mat, Mat)>> = starts
        .par_iter()
        .map(|&start| {
            let width = block.min(paths.paths - start);
            let mut full = SmallPropagator::new(sys.a, sys.n, dt, q);
            let mut red = SmallPropagator::new(sys.ahat, sys.nhat, dt, q);
            let mut dw = vec![0.0; m2];
            let mut y = vec![0.0; n * q];
            let mut yh = vec![0.0; r * q];
            let mut sum = Mat::zeros(n, r);
            let mut sumsq = Mat::zeros(n, r);
            for path in start..start + width {
                let mut stream = paths.stream(path, start_step);
                y.copy_from_slice(sys.l.as_slice());
                yh.copy_from_slice(sys.lhat.as_slice());
                for k in start_step..steps {
                    stream.next_into(&mut dw);
                    full.step(&dw, &mut y);
                    red.step(&dw, &mut yh);
                    if k % 64 == 63 || k + 1 == steps {
                        let norm = y.iter().chain(&yh).fold(0.0_f64, |m, v| m.max(v.abs()));
                        if !(norm <= DIVERGENCE_LIMIT) {
                            return Err(Error::Divergence { path, step: k + 1 });
                        }
                    }
                }
                let prod = Mat::from_column_slice(n, q, &y) * Mat::from_column_slice(r, q, &yh).transpose();
                sumsq += prod.component_mul(&prod);
                sum += prod;
            }
            Ok((sum, sumsq))
        })
        .collect();
    let mut sum = Mat::zeros(n, r);
    let mut sumsq = Mat::zeros(n, r);
    for p in partial {
        let (s, s2) = p?;
        sum += s;
        sumsq += s2;
    }
    let m = paths.paths as f64;
    let mean = &sum / m;
    let std_error = if paths.paths > 1 {
        (sumsq - sum.component_mul(&mean)).map(|v| (v.max(0.0) / (m - 1.0) / m).sqrt())
    } else {
        Mat::zeros(n, r)
    };
    Ok(MomentEstimate { mean, std_error, paths: paths.paths })
}

/// Per-path Euler–Maruyama propagator `Y ← (I + dt·A + Σ Δw_i N_i)·Y` for
/// small dense systems.
struct SmallPropagator<'a> {
    n: usize,
    q: usize,
    base: Vec<f64>,
    noise: &'a [Mat],
    m: Vec<f64>,
    out: Vec<f64>,
}

impl<'a> SmallPropagator<'a> {
    fn new(a: &Mat, noise: &'a [Mat], dt: f64, q: usize) -> Self {
        let n = a.nrows();
        let base = (Mat::identity(n, n) + a * dt).as_slice().to_vec();
        Self { n, q, m: base.clone(), base, noise, out: vec![0.0; n * q] }
    }

    fn step(&mut self, dw: &[f64], y: &mut [f64]) {
        self.m.copy_from_slice(&self.base);
        for (ni, w) in self.noise.iter().zip(dw) {
            for (m, v) in self.m.iter_mut().zip(ni.as_slice()) {
                *m += w * v;
            }
        }
        match self.n {
            1 => apply_fixed::<1>(&self.m, y, &mut self.out, self.q),
            2 => apply_fixed::<2>(&self.m, y, &mut self.out, self.q),
            3 => apply_fixed::<3>(&self.m, y, &mut self.out, self.q),
            4 => apply_fixed::<4>(&self.m, y, &mut self.out, self.q),
            n => {
                for c in 0..self.q {
                    let col = &y[c * n..(c + 1) * n];
                    let out = &mut self.out[c * n..(c + 1) * n];
                    out.fill(0.0);
                    for (t, &v) in col.iter().enumerate() {
                        for (o, mv) in out.iter_mut().zip(&self.m[t * n..(t + 1) * n]) {
                            *o += mv * v;
                        }
                    }
                }
                y.copy_from_slice(&self.out);
            }
        }
    }
}

/// `Y ← M·Y` with a compile-time state dimension.
fn apply_fixed<const N: usize>(m: &[f64], y: &mut [f64], _out: &mut [f64], q: usize) {
    let m = &m[..N * N];
    for c in 0..q {
        let col = &mut y[c * N..(c + 1) * N];
        let mut acc = [0.0; N];
        for t in 0..N {
            let v = col[t];
            for r in 0..N {
                acc[r] += m[t * N + r] * v;
            }
        }
        col.copy_from_slice(&acc);
    }
}

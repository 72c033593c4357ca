#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stochmor::model::is_ms_stable;
use stochmor::{CMat, Mat, StateSpaceModel, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn cgaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// `S − (‖S‖₂ + margin)·I`: the symmetric part is bounded by `−margin·I`.
pub fn stable_matrix(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Mat {
    let s = gaussian(rng, n, n) / (n as f64).sqrt();
    let norm = s.clone().svd(false, false).singular_values.max();
    s - Mat::identity(n, n) * (norm + margin)
}

/// Random SPD covariance with unit-ish diagonal.
pub fn covariance(rng: &mut ChaCha8Rng, m: usize) -> Mat {
    let g = gaussian(rng, m, m);
    &g * g.transpose() / m as f64 + Mat::identity(m, m) * 0.5
}

fn spectral_norm(m: &Mat) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Noise matrices rescaled so that `Σ |k_ij| ‖N_i‖ ‖N_j‖ = budget`.
pub fn noise_matrices(rng: &mut ChaCha8Rng, n: usize, k: &Mat, budget: f64) -> Vec<Mat> {
    let ns: Vec<Mat> = (0..k.nrows()).map(|_| gaussian(rng, n, n)).collect();
    let norms: Vec<f64> = ns.iter().map(spectral_norm).collect();
    let mut total = 0.0;
    for i in 0..ns.len() {
        for j in 0..ns.len() {
            total += k[(i, j)].abs() * norms[i] * norms[j];
        }
    }
    let s = if total > 0.0 { (budget / total).sqrt() } else { 0.0 };
    ns.into_iter().map(|m| m * s).collect()
}

/// Mean-square stable multiplicative model (the coupling budget keeps
/// `ρ(L⁻¹Π) ≤ 1/2`); redraws on the off chance the check disagrees.
pub fn random_multiplicative(rng: &mut ChaCha8Rng, n: usize, m1: usize, m2: usize, p: usize) -> StateSpaceModel {
    loop {
        let a = stable_matrix(rng, n, 1.0);
        let k = covariance(rng, m2);
        let n_list = noise_matrices(rng, n, &k, 1.0);
        let model = StateSpaceModel::multiplicative(a, gaussian(rng, n, m1), n_list, gaussian(rng, p, n), k).unwrap();
        if is_ms_stable(&model).unwrap().stable {
            return model;
        }
    }
}

pub fn random_additive(rng: &mut ChaCha8Rng, n: usize, m1: usize, m2: usize, p: usize) -> StateSpaceModel {
    let a = stable_matrix(rng, n, 1.0);
    let k = covariance(rng, m2);
    StateSpaceModel::additive(a, gaussian(rng, n, m1), gaussian(rng, n, m2), gaussian(rng, p, n), k).unwrap()
}

/// Similarity transform `(TAT⁻¹, TB, CT⁻¹, TNT⁻¹)` of any model kind.
pub fn transform(model: &StateSpaceModel, t: &Mat) -> StateSpaceModel {
    let ti = t.clone().try_inverse().unwrap();
    StateSpaceModel {
        a: t * &model.a * &ti,
        b1: t * &model.b1,
        b2: model.b2.as_ref().map(|b| t * b),
        n: model.n.as_ref().map(|ns| ns.iter().map(|n| t * n * &ti).collect()),
        c: &model.c * &ti,
        k: model.k.clone(),
        kind: model.kind,
    }
}

/// Well-conditioned random transform `I + 0.3·G/√n`.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    Mat::identity(n, n) + gaussian(rng, n, n) * (0.3 / (n as f64).sqrt())
}

pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn crel_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn scalar(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}


/// Relative deviations of the Lyapunov, diagonal Sylvester and mixed Sylvester
/// solvers from the Kronecker oracle on one seeded random instance.
pub struct OracleCase {
    pub lyapunov: f64,
    pub sylvester: f64,
    pub mixed: f64,
}

pub fn oracle_case(seed: u64, n: usize, r: usize, m2: usize) -> OracleCase {
    use stochmor::matrixeq::*;
    let mut g = rng(seed);
    let opts = SolveOptions::default();
    let a = stable_matrix(&mut g, n, 1.0);
    let k = covariance(&mut g, m2);
    let ns = noise_matrices(&mut g, n, &k, 0.8);

    let b = gaussian(&mut g, n, 2);
    let rhs = &b * b.transpose();
    let x = solve_generalized_lyapunov(&a, &ns, &k, &rhs, &opts).unwrap().x;
    let oracle = kronecker_oracle_real(&a, &a, &ns, &ns, &k, &rhs).unwrap();
    let lyapunov = rel_diff(&x, &oracle);

    let d: Vec<C64> = (0..r).map(|_| C64::new(-0.5 - 2.5 * g.random::<f64>(), 4.0 * g.random::<f64>() - 2.0)).collect();
    let nt: Vec<CMat> = (0..m2).map(|_| cgaussian(&mut g, r, r).map(|z| z * (0.3 / (r as f64).sqrt()))).collect();
    let mut coupling = 0.0;
    for i in 0..m2 {
        for j in 0..m2 {
            coupling += k[(i, j)].abs() * spectral_norm(&ns[i]) * nt[j].norm();
        }
    }
    let shrink = (0.8 / coupling).min(1.0);
    let nt: Vec<CMat> = nt.into_iter().map(|m| m.map(|z| z * shrink)).collect();
    let crhs = cgaussian(&mut g, n, r);
    let x = solve_generalized_sylvester(&a, &d, &ns, &nt, &k, &crhs, &opts).unwrap().x;
    let oracle = kronecker_oracle(&a, &CMat::from_diagonal(&nalgebra::DVector::from_vec(d)), &ns, &nt, &k, &crhs).unwrap();
    let sylvester = crel_diff(&x, &oracle);

    let ahat = stable_matrix(&mut g, r, 1.0);
    let nhat = noise_matrices(&mut g, r, &k, 0.8);
    let rrhs = gaussian(&mut g, n, r);
    let x = solve_mixed_sylvester(&a, &ahat, &ns, &nhat, &k, &rrhs, &opts).unwrap().x;
    let oracle = kronecker_oracle_real(&a, &ahat, &ns, &nhat, &k, &rrhs).unwrap();
    let mixed = rel_diff(&x, &oracle);

    OracleCase { lyapunov, sylvester, mixed }
}

/// Random orthonormal `n×r` basis.
pub fn orthonormal(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Mat {
    gaussian(rng, n, r).qr().q().columns(0, r).into_owned()
}

/// Galerkin projection `VᵀMV`; stays stable for the generators above.
pub fn galerkin(model: &StateSpaceModel, v: &Mat) -> StateSpaceModel {
    stochmor::irka::petrov_galerkin_project(model, v, v).unwrap()
}

/// Deviations measured by the metric property suite on one seeded instance.
#[derive(Debug)]
pub struct MetricCase {
    /// `|d(Σ,Σ̂) − d(Σ̂,Σ)| / d`
    pub symmetry: f64,
    /// Worst relative error of `d(sW) = s·d(W)` over `s ∈ {0.5, 2}`.
    pub scaling: f64,
    /// `d(Σ,Σ₂) − d(Σ,Σ₁) − d(Σ₁,Σ₂)`, should be ≤ 0.
    pub triangle_excess: f64,
    /// `|E3² − E1² − E2²| / E3²`
    pub block_identity: f64,
    /// Smallest `√2·E3·max{1,u} − (E1·u + E2)` over `u ∈ {0.5, 1, 2}`.
    pub chain_slack: f64,
    /// Smallest Gramian eigenvalue relative to its norm.
    pub gramian_min: f64,
    /// `|raw − (tr_full + tr_red − 2 tr_cross)| / max(tr_full, tr_red)`
    pub trace_identity: f64,
}

pub fn metric_case(seed: u64) -> MetricCase {
    use stochmor::irka::{reduce_one_step, Initialization, IrkaOptions};
    use stochmor::linalg::sym_eigenvalues;
    use stochmor::metrics::{l2w_distance, AdditiveEvaluator, DistanceEvaluator};
    use stochmor::WeightMatrix;

    let mut g = rng(seed);
    let m = random_multiplicative(&mut g, 8, 2, 2, 2);
    let red1 = galerkin(&m, &orthonormal(&mut g, 8, 3));
    let red2 = galerkin(&m, &orthonormal(&mut g, 8, 4));
    let w = WeightMatrix::new(well_conditioned(&mut g, 2)).unwrap();
    let d = |x: &StateSpaceModel, y: &StateSpaceModel, w: &WeightMatrix| l2w_distance(x, y, w).unwrap();

    let fwd = d(&m, &red1, &w);
    let symmetry = (fwd.distance - d(&red1, &m, &w).distance).abs() / fwd.distance;
    let scaling = [0.5, 2.0]
        .iter()
        .map(|&s| (d(&m, &red1, &w.scaled(s).unwrap()).distance - s * fwd.distance).abs() / (s * fwd.distance))
        .fold(0.0, f64::max);
    let triangle_excess = d(&m, &red2, &w).distance - fwd.distance - d(&red1, &red2, &w).distance;
    let trace_identity = (fwd.distance_squared_raw - (fwd.tr_full + fwd.tr_red - 2.0 * fwd.tr_cross)).abs() / fwd.tr_full.max(fwd.tr_red);

    let k = m.coupling_covariance();
    let parts = stochmor::irka::Parts { a: &m.a, b: &m.b1, c: &m.c, n: m.noise_matrices(), k: &k };
    let p = DistanceEvaluator::new(&parts, &w.gram(), &Default::default()).unwrap().gramian().clone();
    let gramian_min = sym_eigenvalues(&p).into_iter().fold(f64::INFINITY, f64::min) / p.norm();

    let add = random_additive(&mut g, 10, 1, 2, 1);
    let opts = IrkaOptions { init: Initialization::Random { seed }, max_iter: 0, ..Default::default() };
    let one = reduce_one_step(&add, 3, &opts).unwrap();
    let eval = AdditiveEvaluator::new(&add, &Default::default()).unwrap();
    let b = eval.one_step(&one, 1.0).unwrap();
    let e3 = b.e3.unwrap();
    let block_identity = (e3 * e3 - b.e1 * b.e1 - b.e2 * b.e2).abs() / (e3 * e3);
    let chain_slack = [0.5, 1.0, 2.0]
        .iter()
        .map(|&u: &f64| std::f64::consts::SQRT_2 * e3 * u.max(1.0) - (b.e1 * u + b.e2))
        .fold(f64::INFINITY, f64::min);

    MetricCase { symmetry, scaling, triangle_excess, block_identity, chain_slack, gramian_min, trace_identity }
}

/// Scalar pair `(−1, 1, 1)` vs `(−2, 1, 1)`: `d² = 1/2 + 1/4 − 2/3`.
pub fn scalar_distance() -> stochmor::metrics::DistanceReport {
    let full = StateSpaceModel::deterministic(scalar(-1.0), scalar(1.0), scalar(1.0)).unwrap();
    let red = StateSpaceModel::deterministic(scalar(-2.0), scalar(1.0), scalar(1.0)).unwrap();
    stochmor::metrics::l2w_distance(&full, &red, &stochmor::WeightMatrix::identity(1)).unwrap()
}

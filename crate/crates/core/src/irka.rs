//! IRKA-type reduction for stochastic systems: the bilinear variant for
//! multiplicative noise, the two-step and one-step linear variants for additive
//! noise, and the first-order optimality residuals.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    block_diag, cmul, cond2, eigen_decompose, hcat, rcmul, rtcmul, sorted_spectrum, spectral_order, split,
    to_complex, CMat, Mat, SchurForm, C64,
};
use crate::matrixeq::{
    solve_generalized_lyapunov, solve_generalized_sylvester_schur, solve_mixed_sylvester_schur, SchurOp,
    SolveOptions,
};
use crate::metrics::sqrtm_psd;
use crate::model::{is_ms_stable, validate_model, NoiseKind, StateSpaceModel, WeightMatrix};

/// Largest accepted condition number of `WbᵀV` and of eigenvector matrices.
pub const COND_CAP: f64 = 1e12;

/// Reduced matrices used to seed an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedGuess {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub n: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// One-sided projection onto the slowest eigenmodes of `A` that are
    /// reachable or observable; falls back to a seeded random basis.
    DominantModes,
    /// Seeded random orthonormal basis, one-sided.
    Random { seed: u64 },
    Given(Box<ReducedGuess>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrkaOptions {
    /// Relative Chebyshev change of the sorted reduced spectrum.
    pub tol: f64,
    pub max_iter: usize,
    pub init: Initialization,
    pub solve: SolveOptions,
    /// Seed for the random fallback of [`Initialization::DominantModes`].
    pub seed: u64,
}

impl Default for IrkaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            init: Initialization::DominantModes,
            solve: SolveOptions { tol: 1e-8, ..SolveOptions::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReductionResult {
    pub reduced: StateSpaceModel,
    /// Right basis, orthonormal columns.
    pub v: Mat,
    /// Left basis, orthonormal columns.
    pub wb: Mat,
    /// Sorted spectrum of `Â` for the initial guess and after every iteration.
    pub history: Vec<Vec<C64>>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TwoStepReduction {
    /// Reduction of `(A, B1, C)`; a deterministic model.
    pub part1: ReductionResult,
    /// Reduction of `(A, B2, C)`; an additive model with zero `B̂1`.
    pub part2: ReductionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityResiduals {
    pub res_a: f64,
    pub res_b: f64,
    pub res_c: Vec<f64>,
    pub res_d: f64,
}

impl OptimalityResiduals {
    pub fn max(&self) -> f64 {
        self.res_c.iter().copied().fold(self.res_a.max(self.res_b).max(self.res_d), f64::max)
    }
}

/// Borrowed `(A, B, C, {N_i}, K)` tuple; `n` is empty for linear systems.
#[derive(Debug, Clone, Copy)]
pub struct Parts<'a> {
    pub a: &'a Mat,
    pub b: &'a Mat,
    pub c: &'a Mat,
    pub n: &'a [Mat],
    pub k: &'a Mat,
}

struct Projected {
    a: Mat,
    b: Mat,
    c: Mat,
    n: Vec<Mat>,
}

/// `(WbᵀV)⁻¹ Wbᵀ M V` etc. for the parts of a system.
fn project(parts: &Parts, v: &Mat, wb: &Mat) -> Result<Projected> {
    let n = parts.a.nrows();
    if v.nrows() != n || wb.shape() != v.shape() {
        return Err(Error::Dimension(format!(
            "bases are {}x{} and {}x{}, expected n = {n} rows and equal shapes",
            v.nrows(),
            v.ncols(),
            wb.nrows(),
            wb.ncols()
        )));
    }
    let m = wb.tr_mul(v);
    let cond = cond2(&m);
    if !(cond <= COND_CAP) {
        return Err(Error::Singular { what: "projection matrix WbᵀV", cond });
    }
    let lu = m.lu();
    let solve = |x: Mat| lu.solve(&x).ok_or(Error::Singular { what: "projection matrix WbᵀV", cond });
    Ok(Projected {
        a: solve(wb.tr_mul(&(parts.a * v)))?,
        b: solve(wb.tr_mul(parts.b))?,
        c: parts.c * v,
        n: parts.n.iter().map(|ni| solve(wb.tr_mul(&(ni * v)))).collect::<Result<_>>()?,
    })
}

/// Petrov-Galerkin reduction of every matrix of `model`; `K` is copied.
pub fn petrov_galerkin_project(model: &StateSpaceModel, v: &Mat, wb: &Mat) -> Result<StateSpaceModel> {
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let b = match &model.b2 {
        Some(b2) if model.kind == NoiseKind::Additive => hcat(&model.b1, b2),
        _ => model.b1.clone(),
    };
    let parts = Parts { a: &model.a, b: &b, c: &model.c, n: model.noise_matrices(), k: &model.k };
    let p = project(&parts, v, wb)?;
    let m1 = model.input_dim();
    let b1 = p.b.columns(0, m1).into_owned();
    let reduced = match model.kind {
        NoiseKind::Deterministic => StateSpaceModel::deterministic(p.a, b1, p.c),
        NoiseKind::Additive => {
            let b2 = p.b.columns(m1, p.b.ncols() - m1).into_owned();
            StateSpaceModel::additive(p.a, b1, b2, p.c, model.k.clone())
        }
        NoiseKind::Multiplicative => StateSpaceModel::multiplicative(p.a, b1, p.n, p.c, model.k.clone()),
    };
    reduced
}

/// Real orthonormal basis of the real span of the columns of `xc`.
///
/// Complex columns are expected in conjugate pairs; each pair `(x, x̄)` is
/// replaced by `(Re x, Im x)`. Unpaired complex columns contribute both parts.
pub fn realify_orthonormalize(xc: &CMat) -> Result<Mat> {
    let (n, r) = xc.shape();
    let (re, im) = split(xc);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(2 * r);
    let mut used = vec![false; r];
    for j in 0..r {
        if used[j] {
            continue;
        }
        used[j] = true;
        let xnorm = xc.column(j).norm();
        let im_norm = im.column(j).norm();
        if im_norm <= 1e-12 * xnorm {
            cols.push(re.column(j).into_owned());
            continue;
        }
        let partner = ((j + 1)..r)
            .filter(|&k| !used[k])
            .map(|k| {
                let d = (re.column(k) - re.column(j)).norm() + (im.column(k) + im.column(j)).norm();
                (k, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((k, d)) = partner {
            if d <= 1e-8 * xnorm {
                used[k] = true;
            }
        }
        cols.push(re.column(j).into_owned());
        cols.push(im.column(j).into_owned());
    }
    if cols.is_empty() {
        return Err(Error::RankDeficient { expected: r, rank: 0 });
    }
    let m = Mat::from_columns(&cols);
    let qr = m.clone().col_piv_qr();
    let rmat = qr.r();
    let k = rmat.nrows().min(rmat.ncols());
    let r00 = if k > 0 { rmat[(0, 0)].abs() } else { 0.0 };
    let tol = (n.max(m.ncols()) as f64) * f64::EPSILON * r00;
    let rank = (0..k).filter(|&i| rmat[(i, i)].abs() > tol).count();
    if rank < r || r00 == 0.0 {
        return Err(Error::RankDeficient { expected: r, rank });
    }
    Ok(qr.q().columns(0, r).into_owned())
}

fn random_basis(n: usize, r: usize, seed: u64) -> Result<Mat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mat::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
    realify_orthonormalize(&to_complex(&g))
}

/// Orthonormal basis of the slowest eigenmodes of `A` with non-negligible
/// input or output coupling; conjugate pairs contribute real and imaginary parts.
fn dominant_basis(schur: &SchurForm, b: &Mat, c: &Mat, r: usize) -> Option<Mat> {
    let n = schur.dim();
    let values = schur.eigenvalues();
    let scale = values.iter().fold(0.0_f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let bnorm = b.norm().max(f64::MIN_POSITIVE);
    let cnorm = c.norm().max(f64::MIN_POSITIVE);
    let (bc, cc) = (to_complex(b), to_complex(c));
    let vectors = schur.eigenvectors();
    let inputs = cmul(&vectors.adjoint(), &bc);
    let outputs = cmul(&cc, &vectors);
    let coupling: Vec<(f64, f64)> =
        (0..n).map(|i| (inputs.row(i).norm() / bnorm, outputs.column(i).norm() / cnorm)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let tol = 1e-8 * scale;
    // Slowest modes first; within a cluster of equal decay rates the
    // strongest input-output coupling wins.
    order.sort_by(|&i, &j| {
        let (a, b) = (values[i], values[j]);
        let re = if (a.re - b.re).abs() <= tol { std::cmp::Ordering::Equal } else { b.re.total_cmp(&a.re) };
        let (pi, pj) = (coupling[i].0 * coupling[i].1, coupling[j].0 * coupling[j].1);
        let strength = if (pi - pj).abs() <= 1e-8 * pi.max(pj) { std::cmp::Ordering::Equal } else { pj.total_cmp(&pi) };
        re.then(strength).then(a.im.abs().total_cmp(&b.im.abs())).then(b.im.total_cmp(&a.im)).then(i.cmp(&j))
    });
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
    for idx in order {
        if basis.len() == r {
            break;
        }
        if values[idx].im < 0.0 {
            // The conjugate partner contributes the same real span.
            continue;
        }
        let x = vectors.column(idx);
        let (coupling_in, coupling_out) = coupling[idx];
        if coupling_in.max(coupling_out) < 1e-10 {
            continue;
        }
        for part in [x.map(|z| z.re), x.map(|z| z.im)] {
            if basis.len() == r {
                break;
            }
            let mut v = part;
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
            let norm = v.norm();
            if norm > 1e-8 {
                basis.push(v / norm);
            }
        }
    }
    (basis.len() == r).then(|| Mat::from_columns(&basis))
}

/// Chebyshev distance of two sorted spectra relative to the spectral radius of `new`.
pub fn spectral_change(old: &[C64], new: &[C64]) -> f64 {
    if old.len() != new.len() {
        return f64::INFINITY;
    }
    let radius = new.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let cheb = old.iter().zip(new).fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()));
    if radius == 0.0 {
        cheb
    } else {
        cheb / radius
    }
}

struct CoreOutput {
    proj: Projected,
    v: Mat,
    wb: Mat,
    history: Vec<Vec<C64>>,
    converged: bool,
    iterations: usize,
}

fn reduced_abscissa(proj: &Projected, k: &Mat, eigenvalues: &[C64]) -> Result<f64> {
    if proj.n.is_empty() {
        return Ok(eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max));
    }
    let m = StateSpaceModel {
        a: proj.a.clone(),
        b1: proj.b.clone(),
        b2: None,
        n: Some(proj.n.clone()),
        c: proj.c.clone(),
        k: k.clone(),
        kind: NoiseKind::Multiplicative,
    };
    Ok(is_ms_stable(&m)?.spectral_abscissa)
}

/// Shared iteration for all variants. `wgram` is `𝒲𝒲ᵀ`.
fn irka_core(parts: &Parts, r: usize, wgram: &Mat, opts: &IrkaOptions) -> Result<CoreOutput> {
    let n = parts.a.nrows();
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("reduced order must satisfy 1 <= r <= n = {n}, got {r}")));
    }
    if wgram.shape() != (parts.b.ncols(), parts.b.ncols()) {
        return Err(Error::Dimension(format!(
            "weight is {}x{}, expected {}x{}",
            wgram.nrows(),
            wgram.ncols(),
            parts.b.ncols(),
            parts.b.ncols()
        )));
    }
    let schur = SchurForm::new(parts.a)?;
    let nt: Vec<Mat> = parts.n.iter().map(|m| m.transpose()).collect();

    let (mut proj, mut v, mut wb) = match &opts.init {
        Initialization::Given(g) => {
            if g.a.shape() != (r, r) || g.b.shape() != (r, parts.b.ncols()) || g.c.shape() != (parts.c.nrows(), r) {
                return Err(Error::Dimension("initial guess does not match the requested reduced order".into()));
            }
            if g.n.len() != parts.n.len() || g.n.iter().any(|m| m.shape() != (r, r)) {
                return Err(Error::Dimension("initial guess has mismatched noise matrices".into()));
            }
            let proj = Projected { a: g.a.clone(), b: g.b.clone(), c: g.c.clone(), n: g.n.clone() };
            (proj, Mat::zeros(n, r), Mat::zeros(n, r))
        }
        Initialization::Random { seed } => {
            let v = random_basis(n, r, *seed)?;
            (project(parts, &v, &v)?, v.clone(), v)
        }
        Initialization::DominantModes => {
            let v = match dominant_basis(&schur, parts.b, parts.c, r) {
                Some(v) => v,
                None => random_basis(n, r, opts.seed)?,
            };
            (project(parts, &v, &v)?, v.clone(), v)
        }
    };

    let mut spectrum = {
        let e = eigen_decompose(&proj.a)?;
        sorted_spectrum(&e.values)
    };
    let mut history = vec![spectrum.clone()];
    let abscissa = reduced_abscissa(&proj, parts.k, &spectrum)?;
    if !(abscissa < 0.0) {
        return Err(Error::StabilityLoss { iteration: 0, abscissa, history });
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let eig = eigen_decompose(&proj.a)?;
        if !(eig.cond <= COND_CAP) {
            return Err(Error::Decomposition(format!(
                "reduced matrix is not numerically diagonalizable (eigenvector condition {:.3e})",
                eig.cond
            )));
        }
        // S = X⁻¹ maps Â to D = S Â S⁻¹.
        let s = &eig.inverse;
        let x = &eig.vectors;
        let b_tilde = cmul(s, &to_complex(&proj.b));
        let c_tilde = crate::linalg::rcmul(&proj.c, x);
        let n_tilde: Vec<CMat> = proj.n.iter().map(|m| cmul(&cmul(s, &to_complex(m)), x)).collect();
        let n_tilde_t: Vec<CMat> = n_tilde.iter().map(|m| m.transpose()).collect();

        let rhs_v = rcmul(parts.b, &(to_complex(wgram) * b_tilde.transpose()));
        let rhs_w = rtcmul(parts.c, &c_tilde);
        let solve_v = || {
            solve_generalized_sylvester_schur(SchurOp::new(&schur), &eig.values, parts.n, &n_tilde, parts.k, &rhs_v, &opts.solve)
        };
        let solve_w = || {
            solve_generalized_sylvester_schur(SchurOp::transposed(&schur), &eig.values, &nt, &n_tilde_t, parts.k, &rhs_w, &opts.solve)
        };
        let (vr, wr) = rayon::join(solve_v, solve_w);
        v = realify_orthonormalize(&vr?.x)?;
        wb = realify_orthonormalize(&wr?.x)?;
        proj = project(parts, &v, &wb)?;

        let e = eigen_decompose(&proj.a)?;
        let new_spectrum = sorted_spectrum(&e.values);
        history.push(new_spectrum.clone());
        let abscissa = reduced_abscissa(&proj, parts.k, &new_spectrum)?;
        if !(abscissa < 0.0) {
            return Err(Error::StabilityLoss { iteration: iterations, abscissa, history });
        }
        let change = spectral_change(&spectrum, &new_spectrum);
        spectrum = new_spectrum;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if iterations == 0 {
        // max_iter = 0: report the initial projection as is.
        converged = false;
    }
    Ok(CoreOutput { proj, v, wb, history, converged, iterations })
}

fn require_kind(model: &StateSpaceModel, kind: NoiseKind, what: &str) -> Result<()> {
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if model.kind != kind {
        return Err(Error::InvalidArgument(format!("{what} needs a {kind:?} model, got {:?}", model.kind)));
    }
    Ok(())
}

/// Modified bilinear IRKA for multiplicative noise.
pub fn reduce_bilinear_irka(model: &StateSpaceModel, r: usize, w: &WeightMatrix, opts: &IrkaOptions) -> Result<ReductionResult> {
    require_kind(model, NoiseKind::Multiplicative, "bilinear IRKA")?;
    let parts = Parts { a: &model.a, b: &model.b1, c: &model.c, n: model.noise_matrices(), k: &model.k };
    let out = irka_core(&parts, r, &w.gram(), opts)?;
    let reduced = StateSpaceModel::multiplicative(out.proj.a, out.proj.b, out.proj.n, out.proj.c, model.k.clone())?;
    Ok(ReductionResult {
        reduced,
        v: out.v,
        wb: out.wb,
        history: out.history,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Weighted linear IRKA on `(A, B, C)` with `𝒲𝒲ᵀ = wgram`.
pub fn reduce_linear_irka(a: &Mat, b: &Mat, c: &Mat, r: usize, wgram: &Mat, opts: &IrkaOptions) -> Result<(Mat, Mat, Mat, ReductionResult)> {
    let empty = Mat::zeros(0, 0);
    let parts = Parts { a, b, c, n: &[], k: &empty };
    let out = irka_core(&parts, r, wgram, opts)?;
    let reduced = StateSpaceModel::deterministic(out.proj.a.clone(), out.proj.b.clone(), out.proj.c.clone())?;
    Ok((
        out.proj.a,
        out.proj.b,
        out.proj.c,
        ReductionResult {
            reduced,
            v: out.v,
            wb: out.wb,
            history: out.history,
            converged: out.converged,
            iterations: out.iterations,
        },
    ))
}

/// Modified two-step linear IRKA with independent orders for the input and noise parts.
pub fn reduce_two_step(model: &StateSpaceModel, r1: usize, r2: usize, opts: &IrkaOptions) -> Result<TwoStepReduction> {
    reduce_two_step_with(model, r1, r2, opts, opts)
}

pub fn reduce_two_step_with(
    model: &StateSpaceModel,
    r1: usize,
    r2: usize,
    opts1: &IrkaOptions,
    opts2: &IrkaOptions,
) -> Result<TwoStepReduction> {
    require_kind(model, NoiseKind::Additive, "two-step IRKA")?;
    let b2 = model.b2.as_ref().expect("validated additive model has B2");
    let m1 = model.input_dim();
    let k_sqrt = sqrtm_psd(&model.k)?;
    WeightMatrix::new(k_sqrt.clone())?;

    let (_, _, _, part1) = reduce_linear_irka(&model.a, &model.b1, &model.c, r1, &Mat::identity(m1, m1), opts1)?;
    let (a2, bb2, c2, mut part2) = reduce_linear_irka(&model.a, b2, &model.c, r2, &(&k_sqrt * &k_sqrt), opts2)?;
    part2.reduced = StateSpaceModel::additive(a2, Mat::zeros(r2, m1), bb2, c2, model.k.clone())?;
    Ok(TwoStepReduction { part1, part2 })
}

/// Modified one-step linear IRKA on `B = [B1 B2]` with `𝒲 = blkdiag(I, K^{1/2})`.
pub fn reduce_one_step(model: &StateSpaceModel, r: usize, opts: &IrkaOptions) -> Result<ReductionResult> {
    require_kind(model, NoiseKind::Additive, "one-step IRKA")?;
    let b2 = model.b2.as_ref().expect("validated additive model has B2");
    let m1 = model.input_dim();
    let b = hcat(&model.b1, b2);
    let wgram = one_step_weight_gram(m1, &model.k);
    let (a, bh, c, mut result) = reduce_linear_irka(&model.a, &b, &model.c, r, &wgram, opts)?;
    let b1 = bh.columns(0, m1).into_owned();
    let bb2 = bh.columns(m1, bh.ncols() - m1).into_owned();
    result.reduced = StateSpaceModel::additive(a, b1, bb2, c, model.k.clone())?;
    Ok(result)
}

/// `𝒲𝒲ᵀ = blkdiag(I, K)` for `𝒲 = blkdiag(I, K^{1/2})`.
pub fn one_step_weight_gram(m1: usize, k: &Mat) -> Mat {
    block_diag(&Mat::identity(m1, m1), k)
}

fn relative(lhs: &Mat, rhs: &Mat) -> f64 {
    let diff = (lhs - rhs).norm();
    let scale = rhs.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Residuals of the first-order optimality conditions for `(A, B, C, N)`
/// versus `(Â, B̂, Ĉ, N̂)` with weight Gram matrix `𝒲𝒲ᵀ`.
pub fn optimality_residuals_parts(full: &Parts, red: &Parts, wgram: &Mat, opts: &SolveOptions) -> Result<OptimalityResiduals> {
    let k = full.k;
    let schur = SchurForm::new(full.a)?;
    let rschur = SchurForm::new(red.a)?;
    let nt: Vec<Mat> = full.n.iter().map(|m| m.transpose()).collect();
    let nht: Vec<Mat> = red.n.iter().map(|m| m.transpose()).collect();

    let p_hat = solve_generalized_lyapunov(red.a, red.n, k, &(red.b * wgram * red.b.transpose()), opts)?.x;
    let p2 = solve_mixed_sylvester_schur(
        SchurOp::new(&schur),
        SchurOp::transposed(&rschur),
        full.n,
        red.n,
        k,
        &(full.b * wgram * red.b.transpose()),
        opts,
    )?
    .x;
    let q_hat = solve_generalized_lyapunov(&red.a.transpose(), &nht, k, &(red.c.transpose() * red.c), opts)?.x;
    // Q₂ᵀ solves Aᵀ X + X Â + Σ k_ij N_iᵀ X N̂_j = −Cᵀ Ĉ.
    let q2 = solve_mixed_sylvester_schur(
        SchurOp::transposed(&schur),
        SchurOp::new(&rschur),
        &nt,
        &nht,
        k,
        &(full.c.transpose() * red.c),
        opts,
    )?
    .x
    .transpose();

    let res_a = relative(&(red.c * &p_hat), &(full.c * &p2));
    let res_b = relative(&(&q_hat * &p_hat), &(&q2 * &p2));
    let res_c = (0..full.n.len())
        .map(|i| {
            let mut psi = Mat::zeros(full.a.nrows(), full.a.ncols());
            let mut psi_hat = Mat::zeros(red.a.nrows(), red.a.ncols());
            for j in 0..full.n.len() {
                psi += &full.n[j] * k[(i, j)];
                psi_hat += &red.n[j] * k[(i, j)];
            }
            relative(&(&q_hat * psi_hat * &p_hat), &(&q2 * psi * &p2))
        })
        .collect();
    let res_d = relative(&(&q_hat * red.b * wgram), &(&q2 * full.b * wgram));
    Ok(OptimalityResiduals { res_a, res_b, res_c, res_d })
}

/// Optimality residuals of a multiplicative (or deterministic) reduction with input `B1`.
pub fn optimality_residuals(model: &StateSpaceModel, reduced: &StateSpaceModel, w: &WeightMatrix) -> Result<OptimalityResiduals> {
    optimality_residuals_with(model, reduced, w, &SolveOptions::default())
}

pub fn optimality_residuals_with(
    model: &StateSpaceModel,
    reduced: &StateSpaceModel,
    w: &WeightMatrix,
    opts: &SolveOptions,
) -> Result<OptimalityResiduals> {
    if model.noise_matrices().len() != reduced.noise_matrices().len() {
        return Err(Error::Dimension("full and reduced models have different numbers of noise matrices".into()));
    }
    if model.input_dim() != reduced.input_dim() || model.output_dim() != reduced.output_dim() {
        return Err(Error::Dimension("full and reduced models have different input or output dimensions".into()));
    }
    if w.dim() != model.input_dim() {
        return Err(Error::Dimension(format!("weight is {}x{}, expected m1 = {}", w.dim(), w.dim(), model.input_dim())));
    }
    let k = model.coupling_covariance();
    let full = Parts { a: &model.a, b: &model.b1, c: &model.c, n: model.noise_matrices(), k: &k };
    let red = Parts { a: &reduced.a, b: &reduced.b1, c: &reduced.c, n: reduced.noise_matrices(), k: &k };
    optimality_residuals_parts(&full, &red, &w.gram(), opts)
}

/// Indices that sort `values` by real part, then imaginary part, then index.
pub fn eigenvalue_order(values: &[C64]) -> Vec<usize> {
    spectral_order(values, 1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realify_conjugate_pair() {
        let s = 1.0 / 2f64.sqrt();
        let xc = CMat::from_column_slice(2, 2, &[C64::new(s, 0.0), C64::new(0.0, s), C64::new(s, 0.0), C64::new(0.0, -s)]);
        let q = realify_orthonormalize(&xc).unwrap();
        let proj = &q * q.transpose();
        assert!((proj - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn realify_keeps_real_span() {
        let v = Mat::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.8]);
        let q = realify_orthonormalize(&to_complex(&v)).unwrap();
        let diff = &q * q.transpose() - &v * v.transpose();
        assert!(diff.norm() < 1e-12);
        assert!((q.tr_mul(&q) - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn realify_detects_duplicate() {
        let v = Mat::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let err = realify_orthonormalize(&to_complex(&v)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { expected: 2, rank: 1 }));
    }

    fn small_mult() -> StateSpaceModel {
        let a = Mat::from_row_slice(3, 3, &[-2.0, 0.5, 0.0, -0.3, -1.5, 0.2, 0.1, 0.0, -3.0]);
        let b = Mat::from_column_slice(3, 1, &[1.0, 0.5, -0.2]);
        let c = Mat::from_row_slice(1, 3, &[0.3, 1.0, 0.4]);
        let n1 = Mat::from_row_slice(3, 3, &[0.2, 0.0, 0.1, 0.0, 0.1, 0.0, 0.05, 0.0, 0.2]);
        StateSpaceModel::multiplicative(a, b, vec![n1], c, Mat::identity(1, 1)).unwrap()
    }

    #[test]
    fn leading_block_projection() {
        let m = small_mult();
        let e = Mat::identity(3, 3).columns(0, 2).into_owned();
        let red = petrov_galerkin_project(&m, &e, &e).unwrap();
        assert_eq!(red.a, m.a.view((0, 0), (2, 2)).into_owned());
        assert_eq!(red.b1, m.b1.rows(0, 2).into_owned());
        assert_eq!(red.c, m.c.columns(0, 2).into_owned());
        assert_eq!(red.noise_matrices()[0], m.noise_matrices()[0].view((0, 0), (2, 2)).into_owned());
        let full = petrov_galerkin_project(&m, &Mat::identity(3, 3), &Mat::identity(3, 3)).unwrap();
        assert_eq!(full, m);
    }

    #[test]
    fn orthogonal_bases_fail() {
        let m = small_mult();
        let v = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let w = Mat::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(matches!(petrov_galerkin_project(&m, &v, &w), Err(Error::Singular { .. })));
    }

    #[test]
    fn full_order_is_fixed_point() {
        let m = small_mult();
        let guess = ReducedGuess { a: m.a.clone(), b: m.b1.clone(), c: m.c.clone(), n: m.noise_matrices().to_vec() };
        let opts = IrkaOptions { init: Initialization::Given(Box::new(guess)), ..Default::default() };
        let res = reduce_bilinear_irka(&m, 3, &WeightMatrix::identity(1), &opts).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        let o = optimality_residuals(&m, &res.reduced, &WeightMatrix::identity(1)).unwrap();
        assert!(o.max() < 1e-10, "{o:?}");
    }

    #[test]
    fn similarity_transform_is_stationary() {
        let m = small_mult();
        let t = Mat::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, 1.0, 0.3, 0.0, -0.2, 1.0]);
        let ti = t.clone().try_inverse().unwrap();
        let red = StateSpaceModel::multiplicative(
            &t * &m.a * &ti,
            &t * &m.b1,
            vec![&t * &m.noise_matrices()[0] * &ti],
            &m.c * &ti,
            m.k.clone(),
        )
        .unwrap();
        let o = optimality_residuals(&m, &red, &WeightMatrix::identity(1)).unwrap();
        assert!(o.max() < 1e-10, "{o:?}");
    }
}

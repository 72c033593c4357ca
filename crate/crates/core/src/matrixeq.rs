//! Standard and generalized Lyapunov/Sylvester solvers.
//!
//! All solvers reduce to the shifted triangular systems of a complex Schur
//! (Bartels-Stewart) solve. Coupling terms `Σ k_ij N_i X Ñ_jᵀ` are handled by a
//! fixed-point splitting that keeps the standard operator as preconditioner.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, cmul, crmul, crtmul, is_finite, rcmul, real_part, rtcmul, symmetrize, to_complex,
    CMat, Mat, SchurForm, C64,
};

/// Largest `n·r` accepted by the dense Kronecker oracle.
pub const KRONECKER_CAP: usize = 4096;

/// Growth of the residual over its best value that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations without residual improvement before stopping with a
    /// divergence or stall error.
    pub patience: usize,
    /// Solve independent shifted columns on the rayon pool.
    pub parallel: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, patience: 10, parallel: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    ShiftedColumns,
    FixedPoint,
    Kronecker,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<T> {
    #[serde(skip)]
    pub x: T,
    /// `‖residual‖_F / ‖RHS‖_F` evaluated on the returned `x`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// A real matrix or its transpose, represented through its complex Schur form.
#[derive(Debug, Clone, Copy)]
pub struct SchurOp<'a> {
    pub form: &'a SchurForm,
    pub transposed: bool,
}

impl<'a> SchurOp<'a> {
    pub fn new(form: &'a SchurForm) -> Self {
        Self { form, transposed: false }
    }

    pub fn transposed(form: &'a SchurForm) -> Self {
        Self { form, transposed: true }
    }

    fn dim(&self) -> usize {
        self.form.dim()
    }

    /// `op · x`
    fn apply_left(&self, x: &CMat) -> CMat {
        if self.transposed {
            rtcmul(self.form.matrix(), x)
        } else {
            rcmul(self.form.matrix(), x)
        }
    }

    /// `x · op`
    fn apply_right(&self, x: &CMat) -> CMat {
        if self.transposed {
            crtmul(x, self.form.matrix())
        } else {
            crmul(x, self.form.matrix())
        }
    }

    /// Solves `(S + shift·I) y = b` where `S` is the triangular factor of the operator.
    fn triangular_solve(&self, shift: C64, b: &mut DVector<C64>, column: usize) -> Result<()> {
        let t = self.form.triangular();
        let n = t.nrows();
        let tiny = 1e-13 * self.form.scale().max(shift.norm()).max(f64::MIN_POSITIVE);
        if self.transposed {
            // Tᴴ is lower triangular; row i of Tᴴ is the conjugate of column i of T.
            for i in 0..n {
                let col = t.column(i);
                let mut s = b[i];
                for k in 0..i {
                    s -= col[k].conj() * b[k];
                }
                let pivot = col[i].conj() + shift;
                if pivot.norm() <= tiny {
                    return Err(Error::ShiftCollision { column, shift });
                }
                b[i] = s / pivot;
            }
        } else {
            for k in (0..n).rev() {
                let col = t.column(k);
                let pivot = col[k] + shift;
                if pivot.norm() <= tiny {
                    return Err(Error::ShiftCollision { column, shift });
                }
                let yk = b[k] / pivot;
                b[k] = yk;
                for i in 0..k {
                    b[i] -= col[i] * yk;
                }
            }
        }
        Ok(())
    }
}

/// Right-hand operator `M` in `L X + X M`.
#[derive(Debug, Clone, Copy)]
pub enum RightOp<'a> {
    Diagonal(&'a [C64]),
    Schur(SchurOp<'a>),
}

impl RightOp<'_> {
    fn dim(&self) -> usize {
        match self {
            RightOp::Diagonal(d) => d.len(),
            RightOp::Schur(op) => op.dim(),
        }
    }

    fn apply_right(&self, x: &CMat) -> CMat {
        match self {
            RightOp::Diagonal(d) => {
                let mut out = x.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col *= d[j];
                }
                out
            }
            RightOp::Schur(op) => op.apply_right(x),
        }
    }
}

/// Solves `L X + X M = G` for the standard (coupling-free) operator.
fn standard_solve(left: SchurOp, right: RightOp, g: &CMat, parallel: bool) -> Result<CMat> {
    let u = left.form.unitary();
    let mut gh = cmul(&u.adjoint(), g);
    if let RightOp::Schur(op) = right {
        gh = cmul(&gh, op.form.unitary());
    }
    let r = gh.ncols();
    let y = match right {
        RightOp::Diagonal(d) => {
            let solve_col = |j: usize| -> Result<DVector<C64>> {
                let mut b = gh.column(j).into_owned();
                left.triangular_solve(d[j], &mut b, j)?;
                Ok(b)
            };
            let cols: Vec<DVector<C64>> = if parallel && r > 1 {
                (0..r).into_par_iter().map(solve_col).collect::<Result<_>>()?
            } else {
                (0..r).map(solve_col).collect::<Result<_>>()?
            };
            CMat::from_columns(&cols)
        }
        RightOp::Schur(op) => {
            let tr = op.form.triangular();
            let mut y = CMat::zeros(gh.nrows(), r);
            let order: Vec<usize> = if op.transposed { (0..r).rev().collect() } else { (0..r).collect() };
            for &j in &order {
                let mut b = gh.column(j).into_owned();
                if op.transposed {
                    // S = Tᴴ: S[i, j] = conj(T[j, i]) for i > j.
                    for i in (j + 1)..r {
                        let s = tr[(j, i)].conj();
                        if s != C64::new(0.0, 0.0) {
                            b.axpy(-s, &y.column(i), C64::new(1.0, 0.0));
                        }
                    }
                } else {
                    for i in 0..j {
                        let s = tr[(i, j)];
                        if s != C64::new(0.0, 0.0) {
                            b.axpy(-s, &y.column(i), C64::new(1.0, 0.0));
                        }
                    }
                }
                let shift = if op.transposed { tr[(j, j)].conj() } else { tr[(j, j)] };
                left.triangular_solve(shift, &mut b, j)?;
                y.set_column(j, &b);
            }
            y
        }
    };
    let mut x = cmul(u, &y);
    if let RightOp::Schur(op) = right {
        x = cmul(&x, &op.form.unitary().adjoint());
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Post {
    None,
    Real,
    RealSymmetric,
}

impl Post {
    fn apply(self, x: CMat) -> CMat {
        match self {
            Post::None => x,
            Post::Real => to_complex(&real_part(&x)),
            Post::RealSymmetric => to_complex(&symmetrize(&real_part(&x))),
        }
    }
}

/// Generalized operator `X ↦ L X + X M + Σ_{ij} k_ij P_i X R_jᵀ`.
struct Operator<'a> {
    left: SchurOp<'a>,
    right: RightOp<'a>,
    left_terms: &'a [Mat],
    /// `R̃_i = Σ_j k_ij R_j`, so the coupling is `Σ_i P_i X R̃_iᵀ`.
    mixed_right: Vec<CMat>,
}

impl<'a> Operator<'a> {
    fn new(
        left: SchurOp<'a>,
        right: RightOp<'a>,
        left_terms: &'a [Mat],
        right_terms: &[CMat],
        k: &Mat,
    ) -> Result<Self> {
        let n = left.dim();
        let r = right.dim();
        let m = left_terms.len();
        if right_terms.len() != m {
            return Err(Error::Dimension(format!(
                "{} left coupling matrices but {} right coupling matrices",
                m,
                right_terms.len()
            )));
        }
        if m > 0 && k.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "covariance is {}x{}, expected {m}x{m}",
                k.nrows(),
                k.ncols()
            )));
        }
        for p in left_terms {
            if p.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "left coupling matrix is {}x{}, expected {n}x{n}",
                    p.nrows(),
                    p.ncols()
                )));
            }
        }
        for q in right_terms {
            if q.shape() != (r, r) {
                return Err(Error::Dimension(format!(
                    "right coupling matrix is {}x{}, expected {r}x{r}",
                    q.nrows(),
                    q.ncols()
                )));
            }
        }
        let mixed_right = (0..m)
            .map(|i| {
                let mut acc = CMat::zeros(r, r);
                for (j, rj) in right_terms.iter().enumerate() {
                    if k[(i, j)] != 0.0 {
                        acc += rj * C64::new(k[(i, j)], 0.0);
                    }
                }
                acc
            })
            .collect();
        Ok(Self { left, right, left_terms, mixed_right })
    }

    fn coupling(&self, x: &CMat) -> CMat {
        let mut out = CMat::zeros(x.nrows(), x.ncols());
        for (p, q) in self.left_terms.iter().zip(&self.mixed_right) {
            if q.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                continue;
            }
            out += cmul(&rcmul(p, x), &q.transpose());
        }
        out
    }

    fn residual(&self, x: &CMat, f: &CMat, f_norm: f64) -> f64 {
        let mut res = self.left.apply_left(x) + self.right.apply_right(x) + f;
        if !self.left_terms.is_empty() {
            res += self.coupling(x);
        }
        if f_norm == 0.0 {
            res.norm()
        } else {
            res.norm() / f_norm
        }
    }

    /// Solves `op(X) = −F`.
    fn solve(&self, f: &CMat, post: Post, opts: &SolveOptions, context: &'static str) -> Result<SolveReport<CMat>> {
        let n = self.left.dim();
        let r = self.right.dim();
        if f.shape() != (n, r) {
            return Err(Error::Dimension(format!(
                "right-hand side is {}x{}, expected {n}x{r}",
                f.nrows(),
                f.ncols()
            )));
        }
        if f.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("right-hand side has non-finite entries".into()));
        }
        let f_norm = f.norm();
        let neg = C64::new(-1.0, 0.0);
        let standard_method = match self.right {
            RightOp::Diagonal(_) => SolveMethod::ShiftedColumns,
            RightOp::Schur(_) => SolveMethod::Direct,
        };
        let mut x = post.apply(standard_solve(self.left, self.right, &(f * neg), opts.parallel)?);
        let mut res = self.residual(&x, f, f_norm);
        let mut iterations = 1;
        if self.left_terms.is_empty() {
            if !res.is_finite() {
                return Err(Error::Instability { context, best: f64::INFINITY, current: res });
            }
            if res > opts.tol {
                return Err(Error::NonConvergence { context, iterations, residual: res });
            }
            return Ok(SolveReport { x, residual_norm: res, iterations, method: standard_method });
        }
        let mut best = res;
        let mut since_best = 0;
        loop {
            if !res.is_finite() {
                return Err(Error::Instability { context, best, current: res });
            }
            if res <= opts.tol {
                return Ok(SolveReport { x, residual_norm: res, iterations, method: SolveMethod::FixedPoint });
            }
            if iterations >= opts.max_iter {
                return Err(Error::NonConvergence { context, iterations, residual: res });
            }
            let g = (f + self.coupling(&x)) * neg;
            x = post.apply(standard_solve(self.left, self.right, &g, opts.parallel)?);
            iterations += 1;
            res = self.residual(&x, f, f_norm);
            if res < best {
                best = res;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= opts.patience {
                    // Growth marks divergence; a flat window means the residual
                    // has reached its rounding floor above `tol`.
                    if res >= DIVERGENCE_FACTOR * best {
                        return Err(Error::Instability { context, best, current: res });
                    }
                    return Err(Error::NonConvergence { context, iterations, residual: best });
                }
            }
        }
    }
}

fn into_real(report: SolveReport<CMat>) -> SolveReport<Mat> {
    SolveReport {
        x: real_part(&report.x),
        residual_norm: report.residual_norm,
        iterations: report.iterations,
        method: report.method,
    }
}

fn check_square(what: &str, a: &Mat) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{what} must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    Ok(())
}

fn complexify(ms: &[Mat]) -> Vec<CMat> {
    ms.iter().map(to_complex).collect()
}

/// Solves `A X + X Aᵀ + Σ k_ij N_i X N_jᵀ = −RHS`; `N` may be empty.
pub fn solve_generalized_lyapunov(a: &Mat, n: &[Mat], k: &Mat, rhs: &Mat, opts: &SolveOptions) -> Result<SolveReport<Mat>> {
    check_square("A", a)?;
    let schur = SchurForm::new(a)?;
    solve_generalized_lyapunov_schur(&schur, n, k, rhs, opts)
}

/// As [`solve_generalized_lyapunov`] with a precomputed Schur form of `A`.
pub fn solve_generalized_lyapunov_schur(
    schur: &SchurForm,
    n: &[Mat],
    k: &Mat,
    rhs: &Mat,
    opts: &SolveOptions,
) -> Result<SolveReport<Mat>> {
    if !rhs.is_square() || rhs.nrows() != schur.dim() {
        return Err(Error::Dimension(format!(
            "right-hand side is {}x{}, expected {}x{}",
            rhs.nrows(),
            rhs.ncols(),
            schur.dim(),
            schur.dim()
        )));
    }
    let asym = asymmetry(rhs);
    if asym > 1e-10 {
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    let right_terms = complexify(n);
    let op = Operator::new(SchurOp::new(schur), RightOp::Schur(SchurOp::transposed(schur)), n, &right_terms, k)?;
    let report = op.solve(&to_complex(rhs), Post::RealSymmetric, opts, "generalized Lyapunov fixed point")?;
    Ok(into_real(report))
}

/// Solves `A X + X Dᵀ + Σ k_ij N_i X Ñ_jᵀ = −RHS` for diagonal `D = diag(d)`.
pub fn solve_generalized_sylvester(
    a: &Mat,
    d: &[C64],
    n: &[Mat],
    ntilde: &[CMat],
    k: &Mat,
    rhs: &CMat,
    opts: &SolveOptions,
) -> Result<SolveReport<CMat>> {
    check_square("A", a)?;
    let schur = SchurForm::new(a)?;
    solve_generalized_sylvester_schur(SchurOp::new(&schur), d, n, ntilde, k, rhs, opts)
}

/// As [`solve_generalized_sylvester`] with the left operator given in Schur form
/// (possibly transposed, for adjoint equations).
pub fn solve_generalized_sylvester_schur(
    left: SchurOp,
    d: &[C64],
    n: &[Mat],
    ntilde: &[CMat],
    k: &Mat,
    rhs: &CMat,
    opts: &SolveOptions,
) -> Result<SolveReport<CMat>> {
    let op = Operator::new(left, RightOp::Diagonal(d), n, ntilde, k)?;
    op.solve(rhs, Post::None, opts, "generalized Sylvester fixed point")
}

/// Solves the real mixed equation `L X + X M + Σ k_ij P_i X R_jᵀ = −RHS` where
/// `L` and `M` are (possibly transposed) real matrices given by Schur forms.
pub fn solve_mixed_sylvester_schur(
    left: SchurOp,
    right: SchurOp,
    p: &[Mat],
    r: &[Mat],
    k: &Mat,
    rhs: &Mat,
    opts: &SolveOptions,
) -> Result<SolveReport<Mat>> {
    let right_terms = complexify(r);
    let op = Operator::new(left, RightOp::Schur(right), p, &right_terms, k)?;
    let report = op.solve(&to_complex(rhs), Post::Real, opts, "mixed Sylvester fixed point")?;
    Ok(into_real(report))
}

/// Solves `A X + X Âᵀ + Σ k_ij N_i X N̂_jᵀ = −RHS` (the cross-Gramian equation).
pub fn solve_mixed_sylvester(
    a: &Mat,
    ahat: &Mat,
    n: &[Mat],
    nhat: &[Mat],
    k: &Mat,
    rhs: &Mat,
    opts: &SolveOptions,
) -> Result<SolveReport<Mat>> {
    check_square("A", a)?;
    check_square("Â", ahat)?;
    let sa = SchurForm::new(a)?;
    let sh = SchurForm::new(ahat)?;
    solve_mixed_sylvester_schur(SchurOp::new(&sa), SchurOp::transposed(&sh), n, nhat, k, rhs, opts)
}

/// Dense Kronecker solve of `A X + X Dᵀ + Σ k_ij N_i X Ñ_jᵀ = −RHS`.
///
/// `D` is a general `r×r` matrix (pass `A` itself for a Lyapunov equation).
pub fn kronecker_oracle(a: &Mat, d: &CMat, n: &[Mat], ntilde: &[CMat], k: &Mat, rhs: &CMat) -> Result<CMat> {
    check_square("A", a)?;
    let nn = a.nrows();
    let r = d.nrows();
    if !d.is_square() || rhs.shape() != (nn, r) {
        return Err(Error::Dimension(format!(
            "D is {}x{} and RHS is {}x{} for A of order {nn}",
            d.nrows(),
            d.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    if nn * r > KRONECKER_CAP {
        return Err(Error::SizeCap {
            what: "Kronecker system order n*r",
            size: nn * r,
            cap: KRONECKER_CAP,
            hint: "use the Schur-based solvers",
        });
    }
    if n.len() != ntilde.len() || (!n.is_empty() && k.shape() != (n.len(), n.len())) {
        return Err(Error::Dimension("coupling lists and covariance disagree in length".into()));
    }
    let ac = to_complex(a);
    let eye_r = CMat::identity(r, r);
    let eye_n = CMat::identity(nn, nn);
    let mut op = eye_r.kronecker(&ac) + d.kronecker(&eye_n);
    for (i, ni) in n.iter().enumerate() {
        let nic = to_complex(ni);
        for (j, nj) in ntilde.iter().enumerate() {
            if k[(i, j)] != 0.0 {
                op += nj.kronecker(&nic) * C64::new(k[(i, j)], 0.0);
            }
        }
    }
    let cond = crate::linalg::ccond2(&op);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular { what: "Kronecker operator", cond });
    }
    let b = DVector::from_iterator(nn * r, rhs.iter().map(|z| -*z));
    let x = op.lu().solve(&b).ok_or(Error::Singular { what: "Kronecker operator", cond })?;
    Ok(CMat::from_column_slice(nn, r, x.as_slice()))
}

/// Real-valued convenience wrapper around [`kronecker_oracle`].
pub fn kronecker_oracle_real(a: &Mat, d: &Mat, n: &[Mat], ntilde: &[Mat], k: &Mat, rhs: &Mat) -> Result<Mat> {
    if !is_finite(a) || !is_finite(d) || !is_finite(rhs) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }
    let x = kronecker_oracle(a, &to_complex(d), n, &complexify(ntilde), k, &to_complex(rhs))?;
    Ok(real_part(&x))
}

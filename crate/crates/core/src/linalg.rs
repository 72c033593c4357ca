//! Dense linear-algebra helpers shared by the solvers.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Complex products
//! of large operands are routed through four real GEMMs because the generic
//! complex kernel is more than an order of magnitude slower than the real one.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type C64 = Complex<f64>;

/// Work threshold (rows * inner * cols) above which complex products are split.
const SPLIT_GEMM_WORK: usize = 1 << 15;

pub fn to_complex(a: &Mat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

pub fn split(a: &CMat) -> (Mat, Mat) {
    (a.map(|z| z.re), a.map(|z| z.im))
}

pub fn join(re: &Mat, im: &Mat) -> CMat {
    re.zip_map(im, C64::new)
}

pub fn real_part(a: &CMat) -> Mat {
    a.map(|z| z.re)
}

pub fn cmul(a: &CMat, b: &CMat) -> CMat {
    if a.nrows() * a.ncols() * b.ncols() < SPLIT_GEMM_WORK {
        return a * b;
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join(&re, &im)
}

/// Real times complex.
pub fn rcmul(a: &Mat, b: &CMat) -> CMat {
    let (br, bi) = split(b);
    join(&(a * br), &(a * bi))
}

/// Real transpose times complex: `aᵀ b`.
pub fn rtcmul(a: &Mat, b: &CMat) -> CMat {
    let (br, bi) = split(b);
    join(&a.tr_mul(&br), &a.tr_mul(&bi))
}

/// Complex times real.
pub fn crmul(a: &CMat, b: &Mat) -> CMat {
    let (ar, ai) = split(a);
    join(&(ar * b), &(ai * b))
}

/// Complex times real transpose: `a bᵀ`.
pub fn crtmul(a: &CMat, b: &Mat) -> CMat {
    let (ar, ai) = split(a);
    join(&(ar * b.transpose()), &(ai * b.transpose()))
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn is_finite(a: &Mat) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// 2-norm condition number via singular values; `inf` for singular input.
pub fn cond2(a: &Mat) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn ccond2(a: &CMat) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Relative asymmetry `‖a − aᵀ‖_F / ‖a‖_F` (0 for the zero matrix).
pub fn asymmetry(a: &Mat) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &Mat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Block-diagonal concatenation.
pub fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn hcat(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Eigenvalues of a general real matrix (Hessenberg QR with aggressive
/// deflation and exceptional shifts).
pub fn eigenvalues(a: &Mat) -> Result<Vec<C64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("eigenvalues need a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if !is_finite(a) {
        return Err(Error::Decomposition("matrix has non-finite entries".into()));
    }
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let values = m
        .eigenvalues()
        .map_err(|e| Error::Decomposition(format!("eigenvalue iteration failed: {e:?}")))?;
    Ok(values.into_iter().map(|z| C64::new(z.re, z.im)).collect())
}

/// Largest real part of the eigenvalues of `a`.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    if a.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Complex Schur form `a = U T Uᴴ` of a real square matrix, `T` upper triangular.
///
/// Obtained from the real Schur form by rotating each 2×2 diagonal block to
/// triangular form. Eigenvalues of a 2×2 block with a complex pair are stored
/// as exact conjugates, so conjugate pairs keep identical real parts.
#[derive(Debug, Clone)]
pub struct SchurForm {
    a: Mat,
    u: CMat,
    t: CMat,
    scale: f64,
}

impl SchurForm {
    pub fn new(a: &Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "Schur decomposition needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !is_finite(a) {
            return Err(Error::Decomposition("matrix has non-finite entries".into()));
        }
        let n = a.nrows();
        if n == 0 {
            return Ok(Self { a: a.clone(), u: CMat::zeros(0, 0), t: CMat::zeros(0, 0), scale: 0.0 });
        }
        let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 100 * n.max(10))
            .ok_or_else(|| Error::Decomposition("real Schur iteration did not converge".into()))?;
        let (q, t_real) = schur.unpack();
        let mut u = to_complex(&q);
        let mut t = to_complex(&t_real);
        for j in 0..n {
            for i in (j + 2)..n {
                t[(i, j)] = C64::new(0.0, 0.0);
            }
        }

        let mut m = n - 1;
        while m >= 1 {
            let sub = t_real[(m, m - 1)];
            let scale = t_real[(m - 1, m - 1)].abs() + t_real[(m, m)].abs();
            if sub.abs() <= f64::EPSILON * scale || sub == 0.0 {
                t[(m, m - 1)] = C64::new(0.0, 0.0);
                m -= 1;
                continue;
            }
            if m >= 2 {
                let above = t_real[(m - 1, m - 2)];
                let above_scale = t_real[(m - 2, m - 2)].abs() + t_real[(m - 1, m - 1)].abs();
                if above.abs() > f64::EPSILON * above_scale {
                    return Err(Error::Decomposition(
                        "real Schur form has overlapping 2x2 blocks".into(),
                    ));
                }
            }
            let (a11, a12, a21, a22) = (
                t_real[(m - 1, m - 1)],
                t_real[(m - 1, m)],
                t_real[(m, m - 1)],
                t_real[(m, m)],
            );
            let p = 0.5 * (a11 + a22);
            let disc = 0.25 * (a11 - a22).powi(2) + a12 * a21;
            let (mu0, mu1) = if disc < 0.0 {
                let q = (-disc).sqrt();
                (C64::new(p, q), C64::new(p, -q))
            } else {
                let q = disc.sqrt();
                (C64::new(p + q, 0.0), C64::new(p - q, 0.0))
            };
            let x = mu0 - C64::new(a22, 0.0);
            let r = (x.norm_sqr() + a21 * a21).sqrt();
            let c = x / r;
            let s = C64::new(a21 / r, 0.0);
            // G = [[c̄, s̄], [−s, c]], applied as T ← G T Gᴴ and U ← U Gᴴ.
            let g = [[c.conj(), s.conj()], [-s, c]];
            for col in (m - 1)..n {
                let x0 = t[(m - 1, col)];
                let x1 = t[(m, col)];
                t[(m - 1, col)] = g[0][0] * x0 + g[0][1] * x1;
                t[(m, col)] = g[1][0] * x0 + g[1][1] * x1;
            }
            let gh = [[g[0][0].conj(), g[1][0].conj()], [g[0][1].conj(), g[1][1].conj()]];
            for row in 0..=m {
                let x0 = t[(row, m - 1)];
                let x1 = t[(row, m)];
                t[(row, m - 1)] = x0 * gh[0][0] + x1 * gh[1][0];
                t[(row, m)] = x0 * gh[0][1] + x1 * gh[1][1];
            }
            for row in 0..n {
                let x0 = u[(row, m - 1)];
                let x1 = u[(row, m)];
                u[(row, m - 1)] = x0 * gh[0][0] + x1 * gh[1][0];
                u[(row, m)] = x0 * gh[0][1] + x1 * gh[1][1];
            }
            t[(m, m - 1)] = C64::new(0.0, 0.0);
            t[(m - 1, m - 1)] = mu0;
            t[(m, m)] = mu1;
            if m < 2 {
                break;
            }
            m -= 2;
        }
        let scale = t.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        Ok(Self { a: a.clone(), u, t, scale })
    }

    /// Schur form of `a − shift·I`, reusing the unitary factor.
    pub fn shifted(&self, shift: f64) -> SchurForm {
        let n = self.dim();
        let mut a = self.a.clone();
        let mut t = self.t.clone();
        for i in 0..n {
            a[(i, i)] -= shift;
            t[(i, i)] -= C64::new(shift, 0.0);
        }
        let scale = t.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        SchurForm { a, u: self.u.clone(), t, scale }
    }

    pub fn matrix(&self) -> &Mat {
        &self.a
    }

    pub fn unitary(&self) -> &CMat {
        &self.u
    }

    pub fn triangular(&self) -> &CMat {
        &self.t
    }

    /// Largest entry modulus of the triangular factor.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Eigenvalues in Schur order.
    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.dim()).map(|i| self.t[(i, i)]).collect()
    }

    /// Unit-norm right eigenvector for the `k`-th Schur eigenvalue.
    pub fn eigenvector(&self, k: usize) -> DVector<C64> {
        let y = triangular_eigenvector(&self.t, k, self.smin());
        let x = &self.u * y;
        let norm = x.norm();
        x / C64::new(norm, 0.0)
    }

    /// All eigenvectors as unit-norm columns, in the order of [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> CMat {
        let n = self.dim();
        let smin = self.smin();
        let mut y = CMat::zeros(n, n);
        for k in 0..n {
            y.set_column(k, &triangular_eigenvector(&self.t, k, smin));
        }
        let mut x = cmul(&self.u, &y);
        for mut col in x.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= C64::new(norm, 0.0);
            }
        }
        x
    }

    fn smin(&self) -> f64 {
        let tnorm = self.t.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        (f64::EPSILON * tnorm).max(f64::MIN_POSITIVE)
    }
}

fn triangular_eigenvector(t: &CMat, k: usize, smin: f64) -> DVector<C64> {
    let n = t.nrows();
    let lambda = t[(k, k)];
    let mut y = DVector::<C64>::zeros(n);
    y[k] = C64::new(1.0, 0.0);
    for i in (0..k).rev() {
        let mut s = C64::new(0.0, 0.0);
        for j in (i + 1)..=k {
            s += t[(i, j)] * y[j];
        }
        let mut denom = t[(i, i)] - lambda;
        if denom.norm() < smin {
            denom = C64::new(smin, 0.0);
        }
        y[i] = -s / denom;
    }
    y
}

/// Full eigendecomposition `a = X diag(values) X⁻¹` of a real matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<C64>,
    pub vectors: CMat,
    pub inverse: CMat,
    /// 2-norm condition number of the eigenvector matrix.
    pub cond: f64,
}

pub fn eigen_decompose(a: &Mat) -> Result<EigenDecomposition> {
    let schur = SchurForm::new(a)?;
    let x = schur.eigenvectors();
    let cond = ccond2(&x);
    let inverse = x
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { what: "eigenvector matrix", cond })?;
    Ok(EigenDecomposition { values: schur.eigenvalues(), vectors: x, inverse, cond })
}

/// Ordering of a spectrum by real part, then imaginary part, then index.
///
/// Real parts closer than `rel_tol * max|λ|` are grouped into one cluster
/// before comparing imaginary parts, so rounding noise in nearly equal real
/// parts cannot flip the order between successive iterates.
pub fn spectral_order(values: &[C64], rel_tol: f64) -> Vec<usize> {
    let scale = values.iter().fold(0.0_f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].re.total_cmp(&values[j].re).then(i.cmp(&j)));
    let mut cluster = vec![0usize; values.len()];
    for w in 1..idx.len() {
        let gap = values[idx[w]].re - values[idx[w - 1]].re;
        cluster[idx[w]] = cluster[idx[w - 1]] + usize::from(gap > rel_tol * scale);
    }
    idx.sort_by(|&i, &j| {
        cluster[i]
            .cmp(&cluster[j])
            .then(values[i].im.total_cmp(&values[j].im))
            .then(i.cmp(&j))
    });
    idx
}

pub fn sorted_spectrum(values: &[C64]) -> Vec<C64> {
    spectral_order(values, 1e-8).into_iter().map(|i| values[i]).collect()
}

//! Stochastic state-space models, validation and mean-square stability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, cond2, is_finite, sym_eigenvalues, Mat, SchurForm};
use crate::matrixeq::{solve_generalized_lyapunov_schur, SolveOptions};

/// Largest state dimension for which the `n²×n²` stability operator is formed.
pub const OPERATOR_CAP: usize = 200;
/// Largest state dimension for which `is_ms_stable` uses a dense eigensolve by default.
pub const DENSE_STABILITY_CAP: usize = 20;
/// Relative symmetry tolerance for the noise covariance.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance on negative eigenvalues of the noise covariance.
pub const PSD_TOL: f64 = 1e-12;
/// Largest accepted condition number of a weight matrix.
pub const WEIGHT_COND_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Deterministic,
    Additive,
    Multiplicative,
}

/// `dx = (A x + B1 u) dt + B2 dM` (additive) or `+ Σ N_i x dM_i` (multiplicative),
/// `y = C x`, with `E[M(t) M(t)ᵀ] = K t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Option<Mat>,
    pub n: Option<Vec<Mat>>,
    pub c: Mat,
    pub k: Mat,
    pub kind: NoiseKind,
}

impl StateSpaceModel {
    pub fn deterministic(a: Mat, b1: Mat, c: Mat) -> Result<Self> {
        Self { a, b1, b2: None, n: None, c, k: Mat::zeros(0, 0), kind: NoiseKind::Deterministic }.checked()
    }

    pub fn additive(a: Mat, b1: Mat, b2: Mat, c: Mat, k: Mat) -> Result<Self> {
        Self { a, b1, b2: Some(b2), n: None, c, k, kind: NoiseKind::Additive }.checked()
    }

    pub fn multiplicative(a: Mat, b1: Mat, n: Vec<Mat>, c: Mat, k: Mat) -> Result<Self> {
        Self { a, b1, b2: None, n: Some(n), c, k, kind: NoiseKind::Multiplicative }.checked()
    }

    /// Returns `self` if it satisfies every invariant, otherwise the violations.
    pub fn checked(self) -> Result<Self> {
        let v = validate_model(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Number of noise channels `m2` (0 for deterministic models).
    pub fn noise_dim(&self) -> usize {
        match self.kind {
            NoiseKind::Deterministic => 0,
            NoiseKind::Additive => self.b2.as_ref().map_or(0, |b| b.ncols()),
            NoiseKind::Multiplicative => self.n.as_ref().map_or(0, |n| n.len()),
        }
    }

    /// Multiplicative noise matrices; empty for the other kinds.
    pub fn noise_matrices(&self) -> &[Mat] {
        match (&self.kind, &self.n) {
            (NoiseKind::Multiplicative, Some(n)) => n,
            _ => &[],
        }
    }

    /// Covariance restricted to the multiplicative terms (0×0 otherwise).
    pub fn coupling_covariance(&self) -> Mat {
        if self.kind == NoiseKind::Multiplicative {
            self.k.clone()
        } else {
            Mat::zeros(0, 0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Dimension,
    NonFinite,
    Symmetry,
    Indefinite,
    KindAmbiguity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

/// Lists every violated model invariant. Never fails.
pub fn validate_model(model: &StateSpaceModel) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();

    let mut named: Vec<(String, &Mat)> = vec![
        ("A".into(), &model.a),
        ("B1".into(), &model.b1),
        ("C".into(), &model.c),
        ("K".into(), &model.k),
    ];
    if let Some(b2) = &model.b2 {
        named.push(("B2".into(), b2));
    }
    if let Some(ns) = &model.n {
        for (i, m) in ns.iter().enumerate() {
            named.push((format!("N{}", i + 1), m));
        }
    }
    for (name, m) in &named {
        if !is_finite(m) {
            out.push(Violation::new(NonFinite, format!("{name} has non-finite entries")));
        }
    }

    let n = model.a.nrows();
    if !model.a.is_square() {
        out.push(Violation::new(Dimension, format!("A must be square, got {}x{}", model.a.nrows(), model.a.ncols())));
    }
    if model.b1.nrows() != n {
        out.push(Violation::new(Dimension, format!("B1 has {} rows, expected {n}", model.b1.nrows())));
    }
    if model.c.ncols() != n {
        out.push(Violation::new(Dimension, format!("C has {} columns, expected {n}", model.c.ncols())));
    }
    if let Some(b2) = &model.b2 {
        if b2.nrows() != n {
            out.push(Violation::new(Dimension, format!("B2 has {} rows, expected {n}", b2.nrows())));
        }
    }
    if let Some(ns) = &model.n {
        for (i, m) in ns.iter().enumerate() {
            if m.shape() != (n, n) {
                out.push(Violation::new(
                    Dimension,
                    format!("N{} is {}x{}, expected {n}x{n}", i + 1, m.nrows(), m.ncols()),
                ));
            }
        }
    }

    let expected_kind = match (&model.b2, &model.n) {
        (None, None) => Some(NoiseKind::Deterministic),
        (Some(_), None) => Some(NoiseKind::Additive),
        (None, Some(_)) => Some(NoiseKind::Multiplicative),
        (Some(_), Some(_)) => None,
    };
    match expected_kind {
        None => out.push(Violation::new(
            KindAmbiguity,
            "both B2 and N are present; a model is either additive or multiplicative",
        )),
        Some(kind) if kind != model.kind => out.push(Violation::new(
            KindAmbiguity,
            format!("kind is {:?} but the noise data describe a {:?} model", model.kind, kind),
        )),
        _ => {}
    }

    let m2 = match expected_kind {
        Some(NoiseKind::Additive) => model.b2.as_ref().map(|b| b.ncols()),
        Some(NoiseKind::Multiplicative) => model.n.as_ref().map(|n| n.len()),
        Some(NoiseKind::Deterministic) => Some(0),
        None => None,
    };
    if let Some(m2) = m2 {
        if model.k.shape() != (m2, m2) {
            out.push(Violation::new(
                Dimension,
                format!("K is {}x{}, expected {m2}x{m2}", model.k.nrows(), model.k.ncols()),
            ));
        }
    }

    let k = &model.k;
    if k.is_square() && !k.is_empty() && is_finite(k) {
        let asym = asymmetry(k);
        if asym > SYMMETRY_TOL {
            out.push(Violation::new(Symmetry, format!("K is not symmetric (relative asymmetry {asym:.3e})")));
        } else {
            let ev = sym_eigenvalues(k);
            let norm = ev.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let min = ev.first().copied().unwrap_or(0.0);
            if min < -PSD_TOL * norm {
                out.push(Violation::new(
                    Indefinite,
                    format!("K is not positive semidefinite (min eigenvalue {min:.3e})"),
                ));
            }
        }
    }
    out
}

/// Invertible weight matrix `𝒲`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Mat);

impl WeightMatrix {
    pub fn new(w: Mat) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension(format!("weight must be square, got {}x{}", w.nrows(), w.ncols())));
        }
        if !is_finite(&w) {
            return Err(Error::InvalidArgument("weight has non-finite entries".into()));
        }
        let cond = cond2(&w);
        if !(cond <= WEIGHT_COND_CAP) {
            return Err(Error::Singular { what: "weight matrix", cond });
        }
        Ok(Self(w))
    }

    pub fn identity(m: usize) -> Self {
        Self(Mat::identity(m, m))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `𝒲𝒲ᵀ`
    pub fn gram(&self) -> Mat {
        &self.0 * self.0.transpose()
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(&self.0 * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMethod {
    DenseEig,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub spectral_abscissa: f64,
    pub stable: bool,
    pub method: StabilityMethod,
}

impl StabilityReport {
    fn new(spectral_abscissa: f64, method: StabilityMethod) -> Self {
        Self { spectral_abscissa, stable: spectral_abscissa < 0.0, method }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityOptions {
    /// `None` selects the dense path for `n ≤ dense_cap`.
    pub method: Option<StabilityMethod>,
    pub dense_cap: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self { method: None, dense_cap: DENSE_STABILITY_CAP, max_iter: 300, tol: 1e-10 }
    }
}

/// `I⊗A + A⊗I + Σ k_ij N_i⊗N_j`
pub fn ms_stability_operator(model: &StateSpaceModel) -> Result<Mat> {
    ms_stability_operator_capped(model, OPERATOR_CAP)
}

pub fn ms_stability_operator_capped(model: &StateSpaceModel, cap: usize) -> Result<Mat> {
    let n = model.state_dim();
    if n > cap {
        return Err(Error::SizeCap {
            what: "stability operator order n",
            size: n,
            cap,
            hint: "use the power-iteration stability check",
        });
    }
    let eye = Mat::identity(n, n);
    let mut op = eye.kronecker(&model.a) + model.a.kronecker(&eye);
    let ns = model.noise_matrices();
    for (i, ni) in ns.iter().enumerate() {
        for (j, nj) in ns.iter().enumerate() {
            let kij = model.k[(i, j)];
            if kij != 0.0 {
                op += ni.kronecker(nj) * kij;
            }
        }
    }
    Ok(op)
}

pub fn is_ms_stable(model: &StateSpaceModel) -> Result<StabilityReport> {
    is_ms_stable_with(model, &StabilityOptions::default())
}

pub fn is_ms_stable_with(model: &StateSpaceModel, opts: &StabilityOptions) -> Result<StabilityReport> {
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let n = model.state_dim();
    if n == 0 {
        return Ok(StabilityReport::new(f64::NEG_INFINITY, StabilityMethod::DenseEig));
    }
    if model.kind != NoiseKind::Multiplicative {
        let abscissa = crate::linalg::spectral_abscissa(&model.a)?;
        return Ok(StabilityReport::new(abscissa, StabilityMethod::DenseEig));
    }
    let method = opts.method.unwrap_or(if n <= opts.dense_cap {
        StabilityMethod::DenseEig
    } else {
        StabilityMethod::PowerIteration
    });
    match method {
        StabilityMethod::DenseEig => {
            let op = ms_stability_operator(model)?;
            let abscissa = crate::linalg::spectral_abscissa(&op)?;
            Ok(StabilityReport::new(abscissa, StabilityMethod::DenseEig))
        }
        StabilityMethod::PowerIteration => {
            let abscissa = implicit_abscissa(model, opts)?;
            Ok(StabilityReport::new(abscissa, StabilityMethod::PowerIteration))
        }
    }
}

/// Abscissa of `L(X) = A X + X Aᵀ + Σ k_ij N_i X N_jᵀ` without forming `L`.
///
/// `L` is resolvent positive on the PSD cone, so its abscissa `β` is a real
/// eigenvalue and dominates the spectrum of `(μ − L)⁻¹` for any `μ > β`.
/// Inverse iteration with that resolvent starts from a certified upper bound
/// `μ₀ ≥ β` and moves the shift towards the running estimate. Each resolvent
/// application is a generalized Lyapunov solve with `A − μ/2·I`.
fn implicit_abscissa(model: &StateSpaceModel, opts: &StabilityOptions) -> Result<f64> {
    let n = model.state_dim();
    let ns = model.noise_matrices();
    let k = &model.k;
    let log_norm = sym_eigenvalues(&crate::linalg::symmetrize(&model.a)).last().copied().unwrap_or(0.0);
    let norms: Vec<f64> = ns.iter().map(|m| m.clone().singular_values().max()).collect();
    let mut coupling_bound = 0.0;
    for i in 0..ns.len() {
        for j in 0..ns.len() {
            coupling_bound += k[(i, j)].abs() * norms[i] * norms[j];
        }
    }
    let scale = (2.0 * model.a.norm() + coupling_bound).max(f64::MIN_POSITIVE);
    let mu0 = 2.0 * log_norm + coupling_bound + 1e-2 * scale;
    let schur = SchurForm::new(&model.a)?;
    let inner = SolveOptions { tol: 1e-10, max_iter: 5000, patience: 25, parallel: false };

    let mut mu = mu0;
    let mut safe_mu = mu0;
    let mut theta = 0.5;
    let mut x = Mat::identity(n, n) / (n as f64).sqrt();
    let mut prev: Option<f64> = None;
    let mut last = f64::NAN;
    for _ in 0..opts.max_iter {
        let shifted = schur.shifted(0.5 * mu);
        let y = match solve_generalized_lyapunov_schur(&shifted, ns, k, &x, &inner) {
            Ok(rep) => rep.x,
            Err(Error::Instability { .. }) | Err(Error::NonConvergence { .. }) if mu < safe_mu => {
                // The shift passed the abscissa estimate from below; retreat.
                mu = safe_mu;
                theta = 0.5 * (1.0 + theta);
                continue;
            }
            Err(e) => return Err(e),
        };
        let rho = x.dot(&y);
        if !(rho > 0.0) || !rho.is_finite() {
            // Below the abscissa the resolvent is no longer positive and the
            // solve can still succeed; retreat as above.
            if mu < safe_mu {
                mu = safe_mu;
                theta = 0.5 * (1.0 + theta);
                continue;
            }
            return Err(Error::NonConvergence { context: "implicit stability power iteration", iterations: 0, residual: rho });
        }
        safe_mu = mu;
        let beta = mu - 1.0 / rho;
        last = beta;
        x = &y / y.norm();
        if let Some(p) = prev {
            if (beta - p).abs() <= opts.tol * beta.abs().max(1e-8 * scale) {
                return Ok(beta);
            }
        }
        prev = Some(beta);
        let gap = (mu - beta).max(0.0);
        mu = beta + (theta * gap).max(1e-3 * (mu0 - beta));
    }
    Err(Error::NonConvergence {
        context: "implicit stability power iteration",
        iterations: opts.max_iter,
        residual: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    fn scalar_mult(a: f64, n: f64, k: f64) -> StateSpaceModel {
        StateSpaceModel::multiplicative(scalar(a), scalar(1.0), vec![scalar(n)], scalar(1.0), scalar(k)).unwrap()
    }

    #[test]
    fn scalar_operator() {
        let op = ms_stability_operator(&scalar_mult(-1.0, 1.0, 1.0)).unwrap();
        assert_eq!(op.shape(), (1, 1));
        assert!((op[(0, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn kronecker_sum_spectrum() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let m = StateSpaceModel::deterministic(a, Mat::zeros(2, 1), Mat::zeros(1, 2)).unwrap();
        let op = ms_stability_operator(&m).unwrap();
        let mut ev: Vec<f64> = op.diagonal().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_eq!(ev, vec![-4.0, -3.0, -3.0, -2.0]);
    }

    #[test]
    fn operator_shape_and_cap() {
        let m = StateSpaceModel::deterministic(-Mat::identity(3, 3), Mat::zeros(3, 1), Mat::zeros(1, 3)).unwrap();
        assert_eq!(ms_stability_operator(&m).unwrap().shape(), (9, 9));
        assert!(matches!(ms_stability_operator_capped(&m, 2), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn scalar_stability() {
        let r = is_ms_stable(&scalar_mult(-1.0, 1.0, 1.0)).unwrap();
        assert!(r.stable);
        assert!((r.spectral_abscissa + 1.0).abs() < 1e-14);
        let r = is_ms_stable(&scalar_mult(-1.0, 2f64.sqrt(), 1.0)).unwrap();
        assert!(r.spectral_abscissa.abs() < 1e-14);
        assert_eq!(r.stable, r.spectral_abscissa < 0.0);
        let d = StateSpaceModel::deterministic(
            Mat::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])),
            Mat::zeros(2, 1),
            Mat::zeros(1, 2),
        )
        .unwrap();
        let r = is_ms_stable(&d).unwrap();
        assert!(r.stable);
        assert!((r.spectral_abscissa + 1.0).abs() < 1e-14);
    }

    #[test]
    fn implicit_matches_closed_form_scalar() {
        let opts = StabilityOptions { method: Some(StabilityMethod::PowerIteration), ..Default::default() };
        let r = is_ms_stable_with(&scalar_mult(-1.0, 0.5, 1.0), &opts).unwrap();
        assert!((r.spectral_abscissa + 1.75).abs() < 1e-9, "{r:?}");
        assert_eq!(r.method, StabilityMethod::PowerIteration);
    }

    #[test]
    fn asymmetric_covariance_violation() {
        let m = StateSpaceModel {
            a: -Mat::identity(2, 2),
            b1: Mat::zeros(2, 1),
            b2: Some(Mat::zeros(2, 2)),
            n: None,
            c: Mat::zeros(1, 2),
            k: Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.2, 1.0]),
            kind: NoiseKind::Additive,
        };
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Symmetry);
    }

    #[test]
    fn ambiguous_kind_violation() {
        let m = StateSpaceModel {
            a: -Mat::identity(2, 2),
            b1: Mat::zeros(2, 1),
            b2: Some(Mat::zeros(2, 1)),
            n: Some(vec![Mat::zeros(2, 2)]),
            c: Mat::zeros(1, 2),
            k: Mat::identity(1, 1),
            kind: NoiseKind::Additive,
        };
        let v = validate_model(&m);
        assert!(v.iter().any(|x| x.kind == ViolationKind::KindAmbiguity));
    }

    #[test]
    fn indefinite_and_nonfinite() {
        let m = StateSpaceModel {
            a: Mat::from_row_slice(1, 1, &[f64::NAN]),
            b1: Mat::zeros(1, 1),
            b2: Some(Mat::zeros(1, 2)),
            n: None,
            c: Mat::zeros(1, 1),
            k: Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            kind: NoiseKind::Additive,
        };
        let v = validate_model(&m);
        assert!(v.iter().any(|x| x.kind == ViolationKind::NonFinite));
        assert!(v.iter().any(|x| x.kind == ViolationKind::Indefinite));
    }

    #[test]
    fn weight_matrix_rejects_singular() {
        assert!(WeightMatrix::new(Mat::zeros(2, 2)).is_err());
        assert!(WeightMatrix::new(Mat::identity(2, 2)).is_ok());
    }
}

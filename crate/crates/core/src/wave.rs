//! Spectral-Galerkin discretization of the stochastically forced damped wave
//! equation on `[0, π]` with homogeneous Dirichlet boundary conditions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::metrics::InputSignal;
use crate::model::{NoiseKind, StateSpaceModel};

const GL_POINTS: usize = 16;
const MAX_DOUBLINGS: usize = 20;
const QUAD_TOL: f64 = 1e-12;

/// Real function on `[0, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionSpec {
    Sin { freq: f64 },
    Cos { freq: f64 },
    /// `exp(−rate·(z − center)²)`
    Gaussian { center: f64, rate: f64 },
    Constant { value: f64 },
    Product { factors: Vec<FunctionSpec> },
    /// Piecewise-linear interpolation of `(z, value)` samples, constant beyond the ends.
    Tabulated { z: Vec<f64>, values: Vec<f64> },
}

impl FunctionSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FunctionSpec::Sin { freq } => (freq * x).sin(),
            FunctionSpec::Cos { freq } => (freq * x).cos(),
            FunctionSpec::Gaussian { center, rate } => (-rate * (x - center).powi(2)).exp(),
            FunctionSpec::Constant { value } => *value,
            FunctionSpec::Product { factors } => factors.iter().map(|f| f.eval(x)).product(),
            FunctionSpec::Tabulated { z, values } => interpolate(z, values, x),
        }
    }

    /// Rough oscillation frequency, used to size quadrature panels.
    fn frequency(&self) -> f64 {
        match self {
            FunctionSpec::Sin { freq } | FunctionSpec::Cos { freq } => freq.abs(),
            FunctionSpec::Gaussian { rate, .. } => rate.abs().sqrt(),
            FunctionSpec::Constant { .. } => 0.0,
            FunctionSpec::Product { factors } => factors.iter().map(|f| f.frequency()).sum(),
            FunctionSpec::Tabulated { z, .. } => z.len() as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        let ok = match self {
            FunctionSpec::Sin { freq } | FunctionSpec::Cos { freq } => finite(*freq),
            FunctionSpec::Gaussian { center, rate } => finite(*center) && finite(*rate),
            FunctionSpec::Constant { value } => finite(*value),
            FunctionSpec::Product { factors } => {
                for f in factors {
                    f.validate()?;
                }
                true
            }
            FunctionSpec::Tabulated { z, values } => {
                z.len() == values.len()
                    && !z.is_empty()
                    && z.iter().chain(values).all(|v| v.is_finite())
                    && z.windows(2).all(|w| w[0] < w[1])
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("malformed function specification {self:?}")))
        }
    }
}

fn interpolate(z: &[f64], values: &[f64], x: f64) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    if x <= z[0] {
        return values[0];
    }
    if x >= z[z.len() - 1] {
        return values[values.len() - 1];
    }
    let hi = z.partition_point(|&t| t <= x);
    let lo = hi - 1;
    let w = (x - z[lo]) / (z[hi] - z[lo]);
    values[lo] * (1.0 - w) + values[hi] * w
}

/// Gauss-Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn composite(f: &dyn Fn(f64) -> f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let h = PI / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        let mut s = 0.0;
        for (x, w) in rule.0.iter().zip(&rule.1) {
            s += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * s;
    }
    total
}

/// `∫₀^π f(z) dz` by composite Gauss-Legendre with panel doubling.
pub fn integrate(f: &dyn Fn(f64) -> f64, frequency: f64) -> Result<f64> {
    let rule = gauss_legendre(GL_POINTS);
    let mut panels = (frequency.ceil() as usize).max(4);
    let mut prev = composite(f, panels, &rule);
    for _ in 0..MAX_DOUBLINGS {
        panels *= 2;
        let next = composite(f, panels, &rule);
        if !next.is_finite() {
            return Err(Error::Quadrature("integrand produced a non-finite value".into()));
        }
        if (next - prev).abs() < QUAD_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(format!("no convergence after {MAX_DOUBLINGS} panel doublings")))
}

/// `∫₀^π sin(m z) dz` for integer `m`.
fn sine_integral(m: i64) -> f64 {
    if m == 0 {
        0.0
    } else {
        (1.0 - if m % 2 == 0 { 1.0 } else { -1.0 }) / m as f64
    }
}

fn integer(freq: f64) -> Option<i64> {
    (freq.fract() == 0.0 && freq.abs() < 1e15).then_some(freq as i64)
}

/// `⟨f·g, sin(ℓ·)⟩_{L²(0,π)}`, with `g ≡ 1` when `weight` is `None`.
pub fn galerkin_coefficient(f: &FunctionSpec, ell: usize, weight: Option<&FunctionSpec>) -> Result<f64> {
    f.validate()?;
    if let Some(g) = weight {
        g.validate()?;
    }
    let l = ell as i64;
    if weight.is_none() {
        match f {
            FunctionSpec::Sin { freq } => {
                if let Some(v) = integer(*freq) {
                    return Ok(if v.abs() == l && l != 0 { v.signum() as f64 * PI / 2.0 } else { 0.0 });
                }
            }
            FunctionSpec::Cos { freq } => {
                if let Some(v) = integer(*freq) {
                    return Ok(0.5 * (sine_integral(l + v) + sine_integral(l - v)));
                }
            }
            FunctionSpec::Constant { value } => return Ok(value * sine_integral(l)),
            _ => {}
        }
    }
    let freq = ell as f64 + f.frequency() + weight.map_or(0.0, |g| g.frequency());
    let integrand = |z: f64| f.eval(z) * weight.map_or(1.0, |g| g.eval(z)) * (ell as f64 * z).sin();
    integrate(&integrand, freq)
}

/// Cosine moments `∫₀^π g(z) cos(m z) dz` for `m = 0..=max`.
fn cosine_moments(g: &FunctionSpec, max: usize) -> Result<Vec<f64>> {
    (0..=max)
        .map(|m| {
            let integrand = |z: f64| g.eval(z) * (m as f64 * z).cos();
            integrate(&integrand, m as f64 + g.frequency())
        })
        .collect()
}

/// `M[ℓ−1, v−1] = ⟨sin(ℓ·), g·sin(v·)⟩` for `ℓ, v = 1..=modes`, via
/// `sin a sin b = ½[cos(a−b) − cos(a+b)]`.
pub fn weighted_sine_gram(g: &FunctionSpec, modes: usize) -> Result<Mat> {
    g.validate()?;
    let moments = cosine_moments(g, 2 * modes)?;
    Ok(Mat::from_fn(modes, modes, |i, j| {
        let (l, v) = (i + 1, j + 1);
        0.5 * (moments[l.abs_diff(v)] - moments[l + v])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Position,
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mult,
    Add,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mult" => Ok(Preset::Mult),
            "add" => Ok(Preset::Add),
            other => Err(Error::InvalidArgument(format!("unknown preset '{other}' (expected 'mult' or 'add')"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mult => "mult",
            Preset::Add => "add",
        }
    }

    pub fn input(self) -> InputSignal {
        match self {
            Preset::Mult => InputSignal::Exponential { rate: -0.1 },
            Preset::Add => InputSignal::Constant { value: 1.0 },
        }
    }

    pub fn horizon(self) -> f64 {
        1.0
    }
}

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_N: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveConfig {
    pub n: usize,
    pub alpha: f64,
    pub f1: FunctionSpec,
    /// Additive noise profiles `f_{2,i}`.
    pub f2: Vec<FunctionSpec>,
    /// Multiplicative noise profiles `g_i`.
    pub g: Vec<FunctionSpec>,
    pub epsilon: f64,
    pub output: OutputKind,
    pub noise: NoiseKind,
    pub k: Mat,
}

impl WaveConfig {
    pub fn preset(preset: Preset, n: usize) -> Self {
        let k = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let bump = |rate: f64| FunctionSpec::Gaussian { center: PI / 2.0, rate };
        match preset {
            Preset::Mult => Self {
                n,
                alpha: 2.0,
                f1: FunctionSpec::Sin { freq: 3.0 },
                f2: Vec::new(),
                g: vec![bump(1.0), bump(0.5)],
                epsilon: DEFAULT_EPSILON,
                output: OutputKind::Position,
                noise: NoiseKind::Multiplicative,
                k,
            },
            Preset::Add => Self {
                n,
                alpha: 0.1,
                f1: FunctionSpec::Cos { freq: 2.0 },
                f2: vec![
                    FunctionSpec::Sin { freq: 1.0 },
                    FunctionSpec::Product { factors: vec![FunctionSpec::Sin { freq: 1.0 }, bump(1.0)] },
                ],
                g: Vec::new(),
                epsilon: DEFAULT_EPSILON,
                output: OutputKind::Position,
                noise: NoiseKind::Additive,
                k,
            },
        }
    }

    pub fn with_output(mut self, output: OutputKind) -> Self {
        self.output = output;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("n must be a positive even integer, got {}", self.n)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < PI / 2.0) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in (0, π/2), got {}", self.epsilon)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        let m2 = match self.noise {
            NoiseKind::Additive if !self.f2.is_empty() && self.g.is_empty() => self.f2.len(),
            NoiseKind::Multiplicative if !self.g.is_empty() && self.f2.is_empty() => self.g.len(),
            NoiseKind::Deterministic if self.f2.is_empty() && self.g.is_empty() => 0,
            kind => {
                return Err(Error::InvalidArgument(format!(
                    "{kind:?} noise needs exactly the matching profile list ({} additive, {} multiplicative given)",
                    self.f2.len(),
                    self.g.len()
                )))
            }
        };
        if self.k.shape() != (m2, m2) {
            return Err(Error::Dimension(format!("K is {}x{}, expected {m2}x{m2}", self.k.nrows(), self.k.ncols())));
        }
        self.f1.validate()?;
        for f in self.f2.iter().chain(&self.g) {
            f.validate()?;
        }
        Ok(())
    }
}

fn forcing_column(f: &FunctionSpec, modes: usize) -> Result<Mat> {
    let scale = (2.0 / PI).sqrt();
    let mut b = Mat::zeros(2 * modes, 1);
    for l in 1..=modes {
        b[(2 * l - 1, 0)] = scale * galerkin_coefficient(f, l, None)?;
    }
    Ok(b)
}

pub fn build_wave_model(config: &WaveConfig) -> Result<StateSpaceModel> {
    config.validate()?;
    let n = config.n;
    let modes = n / 2;

    let mut a = Mat::zeros(n, n);
    for l in 1..=modes {
        let i = 2 * (l - 1);
        a[(i, i + 1)] = l as f64;
        a[(i + 1, i)] = -(l as f64);
        a[(i + 1, i + 1)] = -config.alpha;
    }

    let b1 = forcing_column(&config.f1, modes)?;

    let mut c = Mat::zeros(1, n);
    let eps = config.epsilon;
    for l in 1..=modes {
        let lf = l as f64;
        // cos(ℓ(π/2 − ε)) − cos(ℓ(π/2 + ε)) = 2 sin(ℓπ/2) sin(ℓε)
        let diff = 2.0 * (lf * PI / 2.0).sin() * (lf * eps).sin();
        match config.output {
            OutputKind::Position => c[(0, 2 * l - 2)] = diff / ((2.0 * PI).sqrt() * lf * lf * eps),
            OutputKind::Velocity => c[(0, 2 * l - 1)] = diff / ((2.0 * PI).sqrt() * lf * eps),
        }
    }

    match config.noise {
        NoiseKind::Deterministic => StateSpaceModel::deterministic(a, b1, c),
        NoiseKind::Additive => {
            let mut b2 = Mat::zeros(n, config.f2.len());
            for (i, f) in config.f2.iter().enumerate() {
                b2.set_column(i, &forcing_column(f, modes)?.column(0));
            }
            StateSpaceModel::additive(a, b1, b2, c, config.k.clone())
        }
        NoiseKind::Multiplicative => {
            let mut ns = Vec::with_capacity(config.g.len());
            for g in &config.g {
                let gram = weighted_sine_gram(g, modes)?;
                let mut m = Mat::zeros(n, n);
                for l in 1..=modes {
                    for v in 1..=modes {
                        m[(2 * l - 1, 2 * v - 2)] = 2.0 / (PI * v as f64) * gram[(l - 1, v - 1)];
                    }
                }
                ns.push(m);
            }
            StateSpaceModel::multiplicative(a, b1, ns, c, config.k.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_system_matrix() {
        let m = build_wave_model(&WaveConfig::preset(Preset::Mult, 4)).unwrap();
        let expected = Mat::from_row_slice(
            4,
            4,
            &[0.0, 1.0, 0.0, 0.0, -1.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, -2.0, -2.0],
        );
        assert_eq!(m.a, expected);
    }

    #[test]
    fn sine_forcing_has_single_entry() {
        let m = build_wave_model(&WaveConfig::preset(Preset::Mult, 8)).unwrap();
        for k in 0..8 {
            if k == 5 {
                assert!((m.b1[(k, 0)] - (PI / 2.0).sqrt()).abs() < 1e-14);
            } else {
                assert_eq!(m.b1[(k, 0)], 0.0);
            }
        }
    }

    #[test]
    fn position_output_first_entry() {
        let eps = 0.05;
        let m = build_wave_model(&WaveConfig::preset(Preset::Add, 6).with_epsilon(eps)).unwrap();
        let expected = 2.0 * eps.sin() / ((2.0 * PI).sqrt() * eps);
        assert!((m.c[(0, 0)] - expected).abs() < 1e-15);
        let literal = ((PI / 2.0 - eps).cos() - (PI / 2.0 + eps).cos()) / ((2.0 * PI).sqrt() * eps);
        assert!((m.c[(0, 0)] - literal).abs() < 1e-14);
    }

    #[test]
    fn analytic_coefficients() {
        let s3 = FunctionSpec::Sin { freq: 3.0 };
        assert!((galerkin_coefficient(&s3, 3, None).unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(galerkin_coefficient(&FunctionSpec::Sin { freq: 1.0 }, 2, None).unwrap(), 0.0);
        // The analytic shortcuts agree with quadrature.
        let prod = FunctionSpec::Product { factors: vec![FunctionSpec::Cos { freq: 2.0 }, FunctionSpec::Constant { value: 1.0 }] };
        for l in 1..6 {
            let a = galerkin_coefficient(&FunctionSpec::Cos { freq: 2.0 }, l, None).unwrap();
            let q = galerkin_coefficient(&prod, l, None).unwrap();
            assert!((a - q).abs() < 1e-12, "{l}: {a} vs {q}");
        }
    }

    #[test]
    fn weighted_quadrature_is_refinement_stable() {
        let g = FunctionSpec::Gaussian { center: PI / 2.0, rate: 1.0 };
        let f = FunctionSpec::Sin { freq: 1.0 };
        let integrand = |z: f64| f.eval(z) * g.eval(z) * z.sin();
        let rule = gauss_legendre(GL_POINTS);
        let coarse = composite(&integrand, 64, &rule);
        let fine = composite(&integrand, 128, &rule);
        assert!((coarse - fine).abs() < 1e-12);
        let v = galerkin_coefficient(&f, 1, Some(&g)).unwrap();
        assert!((v - fine).abs() < 1e-12);
        let gram = weighted_sine_gram(&g, 5).unwrap();
        for l in 1..=5 {
            for w in 1..=5 {
                let direct = galerkin_coefficient(&FunctionSpec::Sin { freq: w as f64 }, l, Some(&g)).unwrap();
                assert!((gram[(l - 1, w - 1)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(GL_POINTS);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = WaveConfig::preset(Preset::Add, 5);
        assert!(build_wave_model(&c).is_err());
        c.n = 6;
        c.epsilon = 2.0;
        assert!(build_wave_model(&c).is_err());
        let mut c = WaveConfig::preset(Preset::Add, 6);
        c.g = vec![FunctionSpec::Constant { value: 1.0 }];
        assert!(build_wave_model(&c).is_err());
    }
}

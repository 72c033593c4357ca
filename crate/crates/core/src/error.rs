use nalgebra::Complex;
use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("{what} of size {size} exceeds the configured cap {cap}; {hint}")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
        hint: &'static str,
    },

    #[error("iteration diverged ({context}): residual grew from {best:.3e} to {current:.3e}")]
    Instability {
        context: &'static str,
        best: f64,
        current: f64,
    },

    #[error("{context} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("shift collision in column {column}: shift {shift} is (numerically) the negative of an eigenvalue")]
    ShiftCollision { column: usize, shift: Complex<f64> },

    #[error("{what} is numerically singular (condition number {cond:.3e})")]
    Singular { what: &'static str, cond: f64 },

    #[error("rank deficiency: expected rank {expected}, detected {rank}")]
    RankDeficient { expected: usize, rank: usize },

    #[error("spectral decomposition failed: {0}")]
    Decomposition(String),

    #[error("reduced iterate lost mean-square stability at iteration {iteration} (abscissa {abscissa:.3e})")]
    StabilityLoss {
        iteration: usize,
        abscissa: f64,
        history: Vec<Vec<Complex<f64>>>,
    },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    Asymmetric { asymmetry: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("simulation diverged on path {path} at step {step}")]
    Divergence { path: usize, step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Validation(_) => "validation",
            Error::SizeCap { .. } => "size_cap",
            Error::Instability { .. } => "instability",
            Error::NonConvergence { .. } => "non_convergence",
            Error::ShiftCollision { .. } => "shift_collision",
            Error::Singular { .. } => "singular",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Decomposition(_) => "decomposition",
            Error::StabilityLoss { .. } => "stability_loss",
            Error::Indefinite { .. } => "indefinite",
            Error::Asymmetric { .. } => "asymmetric",
            Error::Quadrature(_) => "quadrature",
            Error::Divergence { .. } => "divergence",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

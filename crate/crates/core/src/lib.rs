//! Optimal model order reduction for linear stochastic systems with additive
//! or multiplicative noise.

pub mod error;
pub mod io;
pub mod irka;
pub mod linalg;
pub mod matrixeq;
pub mod metrics;
pub mod model;
pub mod sdesim;
pub mod wave;

pub use error::{Error, Result};
pub use linalg::{CMat, Mat, C64};
pub use model::{NoiseKind, StateSpaceModel, WeightMatrix};

//! Likelihood-ratio regularized quantile regression for conformal prediction
//! under covariate shift, with split and weighted conformal baselines.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix `f64`, with `F32*` variants for single precision.

pub mod baselines;
pub mod basis;
pub mod bundle;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod loss;
pub mod predictors;
pub mod ratio;
pub mod scalar;
pub mod solver;
pub mod tuning;

pub use error::{LrqrError, Result};
pub use scalar::Scalar;

pub type Alpha = loss::Alpha<f64>;
pub type Basis = basis::Basis<f64>;
pub type CalibrationBundle = bundle::CalibrationBundle<f64>;
pub type LrqrConfig = solver::LrqrConfig<f64>;
pub type ThresholdModel = solver::ThresholdModel<f64>;
pub type SolveDiagnostics = solver::SolveDiagnostics<f64>;
pub type ModelFile = solver::ModelFile<f64>;
pub type TuneResult = tuning::TuneResult<f64>;
pub type RatioModel = ratio::RatioModel<f64>;
pub type SyntheticSpec = data::SyntheticSpec<f64>;
pub type Dataset = data::Dataset<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type BenchConfig = experiment::BenchConfig<f64>;

pub type F32Alpha = loss::Alpha<f32>;
pub type F32Basis = basis::Basis<f32>;
pub type F32CalibrationBundle = bundle::CalibrationBundle<f32>;
pub type F32LrqrConfig = solver::LrqrConfig<f32>;
pub type F32ThresholdModel = solver::ThresholdModel<f32>;
pub type F32Matrix = linalg::Matrix<f32>;

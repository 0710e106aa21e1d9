//! Activity-weight duality toolkit: trains small fully connected classifiers
//! and decomposes their generalization gap along Hessian eigendirections.
//!
//! Everything numeric is generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the analysis tolerances assume.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod multilearner;
pub mod network;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod duality;
pub mod trainer;


pub use error::{Error, Result};

pub type Matrix = linalg::Matrix<f64>;
pub type SymmetricMatrix = linalg::SymmetricMatrix<f64>;
pub type EigenBasis = linalg::EigenBasis<f64>;
pub type LabeledSet = dataset::LabeledSet<f64>;
pub type Mlp = network::Mlp<f64>;
pub type ForwardTrace = network::ForwardTrace<f64>;
pub type LayerHessian = network::LayerHessian<f64>;
pub type TrainResult = trainer::TrainResult<f64>;
pub type DualShiftRecord = duality::DualShiftRecord<f64>;
pub type DirectionSpectrum = duality::DirectionSpectrum<f64>;
pub type AnalysisReport = duality::AnalysisReport<f64>;

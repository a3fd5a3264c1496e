pub mod config;
pub mod error;
pub mod geometry;
pub mod green;
pub mod kato;
pub mod kernels;
pub mod levy_models;
pub mod montecarlo;
pub mod perturbation;
pub mod quadrature;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use geometry::C11Set;
pub use green::{GreenFunction, StableGreen};
pub use kato::{DriftFamily, DriftField};
pub use kernels::KernelTable;
pub use levy_models::{Family, LevyModel, ScalingReport};

//! Adaptive nonparametric estimation of the drift of a scalar diffusion
//! driven by an exogenous explanatory process, from many independent paths.
//!
//! The drift splits as `a(x) + b(y)`. Both parts are expanded on orthonormal
//! bases, fitted jointly by constrained least squares, and the pair of
//! dimensions is picked by a penalized contrast.

pub mod bases;
pub mod design;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod selection;

pub use bases::{BasisFamily, DeltaVector};
pub use design::{DesignCache, DesignOptions, DesignSystem, DimPair, Normalization, TimeRule};
pub use error::{Error, Result};
pub use estimator::{solve_constrained, FitResiduals, FitResult, StabilityMode};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentReport, QuantileBox};
pub use sde::{ExplanatorySpec, GridSpec, ModelId, PathSample, SdeModel, YType};
pub use selection::{select_adaptive, select_oracle, ModelScan, SelectionConfig, SelectionResult};

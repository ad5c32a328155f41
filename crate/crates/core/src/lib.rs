//! Target-enhanced SAR image formation from undersampled 2D-Fourier measurements.
//!
//! The library alternates three stages: semantics-weighted iteratively
//! reweighted l1 image recovery (FISTA inner solver), Markov-random-field
//! semantic label inference (FCM initialization + ICM), and constrained
//! Gamma feature estimation. Classical sparse-imaging baselines (zero-fill
//! adjoint, plain l1, smoothed TV, magnitude-reweighted l1) are provided
//! for comparison, together with synthetic scene generation and metrics.
//!
//! All numerics are generic over the scalar type; `f64` aliases are
//! exported at the crate root for the common case.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod semantics;
pub mod solver;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// `f64` concrete aliases for the main domain types.
pub type ComplexImage64 = model::ComplexImage<f64>;
pub type PhaseHistory64 = model::PhaseHistory<f64>;
pub type MeasurementVector64 = model::MeasurementVector<f64>;
pub type WeightMatrix64 = solver::WeightMatrix<f64>;
pub type SemanticFeatures64 = features::SemanticFeatures<f64>;
pub type SceneSpec64 = datagen::SceneSpec;

/// `f32` aliases for memory-constrained use.
pub type ComplexImage32 = model::ComplexImage<f32>;
pub type PhaseHistory32 = model::PhaseHistory<f32>;
pub type MeasurementVector32 = model::MeasurementVector<f32>;

//! Regularity of rough vector fields under changes of coordinates.
//!
//! Grid fields on a periodic torus hosting the unit ball, Littlewood-Paley
//! norms, exterior calculus, paraproducts, the elliptic coordinate-improvement
//! solve and canonical/harmonic chart experiments.

pub mod acceptance;
pub mod charts;
pub mod elliptic;
pub mod error;
pub mod exterior;
pub mod fields;
pub mod pipeline;
pub mod potential_para;
pub mod real;
pub mod spectral;

pub use error::{Error, Result};
pub use fields::GridSpec;
pub use real::Real;

/// Double-precision instantiations used by every module above the spectral layer.
pub type ScalarField = fields::ScalarField<f64>;
pub type FormField = fields::FormField<f64>;
pub type VectorField = fields::VectorField<f64>;
pub type Frame = fields::Frame<f64>;
pub type MatrixField = fields::MatrixField<f64>;
pub type FilterBank = spectral::FilterBank<f64>;

pub type ScalarField32 = fields::ScalarField<f32>;
pub type FilterBank32 = spectral::FilterBank<f32>;

//! Variable projection with `l_p` regularization for separable nonlinear
//! inverse problems `min_{x,y} ||G(y) x - d||^2 + lambda ||L x||_p^p`.
//!
//! Everything is generic over the scalar type ([`Scalar`] is implemented for
//! `f32` and `f64`); the `*64` aliases below pin the common double-precision
//! instantiations.

pub mod error;
pub mod gcv;
pub mod linalg;
pub mod metrics;
pub mod mmgks;
pub mod operators;
pub mod problems;
pub mod regularizers;
pub mod scalar;
pub mod varpro;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PsfParams64 = operators::PsfParams<f64>;
pub type PsfParams32 = operators::PsfParams<f32>;
pub type PsfBlur64 = operators::PsfBlur<f64>;
pub type PsfBlurModel64 = operators::PsfBlurModel<f64>;
pub type VarproConfig64 = varpro::VarproConfig<f64>;
pub type VarproConfig32 = varpro::VarproConfig<f32>;
pub type MmgksConfig64 = mmgks::MmgksConfig<f64>;
pub type MmgksConfig32 = mmgks::MmgksConfig<f32>;
pub type ProblemInstance64 = problems::ProblemInstance<f64>;
pub type ProblemInstance32 = problems::ProblemInstance<f32>;
pub type RunRecord64 = varpro::RunRecord<f64>;

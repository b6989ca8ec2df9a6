//! Multiscale Schur-complement analysis of the discrete Anderson model at weak hopping.

pub mod eigenflow;
pub mod experiments;
pub mod error;
pub mod influence;
pub mod lattice;
pub mod multiscale;
pub mod precise;
pub mod schur;
pub mod verify;

pub use error::{Error, Result};

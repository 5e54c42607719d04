//! Structured dictionary learning.
//!
//! Dictionaries are learned by alternating closed-form updates of an
//! objective that combines reconstruction of the training samples, of a
//! label-aligned set of alternative samples, a ridge penalty, and a pull
//! toward an ideal block-diagonal representation. An ℓ1 variant solved by
//! ADMM, K-SVD, orthogonal matching pursuit and a ridge classifier complete
//! the pipeline; [`bench`] drives the full evaluation protocol.

pub mod admm;
pub mod bench;
pub mod classifier;
pub mod coding;
pub mod data;
pub mod error;
pub mod esdl;
pub mod ksvd;
pub(crate) mod linalg;
pub mod objective;
#[cfg(test)]
mod testutil;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use types::{
    CoefficientMatrix, Dictionary, EsdlParams, IdealMatrix, LabelMatrix, LabeledMatrix,
    SolverReport,
};

//! Quantum majorization at finite dimension.
//!
//! Decides whether one bipartite state can be turned into another by a
//! channel on one factor, certifies the answer with either the channel or
//! an entanglement-breaking witness, and measures approximate versions.

// Links the system BLAS/LAPACK used by the conic backend.
extern crate openblas_src;

pub mod approx;
pub mod channel;
pub mod conic;
pub mod docs;
pub mod entropy;
mod error;
pub mod factorize;
pub mod linalg;
pub mod majorize;
pub mod oracle;
pub mod tol;

pub use error::{Error, Result};

//! Dual-orbit structure, integrability verdicts and wavelet construction for
//! abelian matrix dilation groups `H = exp(h)` acting on `R^n`.

pub mod classify;
pub mod families;
pub mod groupspec;
pub mod linalg;
pub mod orbit;
pub mod quasisection;
pub mod sections;
pub mod wavelet;

pub use linalg::{DilationAlgebra, RealMatrix, RootClass, RootDecomposition};

//! Sparse regularized PQL estimation for hierarchical selection of genetic
//! main effects and gene-environment interaction effects in generalized
//! linear mixed models.
//!
//! The pipeline: build kinship matrices ([`kinship`]), estimate variance
//! components under the null with AI-REML ([`varcomp`]), then minimize the
//! penalized quasi-likelihood objective over a (lambda, rho) grid with a
//! proximal Newton / block coordinate descent solver ([`solver`]).
//! Cross-validation and mixed-model prediction live in [`crossval`], the
//! simulation and benchmark harness in [`simulate`], PLINK and table I/O in
//! [`io`].

pub mod crossval;
pub mod data;
pub mod error;
pub mod io;
pub mod kinship;
pub mod simulate;
pub mod solver;
pub mod varcomp;

pub use error::{Error, Result};

//! Convex hybrid modeling: interpretable first-principles models plus kernel
//! residuals, fitted by closed-form ridge solves or simplex-constrained
//! quadratic programs.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure computation;
//! file formats, configuration and the command line live in the companion
//! `hybridkernel` crate.
//!
//! Module map:
//!
//! - [`linalg`]: dense matrices, jittered Cholesky solves, least squares, `kron`/`vec`.
//! - [`kernels`]: Gaussian kernels, Gram matrices, the product kernel.
//! - [`simplex_qp`]: QPs with one block on the probability simplex and one free block.
//! - [`hybrid`]: static hybrid models (reference model, linear subspace, mixture).
//! - [`thermo`]: ethanol/toluene VLE simulator and interpretable activity models.
//! - [`koopman`]: monomial lifting, gEDMD, hybrid generator fits, closures.
//! - [`control`]: control Lyapunov function, bounded Sontag feedback, RK4 simulation.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![deny(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod control;
pub mod error;
pub mod hybrid;
pub mod kernels;
pub mod koopman;
pub mod linalg;
pub mod simplex_qp;
pub mod thermo;

pub(crate) mod rng;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, ProductKernelSpec};
pub use linalg::Matrix;

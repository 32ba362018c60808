//! Joint eQTL modeling with sparse SNP effects and low-rank hidden factors.
//!
//! Expression `Y` is fit as `1 mu^T + X B + L` by minimizing
//! `0.5 ||Y - X B - 1 mu^T - L||_F^2 + rho ||B||_1 + lambda ||L||_*`, using either the
//! alternating LORS algorithm or the proximal-gradient Fast-LORS algorithm.

pub mod error;
pub mod io;
pub mod lasso;
pub mod model;
pub mod pipeline;
pub mod prox;
pub mod screening;
pub mod simulate;
pub mod solver;
pub mod tuning;

pub use error::{ErrorCategory, LorsError, Result};
pub use model::{EqtlDataset, Hyperparams, ModelFit};
pub use prox::RealMatrix;
pub use solver::{
    detect_eqtls, fastlors_solve, lors_solve, solve, EqtlCall, Method, SolverOptions, SolverTrace,
    StepKind, StepPolicy,
};

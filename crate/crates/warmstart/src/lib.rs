//! Learned warm starts for parametric fixed-point solvers.
//!
//! A parametric fixed-point problem asks for `z` with `z = T_theta(z)`, where the
//! operator `T_theta` encodes the optimality conditions of a convex program whose
//! data depend on a parameter vector `theta`. This crate trains a small ReLU
//! network mapping `theta` to a warm start, differentiating through `k` unrolled
//! operator steps, and evaluates the learned starts against cold-start,
//! nearest-neighbor, and previous-solution baselines. It also computes PAC-Bayes
//! generalization certificates for contractive, linearly convergent, and averaged
//! operators.
//!
//! Modules:
//! - [`numerics`]: dense vectors/matrices, LDL^T / Cholesky-style factorization,
//!   power iteration, box/soc projections and soft thresholding.
//! - [`operators`]: the five fixed-point operators (gradient descent, proximal
//!   gradient, Douglas-Rachford, a QP splitting solver, a conic splitting solver)
//!   behind one apply-one-step interface with declared operator classes.
//! - [`autodiff`]: a reverse-mode tape over the fixed primitive set the operators
//!   and losses factor into.
//! - [`predictor`]: the ReLU network producing warm starts, plus weight files.
//! - [`training`]: Adam training with a plateau learning-rate schedule, ground
//!   truth caching, and the hyperparameter sweep.
//! - [`bounds`]: PAC-Bayes bound report, operator-class tail constants, and the
//!   train-vs-test step ratio bounds.
//! - [`problems`]: the parametric problem families and their generators.
//! - [`evaluation`]: residual/gain curves, iterations-to-tolerance tables, and
//!   CSV emission.
//! - [`pipeline`]: generate/train/eval/bound orchestration shared by the CLI.

pub mod autodiff;
pub mod bounds;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod operators;
pub mod pipeline;
pub mod predictor;
pub mod problems;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};

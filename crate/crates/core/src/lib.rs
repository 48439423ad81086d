//! Teacher-student Bayesian optimization: sample-efficient black-box
//! maximization where the GP surrogate is augmented with pseudo-labeled data
//! from an uncertainty-aware teacher, selectively regularized by a GP
//! student's feedback on the best observed examples, over unlabeled points
//! placed by an optimized sampler.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense matrices, Cholesky with jitter escalation, a
//!   finite-difference gradient oracle
//! - [`gp`]: exact RBF-kernel GP regression with heteroscedastic noise
//! - [`teacher`]: the MLP teacher with analytic parameter/input gradients
//! - [`student`]: the student GP, feedback loss and its gradients
//! - [`samplers`]: GEV + MCMC, learned Gaussian and random samplers
//! - [`bilevel`]: the alternating one-step training loop
//! - [`acquisition`]: expected improvement and its box-constrained maximizer
//! - [`objectives`], [`lowdisc`], [`config`], [`runner`]: the benchmark
//!   harness behind the CLI
//!
//! Data-parallel inner loops (kernel assembly, batch prediction, acquisition
//! restarts, suite cells) use rayon when the default `parallel` feature is
//! on, and fall back to sequential iteration without it; both paths produce
//! bitwise-identical results.

pub mod acquisition;
pub mod adam;
pub mod bilevel;
pub mod config;
pub mod error;
pub mod gp;
pub mod lowdisc;
pub mod numerics;
pub mod objectives;
pub mod par;
pub mod runner;
pub mod samplers;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};

//! Logistic contextual bandits with Pólya-Gamma augmented Thompson sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`rng`]: seeded, splittable random source shared by every sampler.
//! - [`pg`]: exact Pólya-Gamma sampler plus series-based reference samplers.
//! - [`gauss`]: Cholesky factorisation, multivariate normal draws and the
//!   Gaussian conditional used inside the Gibbs sampler.
//! - [`policies`]: PG-TS (and its streaming variant), Laplace-TS, GLM-UCB
//!   and a uniform baseline behind the [`policies::Policy`] trait.
//! - [`envs`]: simulated and cluster-backed environments with regret
//!   accounting.
//! - [`replay`]: rejection-replay offline evaluation over JSON-lines logs.
//! - [`ingest`]: tabular dataset to cluster environment pipeline.
//! - [`harness`]: seeded multi-run experiments, aggregation and CSV output.
//!
//! With the default `parallel` feature, independent runs of an experiment
//! are spread over a rayon pool. Without it every loop runs sequentially;
//! outputs are bitwise identical either way because each run owns its own
//! random streams.

pub mod envs;
pub mod error;
pub mod format;
pub mod gauss;
pub mod harness;
pub mod ingest;
pub mod pg;
pub mod policies;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RandomSource;

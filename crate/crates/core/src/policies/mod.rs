//! Bandit policies behind a common select/observe interface.
//!
//! All policies pick the arm with the largest score, breaking ties toward
//! the lowest index. Thompson-sampling policies score arms by the linear
//! predictor `xᵀθ` of their posterior draw, which orders arms exactly as
//! `μ(xᵀθ)` does but without the logistic saturating near 0 and 1.

mod glm_ucb;
mod history;
mod laplace;
mod pgts;
mod uniform;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub use glm_ucb::{glm_mle, glm_mle_from, glmucb_scores, glmucb_select_arm, GlmUcbPolicy, GlmUcbState};
pub use history::BanditHistory;
pub use laplace::{
    laplace_fit_step, laplace_select_arm, laplace_update, LaplaceState, LaplaceTsPolicy,
};
pub use pgts::{gibbs_sweep, PgTsConfig, PgTsPolicy};
pub use uniform::{uniform_select_arm, UniformPolicy};

/// Logistic link, stable over the whole finite range.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Arm maximising `μ(xᵀθ)` for a fixed `θ`.
pub fn greedy_arm(contexts: &[Vec<f64>], theta: &[f64]) -> usize {
    let scores: Vec<f64> = contexts.iter().map(|x| dot(x, theta)).collect();
    argmax(&scores)
}

pub(crate) fn check_contexts(contexts: &[Vec<f64>], dim: usize) -> Result<()> {
    if contexts.is_empty() {
        return Err(Error::InvalidInput("no arms to choose from".into()));
    }
    if let Some((i, x)) = contexts.iter().enumerate().find(|(_, x)| x.len() != dim) {
        return Err(Error::InvalidInput(format!(
            "context of arm {i} has length {}, expected {dim}",
            x.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_reward(reward: u8) -> Result<()> {
    if reward > 1 {
        return Err(Error::InvalidInput(format!("reward must be 0 or 1, got {reward}")));
    }
    Ok(())
}

/// FNV-1a over 64-bit words; used for policy state digests.
pub(crate) struct Digest(u64);

impl Digest {
    pub(crate) fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn word(&mut self, w: u64) {
        for byte in w.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn floats(&mut self, xs: &[f64]) {
        for x in xs {
            self.word(x.to_bits());
        }
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}

/// A contextual bandit learner.
///
/// `select` may advance internal sampler state (the Gibbs chain position,
/// the round counter) but never touches the learned data; only `observe`
/// does. [`Policy::state_digest`] hashes exactly that learned data.
pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Selection scores, one per context; larger is better.
    fn score_arms(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<Vec<f64>>;

    fn select(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<usize> {
        check_contexts(contexts, self.dim())?;
        Ok(argmax(&self.score_arms(contexts, rng)?))
    }

    fn observe(&mut self, context: &[f64], arm: usize, reward: u8) -> Result<()>;

    /// Number of observations absorbed so far.
    fn history_len(&self) -> usize;

    fn state_digest(&self) -> u64;
}

fn default_burn_in() -> usize {
    pgts::DEFAULT_BURN_IN
}

fn default_prior_variance() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    1.0
}

fn default_regularizer() -> f64 {
    1.0
}

/// Serializable policy configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    PgTs {
        #[serde(default = "default_burn_in")]
        burn_in: usize,
        #[serde(default)]
        prior_mean: f64,
        #[serde(default = "default_prior_variance")]
        prior_variance: f64,
        #[serde(default)]
        window: Option<usize>,
    },
    LaplaceTs {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    GlmUcb {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_regularizer")]
        regularizer: f64,
    },
    Uniform,
}

/// Names accepted by [`PolicySpec::from_name`].
pub const POLICY_NAMES: [&str; 5] = ["pg-ts", "pg-ts-stream", "laplace-ts", "glm-ucb", "uniform"];

impl PolicySpec {
    /// Default configuration for a policy name. `pg-ts-stream` is `pg-ts`
    /// with a single Gibbs sweep per round.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "pg-ts" => Self::PgTs {
                burn_in: pgts::DEFAULT_BURN_IN,
                prior_mean: 0.0,
                prior_variance: default_prior_variance(),
                window: None,
            },
            "pg-ts-stream" => Self::PgTs {
                burn_in: 1,
                prior_mean: 0.0,
                prior_variance: default_prior_variance(),
                window: None,
            },
            "laplace-ts" => Self::LaplaceTs {
                lambda: default_lambda(),
            },
            "glm-ucb" => Self::GlmUcb {
                alpha: default_alpha(),
                regularizer: default_regularizer(),
            },
            "uniform" => Self::Uniform,
            other => {
                return Err(Error::Config(format!(
                    "unknown policy '{other}' (expected one of {})",
                    POLICY_NAMES.join(", ")
                )))
            }
        })
    }

    /// Display label; PG-TS with one sweep is reported as `pg-ts-stream`.
    pub fn label(&self) -> &'static str {
        match self {
            Self::PgTs { burn_in: 1, .. } => "pg-ts-stream",
            Self::PgTs { .. } => "pg-ts",
            Self::LaplaceTs { .. } => "laplace-ts",
            Self::GlmUcb { .. } => "glm-ucb",
            Self::Uniform => "uniform",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::PgTs {
                burn_in,
                prior_variance,
                window,
                prior_mean,
            } => {
                if burn_in < 1 {
                    return Err(Error::Config("burn-in must be >= 1".into()));
                }
                if !(prior_variance > 0.0 && prior_variance.is_finite()) || !prior_mean.is_finite() {
                    return Err(Error::Config("prior needs a finite mean and positive variance".into()));
                }
                if window == Some(0) {
                    return Err(Error::Config("history window must be >= 1".into()));
                }
            }
            Self::LaplaceTs { lambda } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Config("lambda must be positive".into()));
                }
            }
            Self::GlmUcb { alpha, regularizer } => {
                if !(alpha >= 0.0 && alpha.is_finite()) || !(regularizer > 0.0 && regularizer.is_finite()) {
                    return Err(Error::Config(
                        "glm-ucb needs alpha >= 0 and regularizer > 0".into(),
                    ));
                }
            }
            Self::Uniform => {}
        }
        Ok(())
    }

    pub fn build(&self, dim: usize) -> Result<Box<dyn Policy>> {
        self.validate()?;
        Ok(match *self {
            Self::PgTs {
                burn_in,
                prior_mean,
                prior_variance,
                window,
            } => Box::new(PgTsPolicy::new(PgTsConfig {
                dim,
                burn_in,
                prior_mean,
                prior_variance,
                window,
            })?),
            Self::LaplaceTs { lambda } => Box::new(LaplaceTsPolicy::new(dim, lambda)?),
            Self::GlmUcb { alpha, regularizer } => Box::new(GlmUcbPolicy::new(dim, alpha, regularizer)?),
            Self::Uniform => Box::new(UniformPolicy::new(dim)),
        })
    }
}

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gauss::{sample_mvn, GaussianBelief, PreparedPrior};
use crate::pg::PolyaGammaSampler;
use crate::rng::RandomSource;

use super::{check_contexts, dot, BanditHistory, Digest, Policy};

pub const DEFAULT_BURN_IN: usize = 100;

/// One Gibbs sweep over the augmented posterior:
/// `ω_i | θ ~ PG(1, x_iᵀθ)` for every history row, then
/// `θ | r, ω ~ N(m_ω, V_ω)`. Consumes exactly `history.len()` PG draws.
pub fn gibbs_sweep(
    history: &BanditHistory,
    theta_in: &[f64],
    prior: &PreparedPrior,
    sampler: &mut PolyaGammaSampler,
    rng: &mut RandomSource,
) -> Result<DVector<f64>> {
    let d = prior.dim();
    if theta_in.len() != d || history.dim() != d {
        return Err(Error::InvalidInput(format!(
            "gibbs sweep dimension mismatch: theta {}, history {}, prior {d}",
            theta_in.len(),
            history.dim()
        )));
    }
    let omega = history
        .rows()
        .chunks_exact(d)
        .map(|x| sampler.sample_pg1(dot(x, theta_in), rng))
        .collect::<Result<Vec<f64>>>()?;
    let conditional = prior.conditional_rows(history.rows(), &omega, history.xt_kappa())?;
    Ok(conditional.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgTsConfig {
    pub dim: usize,
    pub burn_in: usize,
    pub prior_mean: f64,
    pub prior_variance: f64,
    /// Restrict the sampler to the most recent rows; `None` uses everything.
    pub window: Option<usize>,
}

impl PgTsConfig {
    pub fn new(dim: usize, burn_in: usize) -> Self {
        Self {
            dim,
            burn_in,
            prior_mean: 0.0,
            prior_variance: 1.0,
            window: None,
        }
    }
}

/// Pólya-Gamma augmented Thompson sampling.
///
/// Each round runs `burn_in` Gibbs sweeps warm-started from the previous
/// round's draw and plays the greedy arm under the final draw. With
/// `burn_in = 1` this is the streaming variant.
#[derive(Debug, Clone)]
pub struct PgTsPolicy {
    prior: PreparedPrior,
    burn_in: usize,
    window: Option<usize>,
    theta: DVector<f64>,
    history: BanditHistory,
    sampler: PolyaGammaSampler,
}

impl PgTsPolicy {
    pub fn new(config: PgTsConfig) -> Result<Self> {
        if config.burn_in < 1 {
            return Err(Error::InvalidParameter("burn-in must be >= 1".into()));
        }
        let belief = GaussianBelief::isotropic(config.dim, config.prior_mean, config.prior_variance)?;
        Self::with_prior(belief, config.burn_in, config.window)
    }

    pub fn with_prior(prior: GaussianBelief, burn_in: usize, window: Option<usize>) -> Result<Self> {
        if burn_in < 1 {
            return Err(Error::InvalidParameter("burn-in must be >= 1".into()));
        }
        let dim = prior.dim();
        Ok(Self {
            theta: prior.mean().clone(),
            prior: PreparedPrior::new(prior),
            burn_in,
            window,
            history: BanditHistory::new(dim),
            sampler: PolyaGammaSampler::new(),
        })
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn history(&self) -> &BanditHistory {
        &self.history
    }

    pub fn sampler(&self) -> &PolyaGammaSampler {
        &self.sampler
    }

    /// Advance the chain by `burn_in` sweeps (or draw from the prior when no
    /// data has been seen) and store the result as the current draw.
    pub fn resample(&mut self, rng: &mut RandomSource) -> Result<&DVector<f64>> {
        if self.history.is_empty() {
            self.theta = sample_mvn(self.prior.belief(), rng);
            return Ok(&self.theta);
        }
        let windowed;
        let history = match self.window {
            Some(w) if w < self.history.len() => {
                windowed = self.history.tail(w);
                &windowed
            }
            _ => &self.history,
        };
        let mut theta = self.theta.clone();
        for _ in 0..self.burn_in {
            theta = gibbs_sweep(history, theta.as_slice(), &self.prior, &mut self.sampler, rng)?;
        }
        self.theta = theta;
        Ok(&self.theta)
    }

    /// Resample `θ` and return the greedy arm under it.
    pub fn select_arm(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<usize> {
        Policy::select(self, contexts, rng)
    }
}

impl Policy for PgTsPolicy {
    fn name(&self) -> &'static str {
        if self.burn_in == 1 {
            "pg-ts-stream"
        } else {
            "pg-ts"
        }
    }

    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn score_arms(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<Vec<f64>> {
        check_contexts(contexts, self.dim())?;
        let theta = self.resample(rng)?;
        Ok(contexts.iter().map(|x| dot(x, theta.as_slice())).collect())
    }

    fn observe(&mut self, context: &[f64], arm: usize, reward: u8) -> Result<()> {
        self.history.push(context, arm, reward)
    }

    fn history_len(&self) -> usize {
        self.history.len()
    }

    fn state_digest(&self) -> u64 {
        let mut h = Digest::new();
        h.floats(self.history.rows());
        for (&a, &r) in self.history.arms().iter().zip(self.history.rewards()) {
            h.word(a as u64);
            h.word(r as u64);
        }
        h.finish()
    }
}

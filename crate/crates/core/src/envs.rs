//! Ground-truth environments and regret accounting.
//!
//! Arm contexts are drawn once per environment and stay fixed across
//! rounds. Regret is measured against expected rewards, so a run's regret
//! trace does not depend on the realised Bernoulli outcomes.

use crate::error::{Error, Result};
use crate::policies::{dot, sigmoid};
use crate::rng::RandomSource;

pub trait Environment: Send + Sync {
    fn num_arms(&self) -> usize;

    fn dim(&self) -> usize;

    fn contexts(&self) -> &[Vec<f64>];

    /// Expected reward of `arm`.
    fn arm_mean(&self, arm: usize) -> f64;

    fn optimal_arm(&self) -> usize;

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.num_arms() {
            return Err(Error::InvalidInput(format!(
                "arm {arm} out of range for {} arms",
                self.num_arms()
            )));
        }
        Ok(())
    }

    /// Bernoulli reward for `arm`.
    fn step(&self, arm: usize, rng: &mut RandomSource) -> Result<u8> {
        self.check_arm(arm)?;
        Ok(rng.bernoulli(self.arm_mean(arm)) as u8)
    }

    /// Gap between the optimal arm's expected reward and `arm`'s.
    fn instant_regret(&self, arm: usize) -> Result<f64> {
        self.check_arm(arm)?;
        Ok(self.arm_mean(self.optimal_arm()) - self.arm_mean(arm))
    }
}

pub fn env_step(env: &dyn Environment, arm: usize, rng: &mut RandomSource) -> Result<u8> {
    env.step(arm, rng)
}

pub fn instant_regret(env: &dyn Environment, arm: usize) -> Result<f64> {
    env.instant_regret(arm)
}

fn best_index(values: &[f64]) -> usize {
    crate::policies::argmax(values)
}

/// Logistic environment with a known coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEnvironment {
    arm_contexts: Vec<Vec<f64>>,
    theta_star: Vec<f64>,
    arm_means: Vec<f64>,
    optimal_arm: usize,
}

impl SimEnvironment {
    pub fn new(arm_contexts: Vec<Vec<f64>>, theta_star: Vec<f64>) -> Result<Self> {
        if arm_contexts.len() < 2 {
            return Err(Error::InvalidInput("an environment needs at least two arms".into()));
        }
        if arm_contexts.iter().any(|x| x.len() != theta_star.len()) {
            return Err(Error::InvalidInput("context and parameter dimensions differ".into()));
        }
        let arm_means: Vec<f64> = arm_contexts.iter().map(|x| sigmoid(dot(x, &theta_star))).collect();
        let optimal_arm = best_index(&arm_means);
        Ok(Self {
            arm_contexts,
            theta_star,
            arm_means,
            optimal_arm,
        })
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn arm_means(&self) -> &[f64] {
        &self.arm_means
    }

    pub fn mean_reward(&self) -> f64 {
        self.arm_means.iter().sum::<f64>() / self.arm_means.len() as f64
    }
}

impl Environment for SimEnvironment {
    fn num_arms(&self) -> usize {
        self.arm_contexts.len()
    }

    fn dim(&self) -> usize {
        self.theta_star.len()
    }

    fn contexts(&self) -> &[Vec<f64>] {
        &self.arm_contexts
    }

    fn arm_mean(&self, arm: usize) -> f64 {
        self.arm_means[arm]
    }

    fn optimal_arm(&self) -> usize {
        self.optimal_arm
    }
}

fn check_shape(arms: usize, dim: usize) -> Result<()> {
    if arms < 2 || dim < 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 arms and 1 feature (got {arms}, {dim})"
        )));
    }
    Ok(())
}

fn gaussian_contexts(arms: usize, dim: usize, mean: f64, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    (0..arms)
        .map(|_| (0..dim).map(|_| mean + rng.normal()).collect())
        .collect()
}

/// Contexts `x_a ~ N(context_mean · 1, I_d)` and `θ* ~ N(0, I_d)`.
pub fn make_gaussian_env(arms: usize, dim: usize, context_mean: f64, seed: u64) -> Result<SimEnvironment> {
    check_shape(arms, dim)?;
    let mut rng = RandomSource::seed_from_u64(seed);
    let contexts = gaussian_contexts(arms, dim, context_mean, &mut rng);
    let theta: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    SimEnvironment::new(contexts, theta)
}

/// A coefficient vector drawn from a random four-component Gaussian
/// mixture, together with the mixture it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTheta {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Dirichlet concentration of the mixture weights.
pub const MIXTURE_CONCENTRATION: [f64; 4] = [1.0, 3.0, 5.0, 7.0];
/// Inverse-gamma shape and scale of the component variances.
pub const MIXTURE_VARIANCE_PRIOR: (f64, f64) = (3.0, 1.0);
/// Centre of the component means.
pub const MIXTURE_MEAN_CENTRE: f64 = -3.0;

/// `σ²_j ~ InvGamma(3, 1)`, `μ_j ~ N(-3, σ²_j)`, `φ ~ Dir(1, 3, 5, 7)`, and
/// each coordinate `θ_i ~ Σ_j φ_j N(μ_j, σ²_j)` independently.
pub fn make_mixture_theta(dim: usize, seed: u64) -> Result<MixtureTheta> {
    if dim < 1 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = RandomSource::seed_from_u64(seed);
    let (shape, scale) = MIXTURE_VARIANCE_PRIOR;
    let variances: Vec<f64> = MIXTURE_CONCENTRATION
        .iter()
        .map(|_| scale / rng.gamma(shape))
        .collect();
    let means: Vec<f64> = variances
        .iter()
        .map(|v| MIXTURE_MEAN_CENTRE + v.sqrt() * rng.normal())
        .collect();
    let raw: Vec<f64> = MIXTURE_CONCENTRATION.iter().map(|&a| rng.gamma(a)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|g| g / total).collect();

    let theta = (0..dim)
        .map(|_| {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut component = weights.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    component = j;
                    break;
                }
            }
            means[component] + variances[component].sqrt() * rng.normal()
        })
        .collect();
    Ok(MixtureTheta {
        theta,
        weights,
        means,
        variances,
    })
}

/// Contexts `x_a ~ N(0, I_d)` with a mixture-drawn `θ*`.
pub fn make_mixture_env(arms: usize, dim: usize, seed: u64) -> Result<SimEnvironment> {
    check_shape(arms, dim)?;
    let mut rng = RandomSource::derive(seed, 0);
    let contexts = gaussian_contexts(arms, dim, 0.0, &mut rng);
    let theta = make_mixture_theta(dim, crate::rng::split_seed(seed, 1))?.theta;
    SimEnvironment::new(contexts, theta)
}

/// Environment backed by cluster centroids and their empirical positive
/// rates. Regret uses the rates in place of `μ(xᵀθ*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEnvironment {
    arm_contexts: Vec<Vec<f64>>,
    arm_rates: Vec<f64>,
    optimal_arm: usize,
}

impl ClusterEnvironment {
    pub fn arm_rates(&self) -> &[f64] {
        &self.arm_rates
    }
}

pub fn make_cluster_env(centroids: Vec<Vec<f64>>, rates: Vec<f64>) -> Result<ClusterEnvironment> {
    if centroids.len() != rates.len() {
        return Err(Error::InvalidInput(format!(
            "{} centroids but {} rates",
            centroids.len(),
            rates.len()
        )));
    }
    if centroids.is_empty() {
        return Err(Error::InvalidInput("no centroids".into()));
    }
    let dim = centroids[0].len();
    if centroids.iter().any(|c| c.len() != dim) {
        return Err(Error::InvalidInput("centroids have differing dimensions".into()));
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidInput("rates must lie in [0, 1]".into()));
    }
    let optimal_arm = best_index(&rates);
    Ok(ClusterEnvironment {
        arm_contexts: centroids,
        arm_rates: rates,
        optimal_arm,
    })
}

impl Environment for ClusterEnvironment {
    fn num_arms(&self) -> usize {
        self.arm_contexts.len()
    }

    fn dim(&self) -> usize {
        self.arm_contexts[0].len()
    }

    fn contexts(&self) -> &[Vec<f64>] {
        &self.arm_contexts
    }

    fn arm_mean(&self, arm: usize) -> f64 {
        self.arm_rates[arm]
    }

    fn optimal_arm(&self) -> usize {
        self.optimal_arm
    }
}

/// Per-round record of a bandit run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub arms: Vec<usize>,
    pub rewards: Vec<u8>,
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, arm: usize, reward: u8, instant: f64) {
        let total = self.cumulative.last().copied().unwrap_or(0.0) + instant;
        self.arms.push(arm);
        self.rewards.push(reward);
        self.instant.push(instant);
        self.cumulative.push(total);
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

use crate::error::{Error, Result};
use crate::rng::RandomSource;

use super::{check_contexts, Digest, Policy};

/// Uniformly random arm index.
pub fn uniform_select_arm(contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<usize> {
    if contexts.is_empty() {
        return Err(Error::InvalidInput("no arms to choose from".into()));
    }
    Ok(rng.index(contexts.len()))
}

/// Uniform random baseline; ignores all feedback.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    dim: usize,
    observed: usize,
}

impl UniformPolicy {
    pub fn new(dim: usize) -> Self {
        Self { dim, observed: 0 }
    }
}

impl Policy for UniformPolicy {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn score_arms(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<Vec<f64>> {
        check_contexts(contexts, self.dim)?;
        Ok(contexts.iter().map(|_| rng.uniform()).collect())
    }

    fn select(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<usize> {
        check_contexts(contexts, self.dim)?;
        uniform_select_arm(contexts, rng)
    }

    fn observe(&mut self, context: &[f64], _arm: usize, reward: u8) -> Result<()> {
        super::check_reward(reward)?;
        if context.len() != self.dim {
            return Err(Error::InvalidInput("context has the wrong length".into()));
        }
        self.observed += 1;
        Ok(())
    }

    fn history_len(&self) -> usize {
        self.observed
    }

    fn state_digest(&self) -> u64 {
        let mut h = Digest::new();
        h.word(self.observed as u64);
        h.finish()
    }
}

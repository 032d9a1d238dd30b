use crate::error::{Error, Result};

use super::check_reward;

/// Ordered `(context, arm, reward)` triples observed by a policy.
///
/// Contexts are stored row-major in one buffer, and `Xᵀκ` with
/// `κ = r - 1/2` is maintained incrementally since it does not depend on
/// the Gibbs state.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditHistory {
    dim: usize,
    contexts: Vec<f64>,
    arms: Vec<usize>,
    rewards: Vec<u8>,
    xt_kappa: Vec<f64>,
}

impl BanditHistory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            contexts: Vec::new(),
            arms: Vec::new(),
            rewards: Vec::new(),
            xt_kappa: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, context: &[f64], arm: usize, reward: u8) -> Result<()> {
        check_reward(reward)?;
        if context.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "context has length {}, expected {}",
                context.len(),
                self.dim
            )));
        }
        let kappa = reward as f64 - 0.5;
        for (acc, x) in self.xt_kappa.iter_mut().zip(context) {
            *acc += kappa * x;
        }
        self.contexts.extend_from_slice(context);
        self.arms.push(arm);
        self.rewards.push(reward);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.dim..(i + 1) * self.dim]
    }

    /// All contexts, row-major `len × dim`.
    pub fn rows(&self) -> &[f64] {
        &self.contexts
    }

    pub fn arms(&self) -> &[usize] {
        &self.arms
    }

    pub fn rewards(&self) -> &[u8] {
        &self.rewards
    }

    pub fn xt_kappa(&self) -> &[f64] {
        &self.xt_kappa
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize, u8)> + '_ {
        self.contexts
            .chunks_exact(self.dim.max(1))
            .zip(&self.arms)
            .zip(&self.rewards)
            .map(|((x, &a), &r)| (x, a, r))
    }

    /// The most recent `n` rows as a new history.
    pub fn tail(&self, n: usize) -> BanditHistory {
        let start = self.len().saturating_sub(n);
        let mut out = BanditHistory::new(self.dim);
        for i in start..self.len() {
            out.push(self.context(i), self.arms[i], self.rewards[i])
                .expect("rows already validated");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_in_order() {
        let mut h = BanditHistory::new(2);
        assert!(h.is_empty());
        for i in 0..5 {
            h.push(&[i as f64, 1.0], i, (i % 2) as u8).unwrap();
        }
        assert_eq!(h.len(), 5);
        let arms: Vec<usize> = h.iter().map(|(_, a, _)| a).collect();
        assert_eq!(arms, vec![0, 1, 2, 3, 4]);
        assert_eq!(h.context(3), &[3.0, 1.0]);
        // κ = (-.5, .5, -.5, .5, -.5)
        assert_eq!(h.xt_kappa(), &[(1.0 + 3.0) * 0.5 - (0.0 + 2.0 + 4.0) * 0.5, -0.5]);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut h = BanditHistory::new(2);
        assert!(h.push(&[1.0, 2.0], 0, 2).is_err());
        assert!(h.push(&[1.0], 0, 1).is_err());
        assert!(h.is_empty());
    }

    #[test]
    fn tail_keeps_latest() {
        let mut h = BanditHistory::new(1);
        for i in 0..10 {
            h.push(&[i as f64], 0, 1).unwrap();
        }
        let t = h.tail(3);
        assert_eq!(t.rows(), &[7.0, 8.0, 9.0]);
        assert_eq!(h.tail(50), h);
    }
}

use crate::error::{Error, Result};
use crate::rng::RandomSource;

use super::{argmax, check_contexts, check_reward, dot, sigmoid, Digest, Policy};

const FIT_TOL: f64 = 1e-8;
const FIT_MAX_ITER: usize = 50;

/// Diagonal Gaussian approximation: mode `m` and per-coordinate
/// precisions `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceState {
    pub m: Vec<f64>,
    pub q: Vec<f64>,
}

impl LaplaceState {
    /// `m = 0`, `q = λ`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            m: vec![0.0; dim],
            q: vec![lambda; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Diagonal of the sampling covariance, `1/q`.
    pub fn variances(&self) -> Vec<f64> {
        self.q.iter().map(|q| 1.0 / q).collect()
    }
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn objective(state: &LaplaceState, x: &[f64], y: f64, w: &[f64]) -> f64 {
    let quad: f64 = state
        .q
        .iter()
        .zip(w)
        .zip(&state.m)
        .map(|((q, w), m)| q * (w - m) * (w - m))
        .sum();
    0.5 * quad + softplus(-y * dot(x, w))
}

fn gradient(state: &LaplaceState, x: &[f64], y: f64, w: &[f64]) -> Vec<f64> {
    let tail = y * sigmoid(-y * dot(x, w));
    state
        .q
        .iter()
        .zip(w)
        .zip(&state.m)
        .zip(x)
        .map(|(((q, w), m), xi)| q * (w - m) - tail * xi)
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimiser of `½ Σ q_i (w_i - m_i)² - ln μ(y xᵀw)` by full Newton steps
/// with backtracking. The Hessian `diag(q) + s x xᵀ` is inverted with the
/// Sherman–Morrison identity.
pub fn laplace_fit_step(state: &LaplaceState, x: &[f64], y: i8) -> Result<Vec<f64>> {
    let d = state.dim();
    if x.len() != d {
        return Err(Error::InvalidInput(format!("context has length {}, expected {d}", x.len())));
    }
    if y != 1 && y != -1 {
        return Err(Error::InvalidInput(format!("label must be +1 or -1, got {y}")));
    }
    let y = y as f64;
    let mut w = state.m.clone();
    for _ in 0..=FIT_MAX_ITER {
        let g = gradient(state, x, y, &w);
        if norm(&g) <= FIT_TOL {
            return Ok(w);
        }
        let p = sigmoid(dot(x, &w));
        let s = p * (1.0 - p);
        let dinv_g: Vec<f64> = g.iter().zip(&state.q).map(|(g, q)| g / q).collect();
        let dinv_x: Vec<f64> = x.iter().zip(&state.q).map(|(x, q)| x / q).collect();
        let coef = s * dot(x, &dinv_g) / (1.0 + s * dot(x, &dinv_x));
        let step: Vec<f64> = dinv_g.iter().zip(&dinv_x).map(|(a, b)| a - coef * b).collect();

        let f0 = objective(state, x, y, &w);
        let slope = -dot(&g, &step);
        let mut t = 1.0;
        let mut next;
        loop {
            next = w.iter().zip(&step).map(|(w, s)| w - t * s).collect::<Vec<f64>>();
            if objective(state, x, y, &next) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        let moved = norm(&next.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>());
        w = next;
        if moved <= 1e-15 * (1.0 + norm(&w)) {
            // stalled at machine precision
            return Ok(w);
        }
    }
    Err(Error::NumericalFailure(format!(
        "Laplace fit did not converge in {FIT_MAX_ITER} Newton iterations"
    )))
}

/// Absorb one observation: refit the mode, then add `p(1-p) x²` to the
/// precisions with `p = μ(xᵀw)`.
pub fn laplace_update(state: &LaplaceState, x: &[f64], reward: u8) -> Result<LaplaceState> {
    check_reward(reward)?;
    let y = 2 * reward as i8 - 1;
    let w = laplace_fit_step(state, x, y)?;
    let p = sigmoid(dot(x, &w));
    let q = state
        .q
        .iter()
        .zip(x)
        .map(|(q, xi)| q + p * (1.0 - p) * xi * xi)
        .collect();
    Ok(LaplaceState { m: w, q })
}

/// Linear predictors under one draw `θ ~ N(m, diag(1/q))`.
fn laplace_scores(state: &LaplaceState, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Vec<f64> {
    let theta: Vec<f64> = state
        .m
        .iter()
        .zip(&state.q)
        .map(|(m, q)| m + rng.normal() / q.sqrt())
        .collect();
    contexts.iter().map(|x| dot(x, &theta)).collect()
}

pub fn laplace_select_arm(
    state: &LaplaceState,
    contexts: &[Vec<f64>],
    rng: &mut RandomSource,
) -> Result<usize> {
    check_contexts(contexts, state.dim())?;
    Ok(argmax(&laplace_scores(state, contexts, rng)))
}

/// Thompson sampling with a diagonal Laplace posterior.
#[derive(Debug, Clone)]
pub struct LaplaceTsPolicy {
    state: LaplaceState,
    observed: usize,
}

impl LaplaceTsPolicy {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Ok(Self {
            state: LaplaceState::new(dim, lambda)?,
            observed: 0,
        })
    }

    pub fn state(&self) -> &LaplaceState {
        &self.state
    }
}

impl Policy for LaplaceTsPolicy {
    fn name(&self) -> &'static str {
        "laplace-ts"
    }

    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn score_arms(&mut self, contexts: &[Vec<f64>], rng: &mut RandomSource) -> Result<Vec<f64>> {
        check_contexts(contexts, self.dim())?;
        Ok(laplace_scores(&self.state, contexts, rng))
    }

    fn observe(&mut self, context: &[f64], _arm: usize, reward: u8) -> Result<()> {
        self.state = laplace_update(&self.state, context, reward)?;
        self.observed += 1;
        Ok(())
    }

    fn history_len(&self) -> usize {
        self.observed
    }

    fn state_digest(&self) -> u64 {
        let mut h = Digest::new();
        h.floats(&self.state.m);
        h.floats(&self.state.q);
        h.word(self.observed as u64);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_context_leaves_state() {
        let state = LaplaceState {
            m: vec![0.3, -0.2],
            q: vec![2.0, 5.0],
        };
        let w = laplace_fit_step(&state, &[0.0, 0.0], 1).unwrap();
        assert_eq!(w, state.m);
        let next = laplace_update(&state, &[0.0, 0.0], 0).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn scalar_fit_matches_grid() {
        let state = LaplaceState::new(1, 1.0).unwrap();
        let w = laplace_fit_step(&state, &[1.0], 1).unwrap()[0];
        // brute force on a 1e-6 grid over [-5, 5]
        let f = |w: f64| 0.5 * w * w + (1.0 + (-w).exp()).ln();
        let mut best = (-5.0, f(-5.0));
        for i in 0..=10_000_000u64 {
            let v = -5.0 + i as f64 * 1e-6;
            let fv = f(v);
            if fv < best.1 {
                best = (v, fv);
            }
        }
        assert!((w - best.0).abs() < 1e-5, "{w} vs {}", best.0);
    }

    #[test]
    fn gradient_vanishes_at_fit() {
        let state = LaplaceState {
            m: vec![0.5, -1.0, 2.0],
            q: vec![1.0, 0.3, 4.0],
        };
        let x = [1.5, -2.0, 0.7];
        for y in [1i8, -1] {
            let w = laplace_fit_step(&state, &x, y).unwrap();
            assert!(norm(&gradient(&state, &x, y as f64, &w)) <= 1e-8);
        }
    }

    #[test]
    fn precisions_never_decrease() {
        let mut state = LaplaceState::new(3, 1.0).unwrap();
        assert_eq!(state.variances(), vec![1.0; 3]);
        let mut rng = RandomSource::seed_from_u64(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal() * 2.0).collect();
            let r = rng.bernoulli(0.4) as u8;
            let next = laplace_update(&state, &x, r).unwrap();
            assert!(next.q.iter().zip(&state.q).all(|(a, b)| a >= b));
            state = next;
        }
    }

    #[test]
    fn huge_precision_is_greedy() {
        let state = LaplaceState {
            m: vec![0.2, -0.4],
            q: vec![1e12, 1e12],
        };
        let contexts = vec![vec![1.0, 0.0], vec![0.0, -1.0], vec![0.5, 0.5]];
        let mut rng = RandomSource::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(laplace_select_arm(&state, &contexts, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn selection_basics() {
        let state = LaplaceState::new(2, 1.0).unwrap();
        let mut rng = RandomSource::seed_from_u64(3);
        assert_eq!(laplace_select_arm(&state, &[vec![1.0, 1.0]], &mut rng).unwrap(), 0);
        let contexts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.5]];
        let a: Vec<usize> = {
            let mut r = RandomSource::seed_from_u64(9);
            (0..20).map(|_| laplace_select_arm(&state, &contexts, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = RandomSource::seed_from_u64(9);
            (0..20).map(|_| laplace_select_arm(&state, &contexts, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(laplace_select_arm(&state, &[], &mut rng).is_err());
    }

    #[test]
    fn bad_label_is_rejected() {
        let state = LaplaceState::new(1, 1.0).unwrap();
        assert!(laplace_fit_step(&state, &[1.0], 0).is_err());
        assert!(laplace_update(&state, &[1.0], 2).is_err());
        assert!(LaplaceState::new(1, 0.0).is_err());
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::cholesky;
use crate::rng::RandomSource;

use super::{argmax, check_contexts, dot, sigmoid, BanditHistory, Digest, Policy};

const MLE_TOL: f64 = 1e-8;
const MLE_MAX_ITER: usize = 100;

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn penalized_nll(history: &BanditHistory, regularizer: f64, theta: &[f64]) -> f64 {
    let nll: f64 = history
        .iter()
        .map(|(x, _, r)| {
            let z = dot(x, theta);
            softplus(z) - r as f64 * z
        })
        .sum();
    nll + 0.5 * regularizer * dot(theta, theta)
}

/// Ridge-penalised logistic MLE by Newton/IRLS from a zero start.
pub fn glm_mle(history: &BanditHistory, regularizer: f64) -> Result<Vec<f64>> {
    glm_mle_from(history, regularizer, &vec![0.0; history.dim()])
}

/// [`glm_mle`] warm-started at `init`.
pub fn glm_mle_from(history: &BanditHistory, regularizer: f64, init: &[f64]) -> Result<Vec<f64>> {
    let d = history.dim();
    if regularizer.is_nan() || regularizer <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "regularizer must be positive, got {regularizer}"
        )));
    }
    if init.len() != d {
        return Err(Error::InvalidInput("initial estimate has the wrong length".into()));
    }
    let mut theta = init.to_vec();
    if history.is_empty() {
        return Ok(vec![0.0; d]);
    }
    for _ in 0..=MLE_MAX_ITER {
        let mut grad = DVector::from_iterator(d, theta.iter().map(|t| regularizer * t));
        let mut hess = DMatrix::from_diagonal_element(d, d, regularizer);
        for (x, _, r) in history.iter() {
            let p = sigmoid(dot(x, &theta));
            let resid = p - r as f64;
            let w = p * (1.0 - p);
            for a in 0..d {
                grad[a] += resid * x[a];
                for b in 0..=a {
                    hess[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        if grad.norm() <= MLE_TOL {
            return Ok(theta);
        }
        for a in 0..d {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let l = cholesky(&hess)?;
        let y = l.solve_lower_triangular(&grad).expect("positive diagonal");
        let step = l.tr_solve_lower_triangular(&y).expect("positive diagonal");

        let f0 = penalized_nll(history, regularizer, &theta);
        let slope = -grad.dot(&step);
        let mut t = 1.0;
        let mut next;
        loop {
            next = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect::<Vec<f64>>();
            if penalized_nll(history, regularizer, &next) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        let moved: f64 = next.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        theta = next;
        if moved <= 1e-15 * (1.0 + dot(&theta, &theta).sqrt()) {
            return Ok(theta);
        }
    }
    Err(Error::NumericalFailure(format!(
        "logistic MLE did not converge in {MLE_MAX_ITER} iterations"
    )))
}

/// Frequentist GLM-UCB baseline state: the data, the exploration scale
/// `α` and the ridge regulariser. The design matrix
/// `M_t = regularizer · I + Σ x xᵀ` is kept up to date on every push.
#[derive(Debug, Clone)]
pub struct GlmUcbState {
    pub history: BanditHistory,
    pub alpha: f64,
    pub regularizer: f64,
    design: DMatrix<f64>,
}

impl GlmUcbState {
    pub fn new(dim: usize, alpha: f64, regularizer: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(regularizer > 0.0 && regularizer.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "glm-ucb needs alpha >= 0 and regularizer > 0 (got {alpha}, {regularizer})"
            )));
        }
        Ok(Self {
            history: BanditHistory::new(dim),
            alpha,
            regularizer,
            design: DMatrix::from_diagonal_element(dim, dim, regularizer),
        })
    }

    pub fn push(&mut self, context: &[f64], arm: usize, reward: u8) -> Result<()> {
        self.history.push(context, arm, reward)?;
        let x = DVector::from_column_slice(context);
        self.design += &x * x.transpose();
        Ok(())
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// `α √(ln t) ‖x‖_{M_t⁻¹}` for each context.
    pub fn bonuses(&self, contexts: &[Vec<f64>], t: usize) -> Result<Vec<f64>> {
        let l = cholesky(&self.design)?;
        let rho = self.alpha * (t as f64).ln().sqrt();
        Ok(contexts
            .iter()
            .map(|x| {
                let v = DVector::from_column_slice(x);
                let half = l.solve_lower_triangular(&v).expect("positive diagonal");
                rho * half.norm()
            })
            .collect())
    }
}

/// `μ(xᵀθ̂) + α √(ln t) ‖x‖_{M_t⁻¹}` for each context.
pub fn glmucb_scores(state: &GlmUcbState, contexts: &[Vec<f64>], t: usize, theta_hat: &[f64]) -> Result<Vec<f64>> {
    if t < 1 {
        return Err(Error::InvalidInput("round index must be >= 1".into()));
    }
    check_contexts(contexts, state.history.dim())?;
    let bonus = state.bonuses(contexts, t)?;
    Ok(contexts
        .iter()
        .zip(bonus)
        .map(|(x, b)| sigmoid(dot(x, theta_hat)) + b)
        .collect())
}

pub fn glmucb_select_arm(state: &GlmUcbState, contexts: &[Vec<f64>], t: usize) -> Result<usize> {
    if t < 1 {
        return Err(Error::InvalidInput("round index must be >= 1".into()));
    }
    let theta_hat = glm_mle(&state.history, state.regularizer)?;
    Ok(argmax(&glmucb_scores(state, contexts, t, &theta_hat)?))
}

/// GLM-UCB as a [`Policy`]. The estimate is refit (warm-started) on every
/// observation; the round index counts selections.
#[derive(Debug, Clone)]
pub struct GlmUcbPolicy {
    state: GlmUcbState,
    theta_hat: Vec<f64>,
    round: usize,
}

impl GlmUcbPolicy {
    pub fn new(dim: usize, alpha: f64, regularizer: f64) -> Result<Self> {
        Ok(Self {
            state: GlmUcbState::new(dim, alpha, regularizer)?,
            theta_hat: vec![0.0; dim],
            round: 0,
        })
    }

    pub fn state(&self) -> &GlmUcbState {
        &self.state
    }

    pub fn estimate(&self) -> &[f64] {
        &self.theta_hat
    }
}

impl Policy for GlmUcbPolicy {
    fn name(&self) -> &'static str {
        "glm-ucb"
    }

    fn dim(&self) -> usize {
        self.state.history.dim()
    }

    fn score_arms(&mut self, contexts: &[Vec<f64>], _rng: &mut RandomSource) -> Result<Vec<f64>> {
        self.round += 1;
        glmucb_scores(&self.state, contexts, self.round, &self.theta_hat)
    }

    fn observe(&mut self, context: &[f64], arm: usize, reward: u8) -> Result<()> {
        self.state.push(context, arm, reward)?;
        self.theta_hat = glm_mle_from(&self.state.history, self.state.regularizer, &self.theta_hat)?;
        Ok(())
    }

    fn history_len(&self) -> usize {
        self.state.history.len()
    }

    fn state_digest(&self) -> u64 {
        let mut h = Digest::new();
        h.floats(self.state.history.rows());
        for &r in self.state.history.rewards() {
            h.word(r as u64);
        }
        h.floats(&self.theta_hat);
        h.finish()
    }
}

//! Oracles and statistics shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DVector;
use pgts_core::gauss::{GaussianBelief, PreparedPrior};
use pgts_core::pg::PolyaGammaSampler;
use pgts_core::policies::{gibbs_sweep, sigmoid, BanditHistory};
use pgts_core::RandomSource;

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Critical value of the two-sample KS statistic at level `alpha`
/// (asymptotic formula).
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Logistic observations with `x ~ N(0, I)` and `r ~ Bernoulli(σ(xᵀθ))`.
pub fn logistic_data(theta: &[f64], t: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = RandomSource::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(t);
    let mut rs = Vec::with_capacity(t);
    for _ in 0..t {
        let x: Vec<f64> = theta.iter().map(|_| rng.normal()).collect();
        let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        rs.push(rng.bernoulli(sigmoid(z)) as u8);
        xs.push(x);
    }
    (xs, rs)
}

/// Unnormalized log posterior under an isotropic `N(0, prior_var I)` prior.
pub fn log_posterior(theta: &[f64], xs: &[Vec<f64>], rs: &[u8], prior_var: f64) -> f64 {
    let mut lp = -theta.iter().map(|v| v * v).sum::<f64>() / (2.0 * prior_var);
    for (x, &r) in xs.iter().zip(rs) {
        let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        // log σ(z) and log(1 - σ(z)) in a stable form
        let log1pexp = |u: f64| if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
        lp -= if r == 1 { log1pexp(-z) } else { log1pexp(z) };
    }
    lp
}

/// Posterior mean and variance in one dimension by the trapezoid rule on
/// a fine grid.
pub fn quadrature_1d(xs: &[Vec<f64>], rs: &[u8], prior_var: f64) -> (f64, f64) {
    let (lo, hi, n) = (-12.0, 12.0, 48_001usize);
    let h = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let logs: Vec<f64> = grid.iter().map(|&v| log_posterior(&[v], xs, rs, prior_var)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, (&v, &l)) in grid.iter().zip(&logs).enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * (l - top).exp();
        z += w;
        m1 += w * v;
        m2 += w * v * v;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Posterior means and marginal variances in two dimensions on a grid.
pub fn grid_2d(xs: &[Vec<f64>], rs: &[u8], prior_var: f64) -> ([f64; 2], [f64; 2]) {
    let (lo, hi, n) = (-8.0, 8.0, 801usize);
    let h = (hi - lo) / (n - 1) as f64;
    let mut logs = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let th = [lo + i as f64 * h, lo + j as f64 * h];
            logs.push(log_posterior(&th, xs, rs, prior_var));
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m1 = [0.0; 2];
    let mut m2 = [0.0; 2];
    for i in 0..n {
        for j in 0..n {
            let w = (logs[i * n + j] - top).exp();
            let th = [lo + i as f64 * h, lo + j as f64 * h];
            z += w;
            for k in 0..2 {
                m1[k] += w * th[k];
                m2[k] += w * th[k] * th[k];
            }
        }
    }
    let mean = [m1[0] / z, m1[1] / z];
    (mean, [m2[0] / z - mean[0] * mean[0], m2[1] / z - mean[1] * mean[1]])
}

/// Gibbs chain on `(xs, rs)` under `N(0, prior_var I)`: `warmup` discarded
/// sweeps, then `keep` recorded ones.
pub fn gibbs_chain(xs: &[Vec<f64>], rs: &[u8], prior_var: f64, warmup: usize, keep: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = xs[0].len();
    let mut history = BanditHistory::new(d);
    for (x, &r) in xs.iter().zip(rs) {
        history.push(x, 0, r).unwrap();
    }
    let prior = PreparedPrior::new(GaussianBelief::isotropic(d, 0.0, prior_var).unwrap());
    let mut sampler = PolyaGammaSampler::new();
    let mut rng = RandomSource::seed_from_u64(seed);
    let mut theta = DVector::zeros(d);
    let mut out = Vec::with_capacity(keep);
    for i in 0..warmup + keep {
        theta = gibbs_sweep(&history, theta.as_slice(), &prior, &mut sampler, &mut rng).unwrap();
        if i >= warmup {
            out.push(theta.as_slice().to_vec());
        }
    }
    out
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

//! Pólya-Gamma random variates.
//!
//! `PG(b, c)` is the law of
//!
//! ```text
//! X = 1/(2π²) Σ_{k≥1} G_k / ((k - 1/2)² + c²/(4π²)),   G_k ~ Gamma(b, 1)
//! ```
//!
//! [`PolyaGammaSampler`] draws `PG(1, c)` exactly with Devroye's
//! alternating-series accept-reject method (proposal: exponential tail beyond
//! the truncation point 0.64, truncated inverse Gaussian below it). Integer
//! `b` is handled by summing `b` independent `PG(1, c)` draws.
//! [`sample_pg_series`] and [`pg_mean`] evaluate the truncated series
//! directly and are used as reference oracles.

use std::f64::consts::{FRAC_2_PI, PI};

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Truncation point separating the two proposal pieces.
const TRUNC: f64 = 0.64;
const PI_SQ_OVER_8: f64 = PI * PI / 8.0;

/// Upper bound on outer proposals for a single draw.
pub const PROPOSAL_CAP: usize = 10_000;

/// Parameters of `PG(b, c)` restricted to integer shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyaGammaParams {
    b: u32,
    c: f64,
}

impl PolyaGammaParams {
    pub fn new(b: u32, c: f64) -> Result<Self> {
        if b < 1 {
            return Err(Error::InvalidParameter(format!(
                "Polya-Gamma shape b must be >= 1, got {b}"
            )));
        }
        if !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Polya-Gamma tilt c must be finite, got {c}"
            )));
        }
        Ok(Self { b, c })
    }

    pub fn shape(&self) -> u32 {
        self.b
    }

    pub fn tilt(&self) -> f64 {
        self.c
    }
}

/// Proposal/acceptance counters for the accept-reject loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub proposals: u64,
    pub acceptances: u64,
}

impl SamplerStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.acceptances as f64 / self.proposals as f64
        }
    }
}

/// Anything that can produce `PG(1, c)` draws and report its acceptance
/// statistics. The diagnostics harness is generic over this so that a
/// deliberately broken sampler can be substituted in tests.
pub trait Pg1Source {
    fn draw_pg1(&mut self, tilt: f64, rng: &mut RandomSource) -> Result<f64>;
    fn stats(&self) -> SamplerStats;
    fn reset_stats(&mut self);
}

/// Exact `PG(1, c)` sampler with instrumentation.
#[derive(Debug, Clone, Default)]
pub struct PolyaGammaSampler {
    stats: SamplerStats,
}

impl PolyaGammaSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> SamplerStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SamplerStats::default();
    }

    /// One draw from `PG(1, c)`. The law depends on `c` only through `|c|`.
    pub fn sample_pg1(&mut self, c: f64, rng: &mut RandomSource) -> Result<f64> {
        if !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Polya-Gamma tilt c must be finite, got {c}"
            )));
        }
        // PG(1, c) = J*(1, c/2) / 4
        let z = 0.5 * c.abs();
        let fz = PI_SQ_OVER_8 + 0.5 * z * z;
        let p_exp = exponential_mass(z);

        for _ in 0..PROPOSAL_CAP {
            self.stats.proposals += 1;
            let x = if rng.uniform() < p_exp {
                TRUNC + rng.exponential() / fz
            } else {
                truncated_inverse_gaussian(z, rng).ok_or(Error::SamplerFault {
                    cap: PROPOSAL_CAP,
                    tilt: c,
                })?
            };

            // Alternating series: partial sums bracket the target density.
            let mut s = series_coef(0, x);
            let y = rng.uniform() * s;
            let mut n = 0usize;
            loop {
                n += 1;
                if n % 2 == 1 {
                    s -= series_coef(n, x);
                    if y <= s {
                        self.stats.acceptances += 1;
                        return Ok(0.25 * x);
                    }
                } else {
                    s += series_coef(n, x);
                    if y > s {
                        break;
                    }
                }
            }
        }
        Err(Error::SamplerFault {
            cap: PROPOSAL_CAP,
            tilt: c,
        })
    }

    /// One draw from `PG(b, c)` for integer `b`, as a sum of `b` independent
    /// `PG(1, c)` draws.
    pub fn sample_pg(&mut self, params: PolyaGammaParams, rng: &mut RandomSource) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..params.b {
            total += self.sample_pg1(params.c, rng)?;
        }
        Ok(total)
    }
}

impl Pg1Source for PolyaGammaSampler {
    fn draw_pg1(&mut self, tilt: f64, rng: &mut RandomSource) -> Result<f64> {
        self.sample_pg1(tilt, rng)
    }

    fn stats(&self) -> SamplerStats {
        self.stats
    }

    fn reset_stats(&mut self) {
        self.stats = SamplerStats::default();
    }
}

/// n-th coefficient of the alternating series for the `J*(1, 0)` density,
/// using the left (x ≤ 0.64) or right piece.
#[inline]
fn series_coef(n: usize, x: f64) -> f64 {
    let half = n as f64 + 0.5;
    let k = half * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * half * half / x).exp()
    } else {
        0.0
    }
}

/// Probability that the mixture proposal takes the exponential branch.
fn exponential_mass(z: f64) -> f64 {
    let fz = PI_SQ_OVER_8 + 0.5 * z * z;
    let root = (1.0 / TRUNC).sqrt();
    let b = root * (TRUNC * z - 1.0);
    let a = -root * (TRUNC * z + 1.0);
    let x0 = fz.ln() + fz * TRUNC;
    let xb = x0 - z + ln_normal_cdf(b);
    let xa = x0 + z + ln_normal_cdf(a);
    let q_over_p = 2.0 * FRAC_2_PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

#[inline]
fn ln_normal_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Inverse Gaussian with mean `1/z` and unit shape, truncated to `(0, 0.64]`.
/// Returns `None` if the inner rejection loop exceeds the proposal cap.
fn truncated_inverse_gaussian(z: f64, rng: &mut RandomSource) -> Option<f64> {
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > TRUNC {
        // Truncated Lévy proposal, thinned by exp(-z² x / 2).
        for _ in 0..PROPOSAL_CAP {
            let mut e1 = rng.exponential();
            let mut e2 = rng.exponential();
            let mut guard = 0;
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = rng.exponential();
                e2 = rng.exponential();
                guard += 1;
                if guard > PROPOSAL_CAP {
                    return None;
                }
            }
            let x = TRUNC / (1.0 + TRUNC * e1).powi(2);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.uniform() <= alpha {
                return Some(x);
            }
        }
        None
    } else {
        for _ in 0..PROPOSAL_CAP {
            let y = rng.normal().powi(2);
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.uniform() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= TRUNC {
                return Some(x);
            }
        }
        None
    }
}

/// Mean of the series truncated after `terms` summands:
/// `b/(2π²) Σ_{k=1}^{terms} 1/((k - 1/2)² + c²/(4π²))`.
///
/// No tail correction is applied; the omitted tail is `O(b/terms)`.
pub fn pg_mean(b: u32, c: f64, terms: usize) -> f64 {
    let shift = c * c / (4.0 * PI * PI);
    // smallest terms first
    let sum: f64 = (1..=terms)
        .rev()
        .map(|k| {
            let h = k as f64 - 0.5;
            1.0 / (h * h + shift)
        })
        .sum();
    b as f64 * sum / (2.0 * PI * PI)
}

/// Minimum number of series terms accepted by [`sample_pg_series`].
pub const MIN_SERIES_TERMS: usize = 100;

/// Draw from `PG(b, c)` by simulating the gamma series truncated after
/// `terms` summands.
pub fn sample_pg_series(params: PolyaGammaParams, terms: usize, rng: &mut RandomSource) -> Result<f64> {
    if terms < MIN_SERIES_TERMS {
        return Err(Error::InvalidParameter(format!(
            "series sampler needs at least {MIN_SERIES_TERMS} terms, got {terms}"
        )));
    }
    let shift = params.c * params.c / (4.0 * PI * PI);
    let shape = params.b as f64;
    let mut sum = 0.0;
    for k in 1..=terms {
        let h = k as f64 - 0.5;
        let g = if params.b == 1 {
            rng.exponential()
        } else {
            rng.gamma(shape)
        };
        sum += g / (h * h + shift);
    }
    Ok(sum / (2.0 * PI * PI))
}

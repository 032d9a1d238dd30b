//! Dense Gaussian machinery for the Gibbs sampler.
//!
//! Every solve goes through a Cholesky factor; no routine here forms an
//! explicit inverse by elimination. When a factorisation fails the diagonal
//! is jittered by `1e-10 · trace(A)/d`, escalating tenfold for up to three
//! retries before giving up.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub const JITTER_RETRIES: usize = 3;
const JITTER_SCALE: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn try_factor(a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = Cholesky::new(a)?.unpack();
    l.iter().all(|v| v.is_finite()).then_some(l)
}

/// Lower-triangular `L` with `L Lᵀ = A`, applying the jitter policy when the
/// plain factorisation fails.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    cholesky_unchecked(a)
}

/// Same as [`cholesky`] but skips the symmetry check; only the lower
/// triangle of `a` is read.
pub(crate) fn cholesky_unchecked(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(l) = try_factor(a.clone()) {
        return Ok(l);
    }
    let d = a.nrows().max(1) as f64;
    let mut base = a.trace() / d;
    if !(base.is_finite() && base > 0.0) {
        base = 1.0;
    }
    let mut jitter = JITTER_SCALE * base;
    for _ in 0..JITTER_RETRIES {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(l) = try_factor(shifted) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::Factorization {
        attempts: JITTER_RETRIES + 1,
    })
}

/// `A⁻¹ B` for SPD `A` given its lower Cholesky factor.
fn chol_solve(l: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l
        .solve_lower_triangular(rhs)
        .expect("Cholesky factor has a positive diagonal");
    l.tr_solve_lower_triangular(&y)
        .expect("Cholesky factor has a positive diagonal")
}

fn chol_solve_vec(l: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let y = l
        .solve_lower_triangular(rhs)
        .expect("Cholesky factor has a positive diagonal");
    l.tr_solve_lower_triangular(&y)
        .expect("Cholesky factor has a positive diagonal")
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Gaussian over the coefficient vector: a prior `(b, B)` or a conditional
/// posterior `(m_ω, V_ω)`. Construction validates symmetry and caches the
/// Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(Error::InvalidInput(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let factor = cholesky(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    /// `MVN(mean · 1, variance · I_d)`.
    pub fn isotropic(dim: usize, mean: f64, variance: f64) -> Result<Self> {
        if dim == 0 || variance.is_nan() || variance <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "isotropic belief needs dim >= 1 and variance > 0 (got {dim}, {variance})"
            )));
        }
        Self::new(
            DVector::from_element(dim, mean),
            DMatrix::from_diagonal_element(dim, dim, variance),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of the covariance (possibly jittered).
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// `mean + L z` for a caller-supplied standard-normal vector `z`.
pub fn mvn_from_normals(belief: &GaussianBelief, z: &DVector<f64>) -> DVector<f64> {
    &belief.mean + &belief.factor * z
}

/// One draw from the belief.
pub fn sample_mvn(belief: &GaussianBelief, rng: &mut RandomSource) -> DVector<f64> {
    let z = DVector::from_fn(belief.dim(), |_, _| rng.normal());
    mvn_from_normals(belief, &z)
}

/// Design data for one Gibbs conditional: chosen contexts `X` (t×d),
/// `κ = r - 1/2` and the Pólya-Gamma draws `ω`.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    x: DMatrix<f64>,
    kappa: DVector<f64>,
    omega: DVector<f64>,
}

impl DesignBundle {
    pub fn new(x: DMatrix<f64>, kappa: DVector<f64>, omega: DVector<f64>) -> Result<Self> {
        let t = x.nrows();
        if kappa.len() != t || omega.len() != t {
            return Err(Error::InvalidInput(format!(
                "design has {t} rows but kappa has {} and omega {}",
                kappa.len(),
                omega.len()
            )));
        }
        if kappa.iter().any(|&k| k != 0.5 && k != -0.5) {
            return Err(Error::InvalidInput("kappa entries must be +-1/2".into()));
        }
        if omega.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("omega entries must be positive".into()));
        }
        Ok(Self { x, kappa, omega })
    }

    /// Builds `κ` from 0/1 rewards.
    pub fn from_rewards(x: DMatrix<f64>, rewards: &[u8], omega: DVector<f64>) -> Result<Self> {
        let kappa = DVector::from_iterator(rewards.len(), rewards.iter().map(|&r| r as f64 - 0.5));
        Self::new(x, kappa, omega)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }
}

/// Prior with `B⁻¹` and `B⁻¹ b` precomputed; both are invariant across
/// Gibbs sweeps.
#[derive(Debug, Clone)]
pub struct PreparedPrior {
    belief: GaussianBelief,
    precision: DMatrix<f64>,
    precision_mean: DVector<f64>,
}

impl PreparedPrior {
    pub fn new(belief: GaussianBelief) -> Self {
        let d = belief.dim();
        let mut precision = chol_solve(&belief.factor, &DMatrix::identity(d, d));
        symmetrize(&mut precision);
        let precision_mean = chol_solve_vec(&belief.factor, &belief.mean);
        Self {
            belief,
            precision,
            precision_mean,
        }
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn dim(&self) -> usize {
        self.belief.dim()
    }

    /// `B⁻¹`
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `B⁻¹ b`
    pub fn precision_mean(&self) -> &DVector<f64> {
        &self.precision_mean
    }

    /// Conditional posterior from row-major contexts, PG draws and the
    /// precomputed `Xᵀκ`.
    pub fn conditional_rows(
        &self,
        rows: &[f64],
        omega: &[f64],
        xt_kappa: &[f64],
    ) -> Result<ConditionalPosterior> {
        let d = self.dim();
        debug_assert_eq!(rows.len(), omega.len() * d);
        debug_assert_eq!(xt_kappa.len(), d);

        // lower triangle of XᵀΩX, accumulated row by row
        let mut acc = vec![0.0; d * d];
        for (x, &w) in rows.chunks_exact(d).zip(omega) {
            for a in 0..d {
                let wa = w * x[a];
                let row = &mut acc[a * d..a * d + a + 1];
                for (slot, &xb) in row.iter_mut().zip(&x[..=a]) {
                    *slot += wa * xb;
                }
            }
        }
        let mut precision = self.precision.clone();
        for a in 0..d {
            for b in 0..=a {
                let v = acc[a * d + b];
                precision[(a, b)] += v;
                if a != b {
                    precision[(b, a)] += v;
                }
            }
        }
        let shift = DVector::from_iterator(
            d,
            self.precision_mean.iter().zip(xt_kappa).map(|(p, k)| p + k),
        );
        ConditionalPosterior::from_precision(precision, &shift)
    }

    pub fn conditional(&self, bundle: &DesignBundle) -> Result<ConditionalPosterior> {
        let d = self.dim();
        if !bundle.is_empty() && bundle.x.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "design has {} columns but prior has dimension {d}",
                bundle.x.ncols()
            )));
        }
        let rows: Vec<f64> = bundle.x.transpose().iter().copied().collect();
        let xt_kappa = if bundle.is_empty() {
            DVector::zeros(d)
        } else {
            bundle.x.tr_mul(&bundle.kappa)
        };
        self.conditional_rows(&rows, bundle.omega.as_slice(), xt_kappa.as_slice())
    }
}

/// Gaussian in precision form: mean `m = P⁻¹ h` and the Cholesky factor of
/// `P`. Draws use `m + L⁻ᵀ z`, so `V = P⁻¹` is never needed for sampling.
#[derive(Debug, Clone)]
pub struct ConditionalPosterior {
    mean: DVector<f64>,
    precision_factor: DMatrix<f64>,
}

impl ConditionalPosterior {
    pub fn from_precision(precision: DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        let precision_factor = cholesky_unchecked(&precision)?;
        let mean = chol_solve_vec(&precision_factor, shift);
        Ok(Self {
            mean,
            precision_factor,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sample(&self, rng: &mut RandomSource) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.normal());
        let offset = self
            .precision_factor
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + offset
    }

    /// Covariance form `(m_ω, V_ω)`.
    pub fn to_belief(&self) -> Result<GaussianBelief> {
        let d = self.mean.len();
        let mut cov = chol_solve(&self.precision_factor, &DMatrix::identity(d, d));
        symmetrize(&mut cov);
        GaussianBelief::new(self.mean.clone(), cov)
    }
}

/// `(m_ω, V_ω)` with `V_ω = (XᵀΩX + B⁻¹)⁻¹` and
/// `m_ω = V_ω (Xᵀκ + B⁻¹ b)`. An empty bundle returns the prior itself.
pub fn pg_conditional_posterior(
    bundle: &DesignBundle,
    prior: &GaussianBelief,
) -> Result<GaussianBelief> {
    if bundle.is_empty() {
        return Ok(prior.clone());
    }
    PreparedPrior::new(prior.clone())
        .conditional(bundle)?
        .to_belief()
}

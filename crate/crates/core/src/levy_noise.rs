//! Increments of Lévy processes for the samplable families of triplets
//! `(a, Sigma, nu)`: Brownian motion with drift, compound Poisson with Gaussian
//! jumps, and symmetric alpha-stable noise (isotropic or along one direction).

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum StableMode {
    /// Rotation-invariant law with characteristic function `exp(-|scale u|^alpha)`,
    /// sampled as `sqrt(W) G` with `W` positive `(alpha/2)`-stable.
    Isotropic,
    /// Scalar symmetric stable noise along a fixed vector.
    Projected(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum JumpSpec {
    None,
    /// Poisson arrivals with `N(jump_mean, S S^T)` jump sizes, `S = jump_cov_sqrt`.
    CompoundPoisson {
        rate: f64,
        jump_mean: Vec<f64>,
        jump_cov_sqrt: DMatrix<f64>,
    },
    /// Symmetric stable jumps, `exp(-|scale u|^alpha)` per unit time.
    AlphaStable {
        alpha: f64,
        scale: f64,
        mode: StableMode,
    },
}

/// A Lévy triplet restricted to named families, together with the moment
/// order `p_star` the noise is declared to have.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyTriplet {
    dim: usize,
    drift_a: Vec<f64>,
    sigma_sqrt: DMatrix<f64>,
    jumps: JumpSpec,
    p_star: f64,
}

impl LevyTriplet {
    pub fn new(
        drift_a: Vec<f64>,
        sigma_sqrt: DMatrix<f64>,
        jumps: JumpSpec,
        p_star: f64,
    ) -> Result<Self> {
        let dim = drift_a.len();
        if dim == 0 {
            return Err(Error::InvalidNoise("dimension must be positive".into()));
        }
        if sigma_sqrt.nrows() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: sigma_sqrt.nrows(),
            });
        }
        if !(p_star > 0.0) {
            return Err(Error::InvalidNoise(format!("p_star must be positive, got {p_star}")));
        }
        match &jumps {
            JumpSpec::None => {}
            JumpSpec::CompoundPoisson {
                rate,
                jump_mean,
                jump_cov_sqrt,
            } => {
                if !(*rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::InvalidNoise(format!("jump rate {rate} must be >= 0")));
                }
                if jump_mean.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: jump_mean.len(),
                    });
                }
                if jump_cov_sqrt.nrows() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: jump_cov_sqrt.nrows(),
                    });
                }
            }
            JumpSpec::AlphaStable { alpha, scale, mode } => {
                if !(*alpha > 0.0 && *alpha <= 2.0) {
                    return Err(Error::InvalidAlpha(*alpha));
                }
                if !(*scale >= 0.0) {
                    return Err(Error::InvalidNoise(format!("stable scale {scale} must be >= 0")));
                }
                if *alpha < 2.0 && p_star >= *alpha {
                    return Err(Error::InvalidNoise(format!(
                        "alpha-stable noise only has moments of order below alpha = {alpha}, p_star = {p_star}"
                    )));
                }
                if let StableMode::Projected(v) = mode {
                    if v.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            found: v.len(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            dim,
            drift_a,
            sigma_sqrt,
            jumps,
            p_star,
        })
    }

    /// Standard Brownian motion in `R^dim`; all moments are finite.
    pub fn brownian(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim), JumpSpec::None, f64::INFINITY)
    }

    /// Brownian motion `sigma_sqrt B_t` with a possibly rank-deficient factor.
    pub fn degenerate_brownian(sigma_sqrt: DMatrix<f64>) -> Result<Self> {
        let dim = sigma_sqrt.nrows();
        Self::new(vec![0.0; dim], sigma_sqrt, JumpSpec::None, f64::INFINITY)
    }

    pub fn stable_isotropic(dim: usize, alpha: f64, scale: f64, p_star: f64) -> Result<Self> {
        Self::new(
            vec![0.0; dim],
            DMatrix::zeros(dim, 0),
            JumpSpec::AlphaStable {
                alpha,
                scale,
                mode: StableMode::Isotropic,
            },
            p_star,
        )
    }

    pub fn stable_projected(direction: Vec<f64>, alpha: f64, scale: f64, p_star: f64) -> Result<Self> {
        let dim = direction.len();
        Self::new(
            vec![0.0; dim],
            DMatrix::zeros(dim, 0),
            JumpSpec::AlphaStable {
                alpha,
                scale,
                mode: StableMode::Projected(direction),
            },
            p_star,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_star(&self) -> f64 {
        self.p_star
    }

    pub fn drift_a(&self) -> &[f64] {
        &self.drift_a
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt
    }

    pub fn jumps(&self) -> &JumpSpec {
        &self.jumps
    }

    /// `Sigma = S S^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma_sqrt * self.sigma_sqrt.transpose()
    }

    /// Writes one increment `L_{t+dt} - L_t` into `out`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        debug_assert!(dt > 0.0);
        let d = self.dim;
        for i in 0..d {
            out[i] = self.drift_a[i] * dt;
        }
        let k = self.sigma_sqrt.ncols();
        if k > 0 {
            let sq = dt.sqrt();
            for j in 0..k {
                let xi: f64 = rng.sample(StandardNormal);
                for i in 0..d {
                    out[i] += self.sigma_sqrt[(i, j)] * sq * xi;
                }
            }
        }
        match &self.jumps {
            JumpSpec::None => {}
            JumpSpec::CompoundPoisson {
                rate,
                jump_mean,
                jump_cov_sqrt,
            } => {
                let lambda = rate * dt;
                if lambda > 0.0 {
                    let count = Poisson::new(lambda)
                        .map(|p| p.sample(rng) as u64)
                        .unwrap_or(0);
                    let kk = jump_cov_sqrt.ncols();
                    for _ in 0..count {
                        for i in 0..d {
                            out[i] += jump_mean[i];
                        }
                        for j in 0..kk {
                            let xi: f64 = rng.sample(StandardNormal);
                            for i in 0..d {
                                out[i] += jump_cov_sqrt[(i, j)] * xi;
                            }
                        }
                    }
                }
            }
            JumpSpec::AlphaStable { alpha, scale, mode } => {
                let s = scale * dt.powf(1.0 / alpha);
                match mode {
                    StableMode::Projected(v) => {
                        let z = s * symmetric_stable(*alpha, rng);
                        for i in 0..d {
                            out[i] += v[i] * z;
                        }
                    }
                    StableMode::Isotropic => {
                        let w = if *alpha >= 2.0 {
                            1.0
                        } else {
                            positive_stable(0.5 * alpha, rng)
                        };
                        // G ~ N(0, 2 s^2 I) so that E exp(i u.X) = exp(-(s|u|)^alpha).
                        let g_scale = s * (2.0 * w).sqrt();
                        for o in out.iter_mut().take(d) {
                            let xi: f64 = rng.sample(StandardNormal);
                            *o += g_scale * xi;
                        }
                    }
                }
            }
        }
    }

    pub fn increment_vec<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_increment(dt, rng, &mut out);
        out
    }
}

/// Standard symmetric alpha-stable variate, characteristic function
/// `exp(-|u|^alpha)`, by the Chambers–Mallows–Stuck method.
pub fn symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = uniform_open(rng, -FRAC_PI_2, FRAC_PI_2);
    let w: f64 = rng.sample(Exp1);
    if alpha == 1.0 {
        return v.tan();
    }
    let num = (alpha * v).sin();
    let den = v.cos().powf(1.0 / alpha);
    num / den * ((v - alpha * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variate of index `beta in (0, 1)` with Laplace transform
/// `E exp(-s W) = exp(-s^beta)` (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let v = uniform_open(rng, -FRAC_PI_2, FRAC_PI_2);
    let w: f64 = rng.sample(Exp1);
    let shifted = beta * (v + FRAC_PI_2);
    shifted.sin() / v.cos().powf(1.0 / beta) * ((v - shifted).cos() / w).powf((1.0 - beta) / beta)
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return lo + (hi - lo) * u;
        }
    }
}

/// Mean of `|x|^p` over row-major samples of dimension `dim`.
pub fn empirical_moment(samples: &[f64], dim: usize, p: f64) -> Result<f64> {
    if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
        return Err(Error::InvalidArgument(
            "samples must be a nonempty multiple of the dimension".into(),
        ));
    }
    let n = samples.len() / dim;
    let values: Vec<f64> = samples
        .chunks_exact(dim)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
        .collect();
    Ok(pairwise_sum(&values) / n as f64)
}

/// Pairwise summation; the result depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 64 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

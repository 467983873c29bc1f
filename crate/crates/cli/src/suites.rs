//! Builtin sample laws, shift vectors and test matrices.

use cutoff_lab::rng::{stream, Purpose};
use cutoff_lab::wasserstein::EmpiricalMeasure;
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::Serialize;

/// Unit-variance sample laws on `R^d`, each coordinate drawn independently
/// unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    Uniform,
    /// Difference of two exponentials.
    Laplace,
    /// `Exp(1) - 1`, skewed.
    Exponential,
    /// Equal mixture of `N(+-a, I/4)` with `a = sqrt(3/4) (1, ..., 1)`.
    Mixture,
}

pub const LAWS: [Law; 5] = [Law::Gaussian, Law::Uniform, Law::Laplace, Law::Exponential, Law::Mixture];

impl Law {
    pub fn name(self) -> &'static str {
        match self {
            Law::Gaussian => "gaussian",
            Law::Uniform => "uniform",
            Law::Laplace => "laplace",
            Law::Exponential => "exponential",
            Law::Mixture => "mixture",
        }
    }

    fn index(self) -> u64 {
        LAWS.iter().position(|l| *l == self).unwrap() as u64
    }

    /// `n` points in dimension `d` from the law's own stream.
    pub fn sample(self, n: usize, d: usize, seed: u64) -> EmpiricalMeasure {
        let mut rng = stream(seed, Purpose::Sampler, 100 + self.index());
        let exp = Exp::new(1.0).unwrap();
        let r2 = std::f64::consts::SQRT_2;
        let mut pts = Vec::with_capacity(n * d);
        for _ in 0..n {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for _ in 0..d {
                let v = match self {
                    Law::Gaussian => rng.sample::<f64, _>(StandardNormal),
                    Law::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
                    Law::Laplace => (rng.sample(exp) - rng.sample(exp)) / r2,
                    Law::Exponential => rng.sample(exp) - 1.0,
                    Law::Mixture => sign * 0.75f64.sqrt() + 0.5 * rng.sample::<f64, _>(StandardNormal),
                };
                pts.push(v);
            }
        }
        EmpiricalMeasure::uniform(pts, d).unwrap()
    }
}

pub const SHIFT_NORMS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

/// Five shift vectors of lengths [`SHIFT_NORMS`] in fixed directions.
pub fn shifts(d: usize) -> Vec<Vec<f64>> {
    SHIFT_NORMS
        .iter()
        .enumerate()
        .map(|(k, &len)| {
            let dir: Vec<f64> = (0..d).map(|i| ((k + 1) as f64 * (i as f64 + 0.5)).cos()).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter().map(|v| len * v / n).collect()
        })
        .collect()
}

/// A matrix `A` (drift `b(x) = A x`) and direction `w` with known cutoff data.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCase {
    pub name: &'static str,
    pub matrix: DMatrix<f64>,
    pub w: Vec<f64>,
    pub q: f64,
    pub ell: usize,
    pub m: usize,
    pub thetas: Vec<f64>,
    pub defective: bool,
    /// Horizon of the Hartman-Grobman residual check.
    pub t_max: f64,
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

fn jordan(lambda: f64, k: usize) -> DMatrix<f64> {
    let mut j = DMatrix::identity(k, k) * lambda;
    for i in 0..k - 1 {
        j[(i, i + 1)] = 1.0;
    }
    j
}

pub fn spectral_suite() -> Vec<SpectralCase> {
    let s = dmatrix![1.0, 0.5, 0.0; 0.2, 1.0, 0.3; 0.0, 0.4, 1.0];
    let similar = &s * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.5, 4.0])) * s.clone().try_inverse().unwrap();
    let rot = |q: f64, eta: f64| dmatrix![q, eta; -eta, q];
    let mut complex_jordan = block_diag(&[rot(1.0, 1.0), rot(1.0, 1.0)]);
    complex_jordan[(0, 2)] = 1.0;
    complex_jordan[(1, 3)] = 1.0;
    let case = |name, matrix: DMatrix<f64>, w: Vec<f64>, q, ell, thetas: Vec<f64>, defective, t_max| SpectralCase {
        name,
        matrix,
        w,
        q,
        ell,
        m: thetas.len(),
        thetas,
        defective,
        t_max,
    };
    vec![
        case("diagonal", DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])), vec![1.0; 3], 1.0, 1, vec![0.0], false, 40.0),
        case("dense_similar", similar, vec![1.0, -1.0, 2.0], 1.0, 1, vec![0.0], false, 80.0),
        case("slow_mode_absent", DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), vec![0.0, 1.0], 2.0, 1, vec![0.0], false, 40.0),
        case("rotation", rot(1.0, 2.0), vec![1.0, 0.0], 1.0, 1, vec![2.0, -2.0], false, 40.0),
        case("jordan_2", jordan(1.0, 2), vec![1.0, 1.0], 1.0, 2, vec![0.0], true, 80.0),
        case("jordan_3", jordan(0.5, 3), vec![0.0, 0.0, 1.0], 0.5, 3, vec![0.0], true, 160.0),
        case("nested_jordan", block_diag(&[jordan(1.0, 2), jordan(1.0, 3)]), vec![1.0; 5], 1.0, 3, vec![0.0], true, 80.0),
        case("jordan_plus_fast", block_diag(&[jordan(1.0, 2), DMatrix::from_element(1, 1, 3.0)]), vec![1.0; 3], 1.0, 2, vec![0.0], true, 80.0),
        case("mixed_real_complex", block_diag(&[DMatrix::from_element(1, 1, 1.0), rot(1.0, 1.0)]), vec![1.0; 3], 1.0, 1, vec![0.0, 1.0, -1.0], false, 40.0),
        case("complex_jordan", complex_jordan, vec![1.0; 4], 1.0, 2, vec![1.0, -1.0], true, 80.0),
    ]
}

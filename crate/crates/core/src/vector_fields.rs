//! Drift vector fields `b` with exact Jacobians.
//!
//! The process integrated everywhere is `dX = -b(X) dt + eps dL`, so a field is
//! "good" when `b(0) = 0` and `<b(x) - b(y), x - y> >= delta |x - y|^2`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Absolute tolerance on `|b(0)|`.
pub const FIXED_POINT_TOL: f64 = 1e-12;

pub type EvalFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes the Jacobian in row-major order into a `dim * dim` buffer.
pub type JacobianFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Angular part `F` of the oscillator drift: `F(x) = -eta0 + k |x|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OscillatorRotation {
    Constant,
    Radial { k: f64 },
}

/// Potential `H` of the oscillator drift:
/// `H(x) = -(a x1^2 + b x2^2)/2 - c x1 x2 - (k/4) |x|^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OscillatorPotential {
    Quadratic,
    Quartic { k: f64 },
}

/// Perturbed harmonic oscillator with `a = -H_11(0)`, `b = -H_22(0)`,
/// `c = -H_12(0)` and `eta0 = -F(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub eta0: f64,
    pub rotation: OscillatorRotation,
    pub potential: OscillatorPotential,
}

impl OscillatorParams {
    /// Linear oscillator: constant `F` and quadratic `H`.
    pub fn linear(a: f64, b: f64, c: f64, eta0: f64) -> Self {
        Self {
            a,
            b,
            c,
            eta0,
            rotation: OscillatorRotation::Constant,
            potential: OscillatorPotential::Quadratic,
        }
    }

    fn rotation_k(&self) -> f64 {
        match self.rotation {
            OscillatorRotation::Constant => 0.0,
            OscillatorRotation::Radial { k } => k,
        }
    }

    fn quartic_k(&self) -> f64 {
        match self.potential {
            OscillatorPotential::Quadratic => 0.0,
            OscillatorPotential::Quartic { k } => k,
        }
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        -self.eta0 + self.rotation_k() * (x[0] * x[0] + x[1] * x[1])
    }

    pub fn grad_f(&self, x: &[f64]) -> [f64; 2] {
        let k = self.rotation_k();
        [2.0 * k * x[0], 2.0 * k * x[1]]
    }

    pub fn grad_h(&self, x: &[f64]) -> [f64; 2] {
        let k = self.quartic_k();
        let r2 = x[0] * x[0] + x[1] * x[1];
        [
            -self.a * x[0] - self.c * x[1] - k * r2 * x[0],
            -self.b * x[1] - self.c * x[0] - k * r2 * x[1],
        ]
    }

    /// `[H_11, H_12, H_22]`.
    pub fn hess_h(&self, x: &[f64]) -> [f64; 3] {
        let k = self.quartic_k();
        let r2 = x[0] * x[0] + x[1] * x[1];
        [
            -self.a - k * (r2 + 2.0 * x[0] * x[0]),
            -self.c - 2.0 * k * x[0] * x[1],
            -self.b - k * (r2 + 2.0 * x[1] * x[1]),
        ]
    }

    /// `Jb(0, 0) = [[a, c - eta0], [c + eta0, b]]`.
    pub fn jacobian_at_origin(&self) -> Matrix2<f64> {
        Matrix2::new(self.a, self.c - self.eta0, self.c + self.eta0, self.b)
    }

    /// `(a - b)^2 + 4 (c^2 - eta0^2)`.
    pub fn discriminant(&self) -> f64 {
        (self.a - self.b).powi(2) + 4.0 * (self.c * self.c - self.eta0 * self.eta0)
    }

    /// Eigenvalues `((a + b) +- sqrt(Delta)) / 2` of `Jb(0, 0)`, `+` first.
    pub fn eigenvalues(&self) -> [nalgebra::Complex<f64>; 2] {
        let delta = self.discriminant();
        let half_sum = 0.5 * (self.a + self.b);
        let root = if delta >= 0.0 {
            nalgebra::Complex::new(0.5 * delta.sqrt(), 0.0)
        } else {
            nalgebra::Complex::new(0.0, 0.5 * (-delta).sqrt())
        };
        [
            nalgebra::Complex::new(half_sum, 0.0) + root,
            nalgebra::Complex::new(half_sum, 0.0) - root,
        ]
    }

    /// Eigenvectors `(1, -(a - b -+ sqrt(Delta)) / (2 (c - eta0)))` of `Jb(0, 0)`,
    /// matching [`Self::eigenvalues`]. `None` when `eta0 == c`.
    pub fn eigenvectors(&self) -> Option<[[nalgebra::Complex<f64>; 2]; 2]> {
        let denom = 2.0 * (self.c - self.eta0);
        if denom == 0.0 {
            return None;
        }
        let delta = self.discriminant();
        let root = if delta >= 0.0 {
            nalgebra::Complex::new(delta.sqrt(), 0.0)
        } else {
            nalgebra::Complex::new(0.0, (-delta).sqrt())
        };
        let amb = nalgebra::Complex::new(self.a - self.b, 0.0);
        let one = nalgebra::Complex::new(1.0, 0.0);
        Some([
            [one, -(amb - root) / denom],
            [one, -(amb + root) / denom],
        ])
    }

    /// Smallest eigenvalue of the symmetric part `[[a, c], [c, b]]`. This is a
    /// global dissipativity constant as long as the quartic confinement
    /// dominates the radial rotation, `k_H >= |k_F|`.
    pub fn claimed_delta(&self) -> f64 {
        let mean = 0.5 * (self.a + self.b);
        let radius = (0.25 * (self.a - self.b).powi(2) + self.c * self.c).sqrt();
        mean - radius
    }
}

#[derive(Clone)]
pub enum FieldKind {
    /// `b(x) = x (1 + |x|^2)`, the gradient of `|x|^2/2 + |x|^4/4`.
    Fput,
    /// `b(x) = Q x` with `Q` stored row-major.
    Linear(Vec<f64>),
    Oscillator(OscillatorParams),
    Custom {
        eval: EvalFn,
        jacobian: Option<JacobianFn>,
    },
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Fput => write!(f, "Fput"),
            FieldKind::Linear(m) => f.debug_tuple("Linear").field(m).finish(),
            FieldKind::Oscillator(p) => f.debug_tuple("Oscillator").field(p).finish(),
            FieldKind::Custom { jacobian, .. } => f
                .debug_struct("Custom")
                .field("analytic_jacobian", &jacobian.is_some())
                .finish(),
        }
    }
}

/// An immutable drift field. Cheap to clone and safe to share between workers.
#[derive(Debug, Clone)]
pub struct VectorFieldSpec {
    name: String,
    dim: usize,
    delta: f64,
    kind: FieldKind,
}

impl VectorFieldSpec {
    fn build(name: impl Into<String>, dim: usize, delta: f64, kind: FieldKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("field dimension must be positive".into()));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dissipativity constant must be positive, got {delta}"
            )));
        }
        let field = Self {
            name: name.into(),
            dim,
            delta,
            kind,
        };
        let b0 = field.eval_vec(&vec![0.0; dim]);
        let norm = b0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= FIXED_POINT_TOL) {
            return Err(Error::NonzeroFixedPoint { norm });
        }
        Ok(field)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    /// `out = b(x)`.
    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            FieldKind::Fput => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = xi * (1.0 + r2);
                }
            }
            FieldKind::Linear(q) => {
                let d = self.dim;
                for i in 0..d {
                    let row = &q[i * d..(i + 1) * d];
                    out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            FieldKind::Oscillator(p) => {
                let f = p.f(x);
                let gh = p.grad_h(x);
                out[0] = x[1] * f - gh[0];
                out[1] = -x[0] * f - gh[1];
            }
            FieldKind::Custom { eval, .. } => eval(x, out),
        }
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(x, &mut out);
        out
    }

    /// Row-major `Db(x)` into `out` (length `dim * dim`).
    #[inline]
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            FieldKind::Fput => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = 2.0 * x[i] * x[j] + if i == j { 1.0 + r2 } else { 0.0 };
                    }
                }
            }
            FieldKind::Linear(q) => out.copy_from_slice(q),
            FieldKind::Oscillator(p) => {
                let f = p.f(x);
                let gf = p.grad_f(x);
                let [h11, h12, h22] = p.hess_h(x);
                out[0] = x[1] * gf[0] - h11;
                out[1] = f + x[1] * gf[1] - h12;
                out[2] = -f - x[0] * gf[0] - h12;
                out[3] = -x[0] * gf[1] - h22;
            }
            FieldKind::Custom { jacobian: Some(jac), .. } => jac(x, out),
            FieldKind::Custom { jacobian: None, .. } => {
                let fd = self.finite_difference_jacobian(x);
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = fd[(i, j)];
                    }
                }
            }
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut buf);
        DMatrix::from_row_slice(self.dim, self.dim, &buf)
    }

    pub fn jacobian_at_origin(&self) -> DMatrix<f64> {
        self.jacobian(&vec![0.0; self.dim])
    }

    /// Central differences with step `1e-6 * max(1, |x|)`.
    pub fn finite_difference_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-6 * norm.max(1.0);
        let mut jac = DMatrix::zeros(d, d);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for j in 0..d {
            xp[j] = x[j] + h;
            self.eval(&xp, &mut fp);
            xp[j] = x[j] - h;
            self.eval(&xp, &mut fm);
            xp[j] = x[j];
            for i in 0..d {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Largest relative deviation between the Jacobian and central finite
    /// differences over `n_points` uniform points in the ball of `radius`.
    pub fn max_jacobian_error(&self, n_points: usize, radius: f64, seed: u64) -> f64 {
        let mut rng = stream(seed, Purpose::Sampler, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..n_points {
            let x = sample_ball(&mut rng, self.dim, radius);
            let exact = self.jacobian(&x);
            let fd = self.finite_difference_jacobian(&x);
            let scale = exact.amax().max(1.0);
            worst = worst.max((exact - fd).amax() / scale);
        }
        worst
    }
}

pub fn fput_field(dim: usize) -> Result<VectorFieldSpec> {
    VectorFieldSpec::build("fput", dim, 1.0, FieldKind::Fput)
}

/// `b(x) = Q x` with `delta` the smallest eigenvalue of the symmetric part of
/// `Q`; errors if that is not positive.
pub fn linear_field(matrix: &DMatrix<f64>) -> Result<VectorFieldSpec> {
    let delta = symmetric_part_min_eigenvalue(matrix)?;
    if delta <= 0.0 {
        return Err(Error::DissipativityViolation {
            min_ratio: delta,
            delta: 0.0,
        });
    }
    linear_field_with_delta(matrix, delta)
}

/// `b(x) = Q x` with a caller-claimed `delta`, not checked.
pub fn linear_field_with_delta(matrix: &DMatrix<f64>, delta: f64) -> Result<VectorFieldSpec> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            found: matrix.ncols(),
        });
    }
    let d = matrix.nrows();
    let mut rows = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            rows.push(matrix[(i, j)]);
        }
    }
    VectorFieldSpec::build("linear", d, delta, FieldKind::Linear(rows))
}

pub fn oscillator_field(params: OscillatorParams) -> Result<VectorFieldSpec> {
    let delta = params.claimed_delta();
    if !(delta > 0.0) {
        return Err(Error::DissipativityViolation {
            min_ratio: delta,
            delta: 0.0,
        });
    }
    let field = VectorFieldSpec::build("oscillator", 2, delta, FieldKind::Oscillator(params))?;
    let form = min_jacobian_form(&field, 10_000, 4.0, 0x05c1_11a7);
    if form < delta * (1.0 - 1e-9) {
        return Err(Error::DissipativityViolation { min_ratio: form, delta });
    }
    Ok(field)
}

/// A user-supplied field. Without an analytic Jacobian, central finite
/// differences are used.
pub fn custom_field(
    name: impl Into<String>,
    dim: usize,
    delta: f64,
    eval: EvalFn,
    jacobian: Option<JacobianFn>,
) -> Result<VectorFieldSpec> {
    VectorFieldSpec::build(name, dim, delta, FieldKind::Custom { eval, jacobian })
}

fn symmetric_part_min_eigenvalue(matrix: &DMatrix<f64>) -> Result<f64> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            found: matrix.ncols(),
        });
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipativityReport {
    pub min_ratio: f64,
    pub pass: bool,
}

/// Samples point pairs uniformly in the ball of `radius` and reports the
/// smallest `<b(x) - b(y), x - y> / |x - y|^2`.
pub fn check_dissipativity(
    field: &VectorFieldSpec,
    n_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<DissipativityReport> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let d = field.dim();
    let mut rng = stream(seed, Purpose::Dissipativity, 0);
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut min_ratio = f64::INFINITY;
    for _ in 0..n_pairs {
        let mut attempts = 0;
        let (x, y, dist2) = loop {
            let x = sample_ball(&mut rng, d, radius);
            let y = sample_ball(&mut rng, d, radius);
            let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist2 > 0.0 {
                break (x, y, dist2);
            }
            attempts += 1;
            if attempts > 100 {
                return Err(Error::DegenerateInput(
                    "sampled point pairs keep coinciding".into(),
                ));
            }
        };
        field.eval(&x, &mut bx);
        field.eval(&y, &mut by);
        let inner: f64 = (0..d).map(|i| (bx[i] - by[i]) * (x[i] - y[i])).sum();
        min_ratio = min_ratio.min(inner / dist2);
    }
    Ok(DissipativityReport {
        min_ratio,
        pass: min_ratio >= field.delta() * (1.0 - 1e-9),
    })
}

/// Smallest `u^T Db(v) u / |u|^2` over sampled `v` in the ball and random `u`.
pub fn min_jacobian_form(field: &VectorFieldSpec, n_samples: usize, radius: f64, seed: u64) -> f64 {
    let d = field.dim();
    let mut rng = stream(seed, Purpose::Dissipativity, 1);
    let mut jac = vec![0.0; d * d];
    let mut worst = f64::INFINITY;
    for _ in 0..n_samples {
        let v = sample_ball(&mut rng, d, radius);
        let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let u2: f64 = u.iter().map(|a| a * a).sum();
        if u2 == 0.0 {
            continue;
        }
        field.jacobian_into(&v, &mut jac);
        let mut form = 0.0;
        for i in 0..d {
            for j in 0..d {
                form += u[i] * jac[i * d + j] * u[j];
            }
        }
        worst = worst.min(form / u2);
    }
    worst
}

/// Uniform point in the centred ball of `radius` in `R^dim`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = radius * u.powf(1.0 / dim as f64);
        return g.into_iter().map(|v| v * r / norm).collect();
    }
}

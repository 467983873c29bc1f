//! Integrators for `dX = -b(X) dt + eps dL` and the processes compared with it:
//! the deterministic flow `X^0`, the linearization `Y` along `X^0`
//! (`dY = -Db(X^0_t) Y dt + dL`), the frozen-Jacobian Ornstein–Uhlenbeck process
//! and the first-order approximation `X^0 + eps Y`.
//!
//! Every process run together in one call consumes the same increment per
//! step, so pathwise differences are available. Trajectory `j` always reads the
//! ChaCha stream `(seed, purpose, j)`, which makes results independent of the
//! number of worker threads.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_noise::{pairwise_sum, LevyTriplet};
use crate::rng::{stream, Purpose};
use crate::vector_fields::VectorFieldSpec;

/// Trajectories per parallel work unit.
const BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ProcessTag {
    XEps,
    XZero,
    YFw,
    OHom,
    YEps,
}

/// States of `n_traj` trajectories at one time, row-major `n_traj x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub tag: ProcessTag,
    pub time: f64,
    pub epsilon: f64,
    pub dim: usize,
    pub states: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn n_traj(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_traj() as f64;
        (0..self.dim)
            .map(|c| pairwise_sum(&self.column(c)) / n)
            .collect()
    }

    /// Per-coordinate variance (divisor `n`).
    pub fn variance(&self) -> Vec<f64> {
        let n = self.n_traj() as f64;
        self.mean()
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let sq: Vec<f64> = self.column(c).iter().map(|v| (v - m) * (v - m)).collect();
                pairwise_sum(&sq) / n
            })
            .collect()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }

    /// Mean of `|x|^p` and its standard error.
    pub fn moment(&self, p: f64) -> (f64, f64) {
        let vals: Vec<f64> = self
            .states
            .chunks_exact(self.dim)
            .map(|x| norm(x).powf(p))
            .collect();
        mean_and_stderr(&vals)
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = pairwise_sum(vals) / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One-step method for the noisy processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Scheme {
    /// Half increment, one RK4 step of the drift, half increment. Second
    /// order in the stationary covariance of linear problems.
    #[default]
    SplitRk4,
    /// `x <- x - b(x) h + eps dL`.
    EulerMaruyama,
}

/// Drift, noise and discretization shared by all simulation calls.
#[derive(Debug, Clone)]
pub struct SimSpec<'a> {
    pub field: &'a VectorFieldSpec,
    pub noise: &'a LevyTriplet,
    pub dt: f64,
    pub scheme: Scheme,
}

impl<'a> SimSpec<'a> {
    pub fn new(field: &'a VectorFieldSpec, noise: &'a LevyTriplet, dt: f64) -> Self {
        Self {
            field,
            noise,
            dt,
            scheme: Scheme::default(),
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.field.dim() != self.noise.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.field.dim(),
                found: self.noise.dim(),
            });
        }
        check_dt(self.dt, self.field.delta())
    }
}

/// `min(1e-2, 0.05 / delta)`.
pub fn default_dt(delta: f64) -> f64 {
    (0.05 / delta).min(1e-2)
}

fn check_dt(dt: f64, delta: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepSizeTooLarge {
            dt,
            reason: "step size must be positive and finite".into(),
        });
    }
    if dt > 0.1 / delta {
        return Err(Error::StepSizeTooLarge {
            dt,
            reason: format!("stability guard requires dt <= 0.1/delta = {}", 0.1 / delta),
        });
    }
    Ok(())
}

/// Step sizes reaching every output time exactly: each gap between
/// consecutive output times is cut into `ceil(gap / dt)` equal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    steps: Vec<f64>,
    /// Number of steps taken before each output time.
    marks: Vec<usize>,
}

impl TimeGrid {
    pub fn new(times: &[f64], dt: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument("at least one output time is required".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        let mut prev = 0.0;
        let mut steps = Vec::new();
        let mut marks = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= prev && t.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "output times must be finite, nonnegative and nondecreasing (got {t} after {prev})"
                )));
            }
            let gap = t - prev;
            if gap > 0.0 {
                let k = ((gap / dt) - 1e-9).ceil().max(1.0) as usize;
                let h = gap / k as f64;
                steps.extend(std::iter::repeat_n(h, k));
            }
            marks.push(steps.len());
            prev = t;
        }
        Ok(Self {
            times: times.to_vec(),
            steps,
            marks,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Classical RK4 step of `x' = -b(x)` in place.
pub fn rk4_step(field: &VectorFieldSpec, x: &mut [f64], h: f64, work: &mut Rk4Work) {
    let d = x.len();
    let Rk4Work { k1, k2, k3, k4, tmp } = work;
    field.eval(x, k1);
    for i in 0..d {
        tmp[i] = x[i] - 0.5 * h * k1[i];
    }
    field.eval(tmp, k2);
    for i in 0..d {
        tmp[i] = x[i] - 0.5 * h * k2[i];
    }
    field.eval(tmp, k3);
    for i in 0..d {
        tmp[i] = x[i] - h * k3[i];
    }
    field.eval(tmp, k4);
    for i in 0..d {
        x[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Scratch buffers for [`rk4_step`].
#[derive(Debug, Clone)]
pub struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// Deterministic path sampled at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl DeterministicPath {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("path has at least the initial state")
    }
}

/// RK4 integration of `x' = -b(x)` up to `t_end`, checking the contraction
/// `|X_t| <= exp(-delta t) |x0| (1 + 10 dt)` at every step.
pub fn integrate_deterministic(
    field: &VectorFieldSpec,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<DeterministicPath> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: x0.len(),
        });
    }
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument("need dt > 0 and t_end >= 0".into()));
    }
    let grid = TimeGrid::new(&[t_end], dt)?;
    let r0 = norm(x0);
    let delta = field.delta();
    let mut work = Rk4Work::new(field.dim());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    for (k, &h) in grid.steps().iter().enumerate() {
        rk4_step(field, &mut x, h, &mut work);
        t += h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                trajectory: 0,
                step: k + 1,
            });
        }
        let bound = (-delta * t).exp() * r0 * (1.0 + 10.0 * dt);
        if norm(&x) > bound + 1e-300 {
            return Err(Error::StepSizeTooLarge {
                dt,
                reason: format!(
                    "contraction check failed at t = {t}: |x| = {} > {bound}",
                    norm(&x)
                ),
            });
        }
        times.push(if k + 1 == grid.n_steps() { t_end } else { t });
        states.push(x.clone());
    }
    Ok(DeterministicPath { times, states })
}

/// First time the deterministic flow from `x0` reaches the closed ball of
/// `radius`, and the state there. The crossing step is located by bisection
/// on the RK4 sub-step length.
pub fn hitting_time(
    field: &VectorFieldSpec,
    x0: &[f64],
    radius: f64,
    dt: f64,
    horizon: f64,
) -> Result<(f64, Vec<f64>)> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    if norm(&x) <= radius {
        return Ok((0.0, x));
    }
    let mut work = Rk4Work::new(field.dim());
    let mut t = 0.0;
    while t < horizon {
        let mut next = x.clone();
        rk4_step(field, &mut next, dt, &mut work);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                trajectory: 0,
                step: (t / dt) as usize,
            });
        }
        if norm(&next) <= radius {
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let mut y = x.clone();
                rk4_step(field, &mut y, mid, &mut work);
                if norm(&y) <= radius {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-15 * (t + dt) {
                    break;
                }
            }
            let mut y = x.clone();
            rk4_step(field, &mut y, hi, &mut work);
            return Ok((t + hi, y));
        }
        x = next;
        t += dt;
    }
    Err(Error::FlowDidNotEnter { radius, horizon })
}

/// Initial condition of one simulated process.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    /// Every trajectory starts at the same point.
    Point(&'a [f64]),
    /// Row-major `n_traj x dim` starting states.
    Cloud(&'a [f64]),
}

impl Start<'_> {
    fn get(&self, j: usize, d: usize) -> &[f64] {
        match self {
            Start::Point(x) => x,
            Start::Cloud(c) => &c[j * d..(j + 1) * d],
        }
    }

    fn check(&self, n: usize, d: usize) -> Result<()> {
        let (expected, found) = match self {
            Start::Point(x) => (d, x.len()),
            Start::Cloud(c) => (n * d, c.len()),
        };
        if expected != found {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }
}

/// A process advanced in a joint run.
#[derive(Debug, Clone, Copy)]
pub enum Process<'a> {
    /// `dX = -b(X) dt + eps dL`.
    Nonlinear { epsilon: f64, start: Start<'a> },
    /// `dY = -Db(X^0_t) Y dt + dL` along the run's deterministic path.
    Linearized { start: Start<'a> },
}

/// Deterministic path plus the Jacobians at the four RK4 stages of every step.
struct Reference {
    dim: usize,
    states_at_marks: Vec<Vec<f64>>,
    /// `4 * dim * dim` entries per step.
    stage_jacobians: Vec<f64>,
}

impl Reference {
    fn new(field: &VectorFieldSpec, x0: &[f64], grid: &TimeGrid) -> Result<Self> {
        let d = field.dim();
        let dd = d * d;
        let mut x = x0.to_vec();
        let mut stage_jacobians = vec![0.0; 4 * dd * grid.n_steps()];
        let mut states_at_marks = Vec::with_capacity(grid.marks.len());
        let mut mark = 0;
        let mut k = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut incr = vec![0.0; d];
        let record = |step: usize, x: &[f64], states: &mut Vec<Vec<f64>>, mark: &mut usize| {
            while *mark < grid.marks.len() && grid.marks[*mark] == step {
                states.push(x.to_vec());
                *mark += 1;
            }
        };
        record(0, &x, &mut states_at_marks, &mut mark);
        for (step, &h) in grid.steps().iter().enumerate() {
            let jac = &mut stage_jacobians[4 * dd * step..4 * dd * (step + 1)];
            field.jacobian_into(&x, &mut jac[..dd]);
            field.eval(&x, &mut k);
            incr.copy_from_slice(&k);
            for (i, si) in s.iter_mut().enumerate() {
                *si = x[i] - 0.5 * h * k[i];
            }
            field.jacobian_into(&s, &mut jac[dd..2 * dd]);
            field.eval(&s, &mut k);
            for i in 0..d {
                incr[i] += 2.0 * k[i];
                s[i] = x[i] - 0.5 * h * k[i];
            }
            field.jacobian_into(&s, &mut jac[2 * dd..3 * dd]);
            field.eval(&s, &mut k);
            for i in 0..d {
                incr[i] += 2.0 * k[i];
                s[i] = x[i] - h * k[i];
            }
            field.jacobian_into(&s, &mut jac[3 * dd..]);
            field.eval(&s, &mut k);
            for i in 0..d {
                incr[i] += k[i];
                x[i] -= h / 6.0 * incr[i];
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    trajectory: 0,
                    step: step + 1,
                });
            }
            record(step + 1, &x, &mut states_at_marks, &mut mark);
        }
        Ok(Self {
            dim: d,
            states_at_marks,
            stage_jacobians,
        })
    }

    fn jacobians(&self, step: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.stage_jacobians[4 * dd * step..4 * dd * (step + 1)]
    }
}

fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        out[i] = a[i * d..(i + 1) * d].iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

/// RK4 step of `y' = -J(t) y` with the four stage Jacobians of one step.
fn linear_rk4_step(jacs: &[f64], y: &mut [f64], h: f64, work: &mut Rk4Work) {
    let d = y.len();
    let dd = d * d;
    let Rk4Work { k1, k2, k3, k4, tmp } = work;
    mat_vec(&jacs[..dd], y, k1);
    for i in 0..d {
        tmp[i] = y[i] - 0.5 * h * k1[i];
    }
    mat_vec(&jacs[dd..2 * dd], tmp, k2);
    for i in 0..d {
        tmp[i] = y[i] - 0.5 * h * k2[i];
    }
    mat_vec(&jacs[2 * dd..3 * dd], tmp, k3);
    for i in 0..d {
        tmp[i] = y[i] - h * k3[i];
    }
    mat_vec(&jacs[3 * dd..], tmp, k4);
    for i in 0..d {
        y[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Output of [`run_joint`]: `batches[process][output_time]` plus the
/// deterministic reference states at the output times.
#[derive(Debug, Clone)]
pub struct JointRun {
    pub batches: Vec<Vec<TrajectoryBatch>>,
    pub reference: Vec<Vec<f64>>,
}

/// Advances all `processes` together, trajectory `j` drawing its increments
/// from stream `(seed, purpose, j)`. `reference_start` is the starting point
/// of the deterministic path used by linearized processes (it is also
/// reported at the output times).
#[allow(clippy::too_many_arguments)]
pub fn run_joint(
    spec: &SimSpec<'_>,
    processes: &[(ProcessTag, Process<'_>)],
    reference_start: &[f64],
    times: &[f64],
    n_traj: usize,
    seed: u64,
    purpose: Purpose,
) -> Result<JointRun> {
    spec.validate()?;
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    let d = spec.field.dim();
    if reference_start.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: reference_start.len(),
        });
    }
    for (_, p) in processes {
        match p {
            Process::Nonlinear { start, .. } | Process::Linearized { start } => start.check(n_traj, d)?,
        }
    }
    let grid = TimeGrid::new(times, spec.dt)?;
    let reference = Reference::new(spec.field, reference_start, &grid)?;
    let n_out = times.len();
    let n_proc = processes.len();
    let row = n_proc * n_out * d;

    let block_results: Vec<Result<Vec<f64>>> = (0..n_traj.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(n_traj);
            let mut out = vec![0.0; (hi - lo) * row];
            let mut work = Rk4Work::new(d);
            let mut incr = vec![0.0; d];
            let mut states = vec![0.0; n_proc * d];
            for j in lo..hi {
                let rec = &mut out[(j - lo) * row..(j - lo + 1) * row];
                simulate_one(
                    spec, processes, &grid, &reference, j, seed, purpose, &mut states, &mut incr,
                    &mut work, rec,
                )?;
            }
            Ok(out)
        })
        .collect();

    let mut flat = Vec::with_capacity(n_traj * row);
    for r in block_results {
        flat.extend(r?);
    }
    let mut batches = Vec::with_capacity(n_proc);
    for (pi, (tag, p)) in processes.iter().enumerate() {
        let epsilon = match p {
            Process::Nonlinear { epsilon, .. } => *epsilon,
            Process::Linearized { .. } => 1.0,
        };
        let mut per_time = Vec::with_capacity(n_out);
        for (oi, &t) in times.iter().enumerate() {
            let mut states = Vec::with_capacity(n_traj * d);
            for j in 0..n_traj {
                let off = j * row + (pi * n_out + oi) * d;
                states.extend_from_slice(&flat[off..off + d]);
            }
            per_time.push(TrajectoryBatch {
                tag: *tag,
                time: t,
                epsilon,
                dim: d,
                states,
            });
        }
        batches.push(per_time);
    }
    Ok(JointRun {
        batches,
        reference: reference.states_at_marks,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_one(
    spec: &SimSpec<'_>,
    processes: &[(ProcessTag, Process<'_>)],
    grid: &TimeGrid,
    reference: &Reference,
    j: usize,
    seed: u64,
    purpose: Purpose,
    states: &mut [f64],
    incr: &mut [f64],
    work: &mut Rk4Work,
    rec: &mut [f64],
) -> Result<()> {
    let d = spec.field.dim();
    let n_out = grid.marks.len();
    let mut rng = stream(seed, purpose, j as u64);
    for (pi, (_, p)) in processes.iter().enumerate() {
        let start = match p {
            Process::Nonlinear { start, .. } | Process::Linearized { start } => start,
        };
        states[pi * d..(pi + 1) * d].copy_from_slice(start.get(j, d));
    }
    let mut mark = 0;
    let record = |step: usize, states: &[f64], rec: &mut [f64], mark: &mut usize| {
        while *mark < n_out && grid.marks[*mark] == step {
            for pi in 0..processes.len() {
                let off = (pi * n_out + *mark) * d;
                rec[off..off + d].copy_from_slice(&states[pi * d..(pi + 1) * d]);
            }
            *mark += 1;
        }
    };
    record(0, states, rec, &mut mark);
    for (step, &h) in grid.steps().iter().enumerate() {
        spec.noise.sample_increment(h, &mut rng, incr);
        let jacs = reference.jacobians(step);
        for (pi, (_, p)) in processes.iter().enumerate() {
            let x = &mut states[pi * d..(pi + 1) * d];
            let scale = match p {
                Process::Nonlinear { epsilon, .. } => *epsilon,
                Process::Linearized { .. } => 1.0,
            };
            match spec.scheme {
                Scheme::SplitRk4 => {
                    for i in 0..d {
                        x[i] += 0.5 * scale * incr[i];
                    }
                    match p {
                        Process::Nonlinear { .. } => rk4_step(spec.field, x, h, work),
                        Process::Linearized { .. } => linear_rk4_step(jacs, x, h, work),
                    }
                    for i in 0..d {
                        x[i] += 0.5 * scale * incr[i];
                    }
                }
                Scheme::EulerMaruyama => {
                    let drift = &mut work.k1;
                    match p {
                        Process::Nonlinear { .. } => spec.field.eval(x, drift),
                        Process::Linearized { .. } => mat_vec(&jacs[..d * d], x, drift),
                    }
                    for i in 0..d {
                        x[i] += -h * drift[i] + scale * incr[i];
                    }
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    trajectory: j,
                    step: step + 1,
                });
            }
        }
        record(step + 1, states, rec, &mut mark);
    }
    Ok(())
}

/// `X^eps` from `start` at each output time.
pub fn integrate_sde(
    spec: &SimSpec<'_>,
    start: Start<'_>,
    epsilon: f64,
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<TrajectoryBatch>> {
    let d = spec.field.dim();
    let run = run_joint(
        spec,
        &[(ProcessTag::XEps, Process::Nonlinear { epsilon, start })],
        &vec![0.0; d],
        times,
        n_traj,
        seed,
        Purpose::Trajectory,
    )?;
    Ok(run.batches.into_iter().next().unwrap())
}

/// The linearization `Y^x` along the deterministic path from `x0`, started at 0.
pub fn integrate_fw_linearization(
    spec: &SimSpec<'_>,
    x0: &[f64],
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<TrajectoryBatch>> {
    let zero = vec![0.0; spec.field.dim()];
    let run = run_joint(
        spec,
        &[(ProcessTag::YFw, Process::Linearized { start: Start::Point(&zero) })],
        x0,
        times,
        n_traj,
        seed,
        Purpose::Trajectory,
    )?;
    Ok(run.batches.into_iter().next().unwrap())
}

/// `dO = -Db(0) O dt + dL` from `start`. This is the linearization along the
/// path resting at the origin, so it agrees bit for bit with
/// [`integrate_fw_linearization`] at `x0 = 0`.
pub fn integrate_ou(
    spec: &SimSpec<'_>,
    start: Start<'_>,
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<TrajectoryBatch>> {
    let zero = vec![0.0; spec.field.dim()];
    let run = run_joint(
        spec,
        &[(ProcessTag::OHom, Process::Linearized { start })],
        &zero,
        times,
        n_traj,
        seed,
        Purpose::Trajectory,
    )?;
    Ok(run
        .batches
        .into_iter()
        .next()
        .unwrap()
        .into_iter()
        .map(|mut b| {
            b.tag = ProcessTag::OHom;
            b
        })
        .collect())
}

/// Coupled `X^eps`, `X^0`, `X^0 + eps Y` at each output time.
#[derive(Debug, Clone)]
pub struct CoupledPaths {
    pub x_eps: Vec<TrajectoryBatch>,
    pub x_zero: Vec<Vec<f64>>,
    pub y_eps: Vec<TrajectoryBatch>,
}

pub fn coupled_paths(
    spec: &SimSpec<'_>,
    x0: &[f64],
    epsilon: f64,
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<CoupledPaths> {
    let d = spec.field.dim();
    let zero = vec![0.0; d];
    let run = run_joint(
        spec,
        &[
            (
                ProcessTag::XEps,
                Process::Nonlinear {
                    epsilon,
                    start: Start::Point(x0),
                },
            ),
            (ProcessTag::YFw, Process::Linearized { start: Start::Point(&zero) }),
        ],
        x0,
        times,
        n_traj,
        seed,
        Purpose::Trajectory,
    )?;
    let mut it = run.batches.into_iter();
    let x_eps = it.next().unwrap();
    let y_fw = it.next().unwrap();
    let y_eps = y_fw
        .into_iter()
        .zip(&run.reference)
        .map(|(b, x0t)| TrajectoryBatch {
            tag: ProcessTag::YEps,
            time: b.time,
            epsilon,
            dim: d,
            states: b
                .states
                .chunks_exact(d)
                .flat_map(|y| y.iter().zip(x0t).map(|(yi, xi)| xi + epsilon * yi).collect::<Vec<_>>())
                .collect(),
        })
        .collect();
    Ok(CoupledPaths {
        x_eps,
        x_zero: run.reference,
        y_eps,
    })
}

/// `E|X^eps_t - X^0_t|^p` and `E|X^eps_t - Y^eps_t|^p` at `t_end`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledMoments {
    pub epsilon: f64,
    pub time: f64,
    pub ps: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_stderr: Vec<f64>,
    pub delta: Vec<f64>,
    pub delta_stderr: Vec<f64>,
}

pub fn coupled_difference(
    spec: &SimSpec<'_>,
    x0: &[f64],
    epsilon: f64,
    t_end: f64,
    n_traj: usize,
    seed: u64,
    ps: &[f64],
) -> Result<CoupledMoments> {
    let paths = coupled_paths(spec, x0, epsilon, &[t_end], n_traj, seed)?;
    let x = &paths.x_eps[0];
    let x0t = &paths.x_zero[0];
    let y = &paths.y_eps[0];
    let d = x.dim;
    let theta_norms: Vec<f64> = x
        .states
        .chunks_exact(d)
        .map(|s| norm(&s.iter().zip(x0t).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let delta_norms: Vec<f64> = x
        .states
        .chunks_exact(d)
        .zip(y.states.chunks_exact(d))
        .map(|(a, b)| norm(&a.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>()))
        .collect();
    let mut out = CoupledMoments {
        epsilon,
        time: t_end,
        ps: ps.to_vec(),
        theta: Vec::new(),
        theta_stderr: Vec::new(),
        delta: Vec::new(),
        delta_stderr: Vec::new(),
    };
    for &p in ps {
        let (m, s) = mean_and_stderr(&theta_norms.iter().map(|v| v.powf(p)).collect::<Vec<_>>());
        out.theta.push(m);
        out.theta_stderr.push(s);
        let (m, s) = mean_and_stderr(&delta_norms.iter().map(|v| v.powf(p)).collect::<Vec<_>>());
        out.delta.push(m);
        out.delta_stderr.push(s);
    }
    Ok(out)
}

/// `n_traj` endpoints at `horizon` of `X^eps` started at the origin, drawn
/// from the burn-in streams.
pub fn stationary_endpoints(
    spec: &SimSpec<'_>,
    epsilon: f64,
    horizon: f64,
    n_traj: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let d = spec.field.dim();
    let zero = vec![0.0; d];
    let run = run_joint(
        spec,
        &[(
            ProcessTag::XEps,
            Process::Nonlinear {
                epsilon,
                start: Start::Point(&zero),
            },
        )],
        &zero,
        &[horizon],
        n_traj,
        seed,
        Purpose::BurnIn,
    )?;
    Ok(run.batches.into_iter().next().unwrap().pop().unwrap())
}

/// Columnar text: `time,process,trajectory_id,x1,...,xd` per row.
pub fn write_batches_csv<W: Write>(batches: &[TrajectoryBatch], mut w: W) -> io::Result<()> {
    let d = batches.first().map_or(0, |b| b.dim);
    write!(w, "time,process,trajectory_id")?;
    for c in 0..d {
        write!(w, ",x{}", c + 1)?;
    }
    writeln!(w)?;
    for b in batches {
        for j in 0..b.n_traj() {
            write!(w, "{},{:?},{}", b.time, b.tag, j)?;
            for v in b.state(j) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Per-batch moment summary for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub tag: ProcessTag,
    pub time: f64,
    pub epsilon: f64,
    pub n_traj: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub p: f64,
    pub moment: f64,
    pub moment_stderr: f64,
}

pub fn summarize(batch: &TrajectoryBatch, p: f64) -> MomentSummary {
    let (moment, moment_stderr) = batch.moment(p);
    MomentSummary {
        tag: batch.tag,
        time: batch.time,
        epsilon: batch.epsilon,
        n_traj: batch.n_traj(),
        mean: batch.mean(),
        variance: batch.variance(),
        p,
        moment,
        moment_stderr,
    }
}

//! Cutoff experiments: the time scale, invariant-measure estimates, ergodic
//! decay, cutoff curves over `(eps, r)`, profile verdicts and fits, moment
//! ratios and first-order approximation errors.
//!
//! Curves use a coupled estimator. For each trajectory index `j` a stationary
//! copy `Z_j` is burned in from the origin on burn-in stream `j`; then `X_j`
//! (started at `x0`) and `Z_j` are advanced with the same increments drawn from
//! trajectory stream `j`. `Z_t` is still stationary, so the distance between
//! the two clouds estimates `W_p(Law X_t, mu^eps)`, and the shared noise
//! cancels most of the Monte Carlo error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_noise::LevyTriplet;
use crate::rng::{derive_seed, Purpose};
use crate::sde_sim::{
    coupled_paths, integrate_ou, integrate_sde, mean_and_stderr, norm, run_joint, stationary_endpoints, Process,
    ProcessTag, SimSpec, Start, TrajectoryBatch,
};
use crate::spectral::{non_resonance_check, normal_growth_check, omega_limit_set, positive_thetas, CutoffParams};
use crate::vector_fields::VectorFieldSpec;
use crate::wasserstein::{outer_exponent, sampling_tol, wp_batched, wp_exact_1d, EmpiricalMeasure};

/// `(1/q)|ln eps| + ((l - 1)/q) ln|ln eps|`.
pub fn cutoff_time(q: f64, ell: usize, epsilon: f64) -> f64 {
    let l = epsilon.ln().abs();
    l / q + (ell as f64 - 1.0) / q * l.ln()
}

/// Noise levels, window offsets, window size and Wasserstein order of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffSchedule {
    pub epsilons: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub w: f64,
    pub p: f64,
}

impl CutoffSchedule {
    pub fn new(epsilons: Vec<f64>, r_grid: Vec<f64>, w: f64, p: f64) -> Result<Self> {
        let s = Self { epsilons, r_grid, w, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.r_grid.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one epsilon and one r".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::InvalidArgument("epsilons must lie in (0, 1)".into()));
        }
        if self.epsilons.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidArgument("epsilons must be strictly decreasing".into()));
        }
        if self.r_grid.iter().any(|r| !r.is_finite()) || self.r_grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidArgument("r_grid must be finite and strictly increasing".into()));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidArgument(format!("window size w must be positive, got {}", self.w)));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidArgument(format!("p must be positive, got {}", self.p)));
        }
        Ok(())
    }

    /// `p < p_star` of the noise.
    pub fn check_noise(&self, noise: &LevyTriplet) -> Result<()> {
        if self.p >= noise.p_star() {
            return Err(Error::InvalidArgument(format!(
                "p = {} must be below the noise moment order p_star = {}",
                self.p,
                noise.p_star()
            )));
        }
        Ok(())
    }

    pub fn smallest_epsilon(&self) -> f64 {
        *self.epsilons.last().unwrap()
    }

    /// `t_eps + r w` for every `r` with a nonnegative time.
    pub fn times(&self, params: &CutoffParams, epsilon: f64) -> Vec<(f64, f64)> {
        let t_eps = cutoff_time(params.q, params.ell, epsilon);
        self.r_grid
            .iter()
            .map(|&r| (r, t_eps + r * self.w))
            .filter(|&(_, t)| t >= 0.0)
            .collect()
    }
}

/// Sample sizes and Wasserstein settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorOptions {
    pub n_traj: usize,
    /// Burn-in horizon for stationary copies; `None` means `20/delta`.
    pub horizon: Option<f64>,
    /// Blocks used for the standard error (and for assignment batches).
    pub batches: usize,
    /// Largest assignment problem solved at once.
    pub batch_cap: usize,
}

impl EstimatorOptions {
    pub fn new(n_traj: usize) -> Self {
        Self {
            n_traj,
            horizon: None,
            batches: 8,
            batch_cap: 2048,
        }
    }

    pub fn horizon_for(&self, field: &VectorFieldSpec) -> f64 {
        self.horizon.unwrap_or(20.0 / field.delta())
    }

    fn check(&self) -> Result<()> {
        if self.batches == 0 || self.n_traj < self.batches {
            return Err(Error::InvalidArgument(format!(
                "n_traj = {} must be at least the batch count {}",
                self.n_traj, self.batches
            )));
        }
        if self.batch_cap == 0 {
            return Err(Error::InvalidArgument("batch_cap must be positive".into()));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// `W_p` between index-aligned clouds and a standard error over blocks.
///
/// In one dimension with `p >= 1` the full clouds are compared exactly by
/// sorting and the standard error comes from `batches` disjoint blocks.
/// Otherwise the value is the mean over exact assignment problems on aligned
/// blocks of at most `batch_cap` points.
pub fn coupled_wp(x: &EmpiricalMeasure, z: &EmpiricalMeasure, p: f64, opts: &EstimatorOptions) -> Result<(f64, f64)> {
    if x.len() != z.len() {
        return Err(Error::UnequalWeights);
    }
    let n = x.len();
    if x.dim() == 1 && p >= 1.0 {
        let value = wp_exact_1d(x, z, p)?.value;
        let b = opts.batches.min(n);
        if b < 2 {
            return Ok((value, 0.0));
        }
        let size = n / b;
        let mut parts = Vec::with_capacity(b);
        for k in 0..b {
            let (lo, hi) = (k * size, (k + 1) * size);
            parts.push(wp_exact_1d(&x.slice(lo, hi)?, &z.slice(lo, hi)?, p)?.value);
        }
        // The blocks have 1/b of the points, so their spread over sqrt(b)
        // is the error of the full-sample value.
        let (_, se) = mean_and_stderr(&parts);
        return Ok((value, se));
    }
    let batches = opts.batches.max(n.div_ceil(opts.batch_cap)).min(n);
    let r = wp_batched(x, z, p, batches, opts.batch_cap)?;
    Ok((r.value, r.stderr.unwrap_or(0.0)))
}

fn ratio_scale(epsilon: f64, p: f64) -> f64 {
    epsilon.powf(p.min(1.0))
}

fn check_start(field: &VectorFieldSpec, x0: &[f64]) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: x0.len(),
        });
    }
    if !(norm(x0) > 0.0) {
        return Err(Error::InvalidArgument("x0 must be nonzero".into()));
    }
    Ok(())
}

/// How the invariant measure is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InvariantMethod {
    /// Endpoints of independent runs from the origin.
    Ensemble,
    /// `chains` long runs from the origin, recorded every `thin` time units
    /// after the horizon.
    LongRun { chains: usize, thin: f64 },
}

pub fn estimate_invariant_measure(
    sim: &SimSpec<'_>,
    epsilon: f64,
    method: InvariantMethod,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    match method {
        InvariantMethod::Ensemble => EmpiricalMeasure::from_batch(&stationary_endpoints(sim, epsilon, horizon, n, seed)?),
        InvariantMethod::LongRun { chains, thin } => {
            if chains == 0 || !(thin > 0.0) {
                return Err(Error::InvalidArgument("long runs need chains >= 1 and thin > 0".into()));
            }
            let chains = chains.min(n);
            let per_chain = n.div_ceil(chains);
            let times: Vec<f64> = (0..per_chain).map(|k| horizon + k as f64 * thin).collect();
            let d = sim.field.dim();
            let zero = vec![0.0; d];
            let run = run_joint(
                sim,
                &[(
                    ProcessTag::XEps,
                    Process::Nonlinear {
                        epsilon,
                        start: Start::Point(&zero),
                    },
                )],
                &zero,
                &times,
                chains,
                seed,
                Purpose::LongRun,
            )?;
            let mut points: Vec<f64> = run.batches[0].iter().flat_map(|b| b.states.iter().copied()).collect();
            points.truncate(n * d);
            EmpiricalMeasure::uniform(points, d)
        }
    }
}

/// Stationary samples of `dO = -Db(0) O dt + dL`, run from the origin to `horizon`.
pub fn ou_stationary_samples(sim: &SimSpec<'_>, horizon: f64, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    let zero = vec![0.0; sim.field.dim()];
    let batches = integrate_ou(sim, Start::Point(&zero), &[horizon], n, seed)?;
    EmpiricalMeasure::from_batch(&batches[0])
}

/// Coupled `X^eps` from `x0` and a stationary copy at each of `times`.
fn coupled_clouds(
    sim: &SimSpec<'_>,
    x0: &[f64],
    epsilon: f64,
    times: &[f64],
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<(Vec<TrajectoryBatch>, Vec<TrajectoryBatch>)> {
    let horizon = opts.horizon_for(sim.field);
    let z0 = stationary_endpoints(sim, epsilon, horizon, opts.n_traj, seed)?;
    let run = run_joint(
        sim,
        &[
            (
                ProcessTag::XEps,
                Process::Nonlinear {
                    epsilon,
                    start: Start::Point(x0),
                },
            ),
            (
                ProcessTag::XEps,
                Process::Nonlinear {
                    epsilon,
                    start: Start::Cloud(&z0.states),
                },
            ),
        ],
        x0,
        times,
        opts.n_traj,
        seed,
        Purpose::Trajectory,
    )?;
    let mut it = run.batches.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicPoint {
    pub t: f64,
    pub wp: f64,
    pub stderr: f64,
    pub bound: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicReport {
    pub epsilon: f64,
    pub p: f64,
    /// `E|y|^{1 ^ p}` under the estimated invariant measure.
    pub moment: f64,
    pub points: Vec<ErgodicPoint>,
    pub pass: bool,
}

/// Measured `W_p(X^eps_t(x0), mu^eps)` against
/// `e^{-a delta t} (|x0|^a + E|y|^a)` with `a = min(1, p)`.
///
/// Synchronous coupling proves the bound for `p <= 1`. For `p > 1` it can
/// fail near `t = 0`: from the origin the left side is `(E|y|^p)^{1/p}`,
/// which exceeds `E|y|`.
pub fn ergodic_decay_check(
    sim: &SimSpec<'_>,
    epsilon: f64,
    x0: &[f64],
    p: f64,
    times: &[f64],
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<ErgodicReport> {
    opts.check()?;
    if p > sim.noise.p_star() {
        return Err(Error::InvalidArgument(format!(
            "p = {p} exceeds the noise moment order {}",
            sim.noise.p_star()
        )));
    }
    if x0.len() != sim.field.dim() {
        return Err(Error::DimensionMismatch {
            expected: sim.field.dim(),
            found: x0.len(),
        });
    }
    let a = p.min(1.0);
    let (xs, zs) = coupled_clouds(sim, x0, epsilon, times, opts, seed)?;
    let delta = sim.field.delta();
    let mut points = Vec::with_capacity(times.len());
    let mut moment = 0.0;
    for (k, (xb, zb)) in xs.iter().zip(&zs).enumerate() {
        let x = EmpiricalMeasure::from_batch(xb)?;
        let z = EmpiricalMeasure::from_batch(zb)?;
        if k == 0 {
            moment = z.moment(a);
        }
        let (wp, stderr) = coupled_wp(&x, &z, p, opts)?;
        let bound = (-a * delta * xb.time).exp() * (norm(x0).powf(a) + moment);
        let st = sampling_tol(&z);
        let tol = 3.0 * stderr + if p >= 1.0 { st } else { st.powf(p) };
        points.push(ErgodicPoint {
            t: xb.time,
            wp,
            stderr,
            bound,
            tol,
            pass: wp <= bound + tol,
        });
    }
    let pass = points.iter().all(|pt| pt.pass);
    Ok(ErgodicReport {
        epsilon,
        p,
        moment,
        points,
        pass,
    })
}

/// Least-squares slope of `ln wp` against `t` over points with
/// `t_lo <= t <= t_hi` and `wp > 0`.
pub fn decay_slope(report: &ErgodicReport, t_lo: f64, t_hi: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter(|pt| pt.t >= t_lo && pt.t <= t_hi && pt.wp > 0.0)
        .map(|pt| (pt.t, pt.wp.ln()))
        .collect();
    linear_fit(&pts).map(|f| f.slope)
}

struct LineFit {
    slope: f64,
    intercept: f64,
    r2: f64,
}

fn linear_fit(pts: &[(f64, f64)]) -> Option<LineFit> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LineFit { slope, intercept, r2 })
}

/// Settings for the omega-limit, growth and resonance diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerdictOptions {
    pub omega_t_max: f64,
    pub omega_samples: usize,
    pub sphere_tol: f64,
    pub growth_tol: f64,
    pub resonance_h_max: i64,
    pub resonance_tol: f64,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        Self {
            omega_t_max: 2000.0,
            omega_samples: 4096,
            sphere_tol: 1e-6,
            growth_tol: 1e-8,
            resonance_h_max: 8,
            resonance_tol: 1e-9,
        }
    }
}

/// Whether a profile limit is granted for order `p`, with the spectral data
/// behind the decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileVerdict {
    pub p: f64,
    pub q: f64,
    pub ell: usize,
    pub m: usize,
    pub thetas: Vec<f64>,
    pub tau: f64,
    pub omega_radius: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub is_sphere: bool,
    /// Every frequency is zero, so the omega-limit set is one point.
    pub singleton: bool,
    pub normal_growth: bool,
    pub non_resonant: bool,
    pub resonance_witness: Option<Vec<i64>>,
    pub granted: bool,
    pub reason: String,
}

/// For `p >= 1` a profile exists iff the omega-limit set lies on a sphere.
/// For `p < 1` the profile is granted only when the omega-limit set is a
/// single point, the one case where constancy of the shift map on it holds
/// without further information about the stationary law.
pub fn profile_verdict(params: &CutoffParams, p: f64, opts: &VerdictOptions) -> Result<ProfileVerdict> {
    let omega = omega_limit_set(params, opts.omega_t_max, opts.omega_samples, opts.sphere_tol)?;
    let singleton = params.thetas.iter().all(|&t| t == 0.0);
    let normal_growth = normal_growth_check(params, opts.growth_tol);
    let res = non_resonance_check(&positive_thetas(params), opts.resonance_h_max, opts.resonance_tol);
    let (granted, reason) = if p >= 1.0 {
        if omega.is_sphere {
            (true, "omega-limit set lies on a sphere".to_string())
        } else {
            (
                false,
                format!(
                    "omega-limit set is not on a sphere (norms from {:.6} to {:.6}); window cutoff only",
                    omega.min_norm, omega.max_norm
                ),
            )
        }
    } else if singleton {
        (true, "omega-limit set is a single point".to_string())
    } else {
        (
            false,
            "p < 1 with a rotating omega-limit set: constancy of the shift map is not established".to_string(),
        )
    };
    Ok(ProfileVerdict {
        p,
        q: params.q,
        ell: params.ell,
        m: params.m,
        thetas: params.thetas.clone(),
        tau: params.tau,
        omega_radius: omega.radius,
        omega_min: omega.min_norm,
        omega_max: omega.max_norm,
        is_sphere: omega.is_sphere,
        singleton,
        normal_growth,
        non_resonant: !res.resonant,
        resonance_witness: res.witness,
        granted,
        reason,
    })
}

/// `e^{-q r w} e^{q tau} / q^{l-1}`.
pub fn kappa(params: &CutoffParams, r: f64, w: f64) -> f64 {
    (-params.q * r * w).exp() * (params.q * params.tau).exp() / params.q.powi(params.ell as i32 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub value: f64,
    /// Monte Carlo error, for the `p < 1` evaluation.
    pub stderr: Option<f64>,
}

/// The limit profile on `r_grid`: `kappa(r) |v|` with `|v|` the
/// omega-limit radius for `p >= 1`; for `p < 1` a Monte Carlo evaluation of
/// `W_p(kappa(r) v + O, O)` against the stationary samples `ou`.
pub fn theoretical_profile(
    params: &CutoffParams,
    verdict: &ProfileVerdict,
    w: f64,
    r_grid: &[f64],
    ou: Option<&EmpiricalMeasure>,
    opts: &EstimatorOptions,
) -> Result<Vec<ProfilePoint>> {
    if !verdict.granted {
        return Err(Error::NoProfile(verdict.reason.clone()));
    }
    let p = verdict.p;
    if p >= 1.0 {
        return Ok(r_grid
            .iter()
            .map(|&r| ProfilePoint {
                r,
                value: kappa(params, r, w) * verdict.omega_radius,
                stderr: None,
            })
            .collect());
    }
    let ou = ou.ok_or_else(|| Error::InvalidArgument("p < 1 profile needs stationary samples".into()))?;
    let v = params.rotating_sum(0.0);
    r_grid
        .iter()
        .map(|&r| {
            let k = kappa(params, r, w);
            let u: Vec<f64> = v.iter().map(|c| c * k).collect();
            let (value, se) = coupled_wp(&ou.shifted(&u), ou, p, opts)?;
            Ok(ProfilePoint {
                r,
                value,
                stderr: Some(se),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveEntry {
    pub epsilon: f64,
    pub r: f64,
    pub t: f64,
    /// `W_p(X^eps_t, mu^eps) / eps^{1 ^ p}`.
    pub wp_ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffCurve {
    pub p: f64,
    pub w: f64,
    pub entries: Vec<CurveEntry>,
    pub theory: Option<Vec<ProfilePoint>>,
    pub verdict: ProfileVerdict,
}

impl CutoffCurve {
    pub fn at_epsilon(&self, epsilon: f64) -> Vec<&CurveEntry> {
        self.entries.iter().filter(|e| e.epsilon == epsilon).collect()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.epsilon) {
                out.push(e.epsilon);
            }
        }
        out
    }

    pub fn theory_at(&self, r: f64) -> Option<&ProfilePoint> {
        self.theory.as_ref()?.iter().find(|pt| pt.r == r)
    }
}

/// Seed of the job for the `k`-th noise level of a run.
pub fn epsilon_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, Purpose::Trajectory, k as u64)
}

/// Ratios `W_p(X^eps_t(x0), mu^eps) / eps^{1 ^ p}` at `t = t_eps + r w` for
/// every schedule point with `t >= 0`, plus the theoretical profile when the
/// verdict grants one.
pub fn cutoff_curve(
    sim: &SimSpec<'_>,
    x0: &[f64],
    schedule: &CutoffSchedule,
    params: &CutoffParams,
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<CutoffCurve> {
    schedule.validate()?;
    schedule.check_noise(sim.noise)?;
    opts.check()?;
    check_start(sim.field, x0)?;
    let p = schedule.p;
    let verdict = profile_verdict(params, p, &VerdictOptions::default())?;
    let mut entries = Vec::new();
    for (k, &eps) in schedule.epsilons.iter().enumerate() {
        let rt = schedule.times(params, eps);
        if rt.is_empty() {
            continue;
        }
        let times: Vec<f64> = rt.iter().map(|x| x.1).collect();
        let (xs, zs) = coupled_clouds(sim, x0, eps, &times, opts, epsilon_seed(seed, k))?;
        let scale = ratio_scale(eps, p);
        for ((&(r, t), xb), zb) in rt.iter().zip(&xs).zip(&zs) {
            let (wp, se) = coupled_wp(&EmpiricalMeasure::from_batch(xb)?, &EmpiricalMeasure::from_batch(zb)?, p, opts)?;
            entries.push(CurveEntry {
                epsilon: eps,
                r,
                t,
                wp_ratio: wp / scale,
                stderr: se / scale,
            });
        }
    }
    let theory = if verdict.granted {
        let ou = if p < 1.0 {
            let n = opts.n_traj.min(opts.batches * opts.batch_cap);
            Some(ou_stationary_samples(
                sim,
                opts.horizon_for(sim.field),
                n,
                derive_seed(seed, Purpose::Sampler, 0),
            )?)
        } else {
            None
        };
        Some(theoretical_profile(params, &verdict, schedule.w, &schedule.r_grid, ou.as_ref(), opts)?)
    } else {
        None
    };
    Ok(CutoffCurve {
        p,
        w: schedule.w,
        entries,
        theory,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileFit {
    pub epsilon: f64,
    pub q_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
    pub points_used: usize,
}

/// Fits `ln ratio = ln C - q r w` at the smallest noise level over points
/// whose ratio exceeds three standard errors.
pub fn profile_fit(curve: &CutoffCurve) -> Result<ProfileFit> {
    let eps = curve
        .entries
        .iter()
        .map(|e| e.epsilon)
        .fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = curve
        .entries
        .iter()
        .filter(|e| e.epsilon == eps && e.wp_ratio > 0.0 && e.wp_ratio > 3.0 * e.stderr)
        .map(|e| (e.r * curve.w, e.wp_ratio.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientSignal {
            usable: pts.len(),
            required: 4,
        });
    }
    let fit = linear_fit(&pts).ok_or(Error::InsufficientSignal {
        usable: pts.len(),
        required: 4,
    })?;
    Ok(ProfileFit {
        epsilon: eps,
        q_hat: -fit.slope,
        c_hat: fit.intercept.exp(),
        r2: fit.r2,
        points_used: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryComparison {
    pub epsilon: f64,
    pub r: f64,
    pub ratio: f64,
    pub stderr: f64,
    pub theory: f64,
    pub theory_stderr: f64,
    /// `|ratio - theory|` over the combined standard error.
    pub z: f64,
    pub rel_err: f64,
}

/// Curve entries at `epsilon` next to the profile.
pub fn compare_with_theory(curve: &CutoffCurve, epsilon: f64) -> Result<Vec<TheoryComparison>> {
    if curve.theory.is_none() {
        return Err(Error::NoProfile(curve.verdict.reason.clone()));
    }
    Ok(curve
        .at_epsilon(epsilon)
        .into_iter()
        .filter_map(|e| {
            let th = curve.theory_at(e.r)?;
            let tse = th.stderr.unwrap_or(0.0);
            let se = (e.stderr * e.stderr + tse * tse).sqrt();
            let diff = (e.wp_ratio - th.value).abs();
            Some(TheoryComparison {
                epsilon,
                r: e.r,
                ratio: e.wp_ratio,
                stderr: e.stderr,
                theory: th.value,
                theory_stderr: tse,
                z: if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY },
                rel_err: diff / th.value,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapsePoint {
    pub r: f64,
    pub ratio_a: f64,
    pub stderr_a: f64,
    pub ratio_b: f64,
    pub stderr_b: f64,
    pub z: f64,
}

fn z_score(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let se = (sa * sa + sb * sb).sqrt();
    let diff = (a - b).abs();
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Ratios at two noise levels matched by `r`.
pub fn collapse_check(curve: &CutoffCurve, eps_a: f64, eps_b: f64) -> Vec<CollapsePoint> {
    let b = curve.at_epsilon(eps_b);
    curve
        .at_epsilon(eps_a)
        .into_iter()
        .filter_map(|ea| {
            let eb = b.iter().find(|e| e.r == ea.r)?;
            Some(CollapsePoint {
                r: ea.r,
                ratio_a: ea.wp_ratio,
                stderr_a: ea.stderr,
                ratio_b: eb.wp_ratio,
                stderr_b: eb.stderr,
                z: z_score(ea.wp_ratio, ea.stderr, eb.wp_ratio, eb.stderr),
            })
        })
        .collect()
}

/// Largest disagreement, in combined standard errors, between the ratios of
/// any two noise levels at a common `r`. Above 3 the curve does not collapse.
pub fn max_epsilon_disagreement(curve: &CutoffCurve) -> f64 {
    let eps = curve.epsilons();
    let mut worst: f64 = 0.0;
    for i in 0..eps.len() {
        for j in i + 1..eps.len() {
            for c in collapse_check(curve, eps[i], eps[j]) {
                worst = worst.max(c.z);
            }
        }
    }
    worst
}

/// Whether the ratios at `epsilon` never increase in `r` by more than three
/// combined standard errors.
pub fn is_decreasing_in_r(curve: &CutoffCurve, epsilon: f64) -> bool {
    let row = curve.at_epsilon(epsilon);
    row.windows(2).all(|pair| {
        let (a, b) = (pair[0], pair[1]);
        let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        b.wp_ratio <= a.wp_ratio + 3.0 * se
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEntry {
    pub epsilon: f64,
    pub r: f64,
    pub t: f64,
    /// `E|X^eps_t|^p / eps^p`.
    pub moment_ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsReport {
    pub p: f64,
    pub entries: Vec<MomentEntry>,
    /// `E|O|^p` under the stationary linearized law.
    pub plateau: f64,
    pub plateau_stderr: f64,
}

pub fn moments_cutoff(
    sim: &SimSpec<'_>,
    x0: &[f64],
    schedule: &CutoffSchedule,
    params: &CutoffParams,
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<MomentsReport> {
    schedule.validate()?;
    schedule.check_noise(sim.noise)?;
    opts.check()?;
    check_start(sim.field, x0)?;
    let p = schedule.p;
    let mut entries = Vec::new();
    for (k, &eps) in schedule.epsilons.iter().enumerate() {
        let rt = schedule.times(params, eps);
        if rt.is_empty() {
            continue;
        }
        let times: Vec<f64> = rt.iter().map(|x| x.1).collect();
        let batches = integrate_sde(sim, Start::Point(x0), eps, &times, opts.n_traj, epsilon_seed(seed, k))?;
        let scale = eps.powf(p);
        for (&(r, t), b) in rt.iter().zip(&batches) {
            let (m, se) = b.moment(p);
            entries.push(MomentEntry {
                epsilon: eps,
                r,
                t,
                moment_ratio: m / scale,
                stderr: se / scale,
            });
        }
    }
    let ou = ou_stationary_samples(
        sim,
        opts.horizon_for(sim.field),
        opts.n_traj,
        derive_seed(seed, Purpose::Sampler, 1),
    )?;
    let norms: Vec<f64> = (0..ou.len()).map(|i| norm(ou.point(i)).powf(p)).collect();
    let (plateau, plateau_stderr) = mean_and_stderr(&norms);
    Ok(MomentsReport {
        p,
        entries,
        plateau,
        plateau_stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwErrorPoint {
    pub epsilon: f64,
    pub t: f64,
    /// Coupling bound on `W_p(X^eps_t, X^0_t + eps Y_t) / eps^{1 ^ p}`.
    pub wp_xy_over_eps: f64,
    pub wp_xy_stderr: f64,
    /// `W_p(eps O, mu^eps) / eps^{1 ^ p}` between synchronously coupled clouds.
    pub wp_mu_over_eps: f64,
    pub wp_mu_stderr: f64,
}

/// First-order approximation errors at `t = t_eps` for each noise level.
pub fn fw_error_decay(
    sim: &SimSpec<'_>,
    x0: &[f64],
    schedule: &CutoffSchedule,
    params: &CutoffParams,
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<Vec<FwErrorPoint>> {
    schedule.validate()?;
    schedule.check_noise(sim.noise)?;
    opts.check()?;
    check_start(sim.field, x0)?;
    let p = schedule.p;
    let d = sim.field.dim();
    let zero = vec![0.0; d];
    let horizon = opts.horizon_for(sim.field);
    let mut out = Vec::with_capacity(schedule.epsilons.len());
    for (k, &eps) in schedule.epsilons.iter().enumerate() {
        let job = epsilon_seed(seed, k);
        let t = cutoff_time(params.q, params.ell, eps);
        let scale = ratio_scale(eps, p);

        // Same noise drives X^eps and Y, so the pairing is a coupling and its
        // cost bounds the distance from above.
        let paths = coupled_paths(sim, x0, eps, &[t], opts.n_traj, job)?;
        let costs: Vec<f64> = paths.x_eps[0]
            .states
            .chunks_exact(d)
            .zip(paths.y_eps[0].states.chunks_exact(d))
            .map(|(a, b)| {
                let diff: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
                norm(&diff).powf(p)
            })
            .collect();
        let (c, c_se) = mean_and_stderr(&costs);
        let e = outer_exponent(p);
        let xy = c.powf(e);
        let xy_se = if c > 0.0 { e * c.powf(e - 1.0) * c_se } else { 0.0 };

        let run = run_joint(
            sim,
            &[
                (
                    ProcessTag::XEps,
                    Process::Nonlinear {
                        epsilon: eps,
                        start: Start::Point(&zero),
                    },
                ),
                (ProcessTag::OHom, Process::Linearized { start: Start::Point(&zero) }),
            ],
            &zero,
            &[horizon],
            opts.n_traj,
            job,
            Purpose::BurnIn,
        )?;
        let mu = EmpiricalMeasure::from_batch(&run.batches[0][0])?;
        let ou = EmpiricalMeasure::from_batch(&run.batches[1][0])?.scaled(eps);
        let (wm, wm_se) = coupled_wp(&ou, &mu, p, opts)?;
        out.push(FwErrorPoint {
            epsilon: eps,
            t,
            wp_xy_over_eps: xy / scale,
            wp_xy_stderr: xy_se / scale,
            wp_mu_over_eps: wm / scale,
            wp_mu_stderr: wm_se / scale,
        });
    }
    Ok(out)
}

/// `W_2` between `N(m1, s1^2)` and `N(m2, s2^2)` on the line.
pub fn gaussian_w2_1d(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt()
}

/// Closed-form `W_2(X^eps_t(x0), mu^eps) / eps` for `b(x) = q x` driven by a
/// standard Brownian motion.
pub fn ou_gaussian_ratio(q: f64, x0: f64, epsilon: f64, t: f64) -> f64 {
    let m = (-q * t).exp() * x0;
    let s_inf = epsilon / (2.0 * q).sqrt();
    let s_t = s_inf * (-(-2.0 * q * t).exp_m1()).sqrt();
    gaussian_w2_1d(m, s_t, 0.0, s_inf) / epsilon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_sim::default_dt;
    use crate::spectral::{linear_cutoff_params, SpectralOptions};
    use crate::vector_fields::{fput_field, linear_field, oscillator_field, OscillatorParams};
    use nalgebra::{dmatrix, DMatrix};

    fn scalar_field(q: f64) -> VectorFieldSpec {
        linear_field(&DMatrix::from_element(1, 1, q)).unwrap()
    }

    fn linear_params(field: &VectorFieldSpec, x0: &[f64]) -> CutoffParams {
        linear_cutoff_params(&field.jacobian_at_origin(), x0, &SpectralOptions::default()).unwrap()
    }

    fn synthetic_curve(ratio: impl Fn(f64, f64) -> f64, stderr: f64) -> CutoffCurve {
        let field = scalar_field(1.0);
        let params = linear_params(&field, &[1.0]);
        let verdict = profile_verdict(&params, 2.0, &VerdictOptions::default()).unwrap();
        let mut entries = Vec::new();
        for eps in [0.1, 0.05] {
            for r in [-1.0, 0.0, 1.0, 2.0, 3.0] {
                entries.push(CurveEntry {
                    epsilon: eps,
                    r,
                    t: cutoff_time(1.0, 1, eps) + r,
                    wp_ratio: ratio(eps, r),
                    stderr,
                });
            }
        }
        CutoffCurve {
            p: 2.0,
            w: 1.0,
            entries,
            theory: None,
            verdict,
        }
    }

    #[test]
    fn cutoff_time_arithmetic() {
        assert!((cutoff_time(1.0, 1, 0.1) - 10f64.ln()).abs() < 1e-15);
        // (1/2) ln 100 + ln ln 100
        assert!((cutoff_time(2.0, 3, 0.01) - 3.829764718801947).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation() {
        assert!(CutoffSchedule::new(vec![0.1, 0.05], vec![0.0, 1.0], 1.0, 2.0).is_ok());
        assert!(CutoffSchedule::new(vec![0.05, 0.1], vec![0.0], 1.0, 2.0).is_err());
        assert!(CutoffSchedule::new(vec![0.1, 0.1], vec![0.0], 1.0, 2.0).is_err());
        assert!(CutoffSchedule::new(vec![1.5], vec![0.0], 1.0, 2.0).is_err());
        assert!(CutoffSchedule::new(vec![0.1], vec![1.0, 0.0], 1.0, 2.0).is_err());
        assert!(CutoffSchedule::new(vec![0.1], vec![0.0], 0.0, 2.0).is_err());
        let s = CutoffSchedule::new(vec![0.1], vec![0.0], 1.0, 1.0).unwrap();
        let stable = LevyTriplet::stable_isotropic(1, 1.5, 1.0, 1.2).unwrap();
        assert!(s.check_noise(&stable).is_ok());
        let s = CutoffSchedule::new(vec![0.1], vec![0.0], 1.0, 1.3).unwrap();
        assert!(s.check_noise(&stable).is_err());
    }

    #[test]
    fn negative_times_are_dropped() {
        let field = scalar_field(1.0);
        let params = linear_params(&field, &[1.0]);
        let s = CutoffSchedule::new(vec![0.1], vec![-3.0, -2.0, 0.0], 1.0, 2.0).unwrap();
        let rt = s.times(&params, 0.1);
        assert_eq!(rt.len(), 2);
        assert_eq!(rt[0].0, -2.0);
        assert!((rt[1].1 - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kappa_for_unit_linear_case() {
        let field = scalar_field(1.0);
        let params = linear_params(&field, &[1.0]);
        let verdict = profile_verdict(&params, 2.0, &VerdictOptions::default()).unwrap();
        assert!(verdict.granted && verdict.singleton);
        let opts = EstimatorOptions::new(16);
        let prof = theoretical_profile(&params, &verdict, 1.0, &[-2.0, 0.0, 3.0], None, &opts).unwrap();
        assert!((prof[1].value - 1.0).abs() < 1e-12);
        for pt in &prof {
            assert!((pt.value - (-pt.r).exp()).abs() < 1e-12 * pt.value);
        }
    }

    #[test]
    fn kappa_includes_rate_order_and_delay() {
        let a = dmatrix![2.0, 1.0; 0.0, 2.0];
        let mut params = linear_cutoff_params(&a, &[0.0, 1.0], &SpectralOptions::default()).unwrap();
        assert_eq!(params.ell, 2);
        params.tau = 0.5;
        let k = kappa(&params, 1.5, 2.0);
        assert!((k - (-6.0f64).exp() * 1f64.exp() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn profile_denied_without_sphere() {
        let field = oscillator_field(OscillatorParams::linear(1.0, 2.0, 0.0, 2.0)).unwrap();
        let params = linear_params(&field, &[1.0, 0.0]);
        let verdict = profile_verdict(&params, 2.0, &VerdictOptions::default()).unwrap();
        assert!(!verdict.granted && !verdict.is_sphere && !verdict.normal_growth);
        let opts = EstimatorOptions::new(16);
        let err = theoretical_profile(&params, &verdict, 1.0, &[0.0], None, &opts).unwrap_err();
        assert!(matches!(err, Error::NoProfile(_)));

        let field = oscillator_field(OscillatorParams::linear(1.0, 1.0, 0.0, 2.0)).unwrap();
        let params = linear_params(&field, &[1.0, 0.0]);
        let verdict = profile_verdict(&params, 2.0, &VerdictOptions::default()).unwrap();
        assert!(verdict.granted && verdict.normal_growth && verdict.non_resonant);
        assert!((verdict.omega_radius - 1.0).abs() < 1e-12);
        // A rotating omega-limit set does not settle the p < 1 case.
        assert!(!profile_verdict(&params, 0.5, &VerdictOptions::default()).unwrap().granted);
    }

    #[test]
    fn exponential_profile_is_monotone() {
        let field = scalar_field(1.0);
        let params = linear_params(&field, &[2.0]);
        let verdict = profile_verdict(&params, 1.0, &VerdictOptions::default()).unwrap();
        let r: Vec<f64> = (-20..=20).map(|k| k as f64).collect();
        let prof = theoretical_profile(&params, &verdict, 1.0, &r, None, &EstimatorOptions::new(16)).unwrap();
        assert!(prof.windows(2).all(|w| w[1].value < w[0].value));
        assert!(prof.first().unwrap().value > 1e8 && prof.last().unwrap().value < 1e-8);
    }

    #[test]
    fn noiseless_fit() {
        let curve = synthetic_curve(|_, r| 2.0 * (-1.5 * r).exp(), 1e-6);
        let fit = profile_fit(&curve).unwrap();
        assert_eq!(fit.epsilon, 0.05);
        assert!((fit.q_hat - 1.5).abs() < 1e-12);
        assert!((fit.c_hat - 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_signal() {
        let curve = synthetic_curve(|_, r| 1e-3 * (-r).exp(), 3e-4);
        let err = profile_fit(&curve).unwrap_err();
        assert_eq!(err, Error::InsufficientSignal { usable: 2, required: 4 });
    }

    #[test]
    fn collapse_and_monotonicity_helpers() {
        let flat = synthetic_curve(|_, r| (-r).exp(), 1e-3);
        assert!(max_epsilon_disagreement(&flat) == 0.0);
        assert!(is_decreasing_in_r(&flat, 0.05));
        let osc = synthetic_curve(|eps, r| (-r).exp() * if eps == 0.1 { 1.1 } else { 1.0 }, 1e-3);
        assert!(max_epsilon_disagreement(&osc) > 3.0);
        let c = collapse_check(&osc, 0.1, 0.05);
        assert_eq!(c.len(), 5);
        let rising = synthetic_curve(|_, r| r.exp(), 1e-3);
        assert!(!is_decreasing_in_r(&rising, 0.05));
    }

    #[test]
    fn gaussian_oracle_limits() {
        // t = 0: point mass at x0 against N(0, eps^2/2).
        assert!((ou_gaussian_ratio(1.0, 1.0, 0.1, 0.0) - 10.02496882788171).abs() < 1e-12);
        assert!(ou_gaussian_ratio(1.0, 1.0, 0.1, 60.0) < 1e-20);
        assert!((gaussian_w2_1d(1.0, 2.0, 4.0, 6.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn scale_equivariance_of_the_oracle() {
        // Scaling x0 and eps together is an exact symmetry of the linear model.
        for (eps, t) in [(0.1, 0.5), (0.02, 3.0), (0.3, 7.0)] {
            let a = ou_gaussian_ratio(1.3, 0.7, eps, t);
            let b = ou_gaussian_ratio(1.3, 0.7 * 4.0, eps * 4.0, t);
            assert!((a - b).abs() <= 1e-12 * a);
        }
        // Scaling eps by c and shifting time by -(1/q) ln c keeps the drift
        // part of the ratio fixed; the variance part moves only at order eps^4.
        let (q, c) = (1.0f64, 0.5f64);
        for (eps, r) in [(0.1, 0.0), (0.05, 2.0)] {
            let t1 = cutoff_time(q, 1, eps) + r;
            let t2 = t1 - c.ln() / q;
            let m1 = (-q * t1).exp() / eps;
            let m2 = (-q * t2).exp() / (c * eps);
            assert!((m1 - m2).abs() <= 1e-12 * m1);
            let a = ou_gaussian_ratio(q, 1.0, eps, t1);
            let b = ou_gaussian_ratio(q, 1.0, c * eps, t2);
            assert!((a - b).abs() <= eps.powi(4) * a);
        }
    }

    #[test]
    fn linear_curve_matches_gaussian_oracle() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let params = linear_params(&field, &[1.0]);
        let s = CutoffSchedule::new(vec![0.1, 0.05], vec![-1.0, 0.0, 1.0, 2.0, 4.0], 1.0, 2.0).unwrap();
        let mut opts = EstimatorOptions::new(4000);
        opts.horizon = Some(12.0);
        let curve = cutoff_curve(&sim, &[1.0], &s, &params, &opts, 5).unwrap();
        assert_eq!(curve.entries.len(), 10);
        for e in &curve.entries {
            let o = ou_gaussian_ratio(1.0, 1.0, e.epsilon, e.t);
            assert!((e.wp_ratio - o).abs() < 0.05 * o, "{e:?} vs {o}");
            assert!(e.stderr > 0.0);
        }
        let theory = curve.theory.as_ref().unwrap();
        assert_eq!(theory.len(), 5);
        assert!(is_decreasing_in_r(&curve, 0.05));
        let cmp = compare_with_theory(&curve, 0.05).unwrap();
        assert!(cmp.iter().all(|c| c.rel_err < 0.02));
        let fit = profile_fit(&curve).unwrap();
        assert!((fit.q_hat - 1.0).abs() < 0.05);
        // Rerunning with the same seed reproduces every number.
        assert_eq!(curve, cutoff_curve(&sim, &[1.0], &s, &params, &opts, 5).unwrap());
    }

    #[test]
    fn window_ratios_for_unit_rate() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let params = linear_params(&field, &[1.0]);
        let s = CutoffSchedule::new(vec![0.01], vec![-4.0, 0.0, 4.0], 1.0, 2.0).unwrap();
        let mut opts = EstimatorOptions::new(2000);
        opts.horizon = Some(12.0);
        let curve = cutoff_curve(&sim, &[1.0], &s, &params, &opts, 6).unwrap();
        let e = &curve.entries;
        assert!(e[2].wp_ratio < 0.1 * e[1].wp_ratio);
        assert!(e[0].wp_ratio > 10.0 * e[1].wp_ratio);
    }

    #[test]
    fn curve_rejects_bad_inputs() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::stable_isotropic(1, 1.5, 1.0, 1.2).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let params = linear_params(&field, &[1.0]);
        let s = CutoffSchedule::new(vec![0.1], vec![0.0], 1.0, 1.3).unwrap();
        let opts = EstimatorOptions::new(64);
        assert!(cutoff_curve(&sim, &[1.0], &s, &params, &opts, 1).is_err());
        let s = CutoffSchedule::new(vec![0.1], vec![0.0], 1.0, 1.0).unwrap();
        assert!(cutoff_curve(&sim, &[0.0], &s, &params, &opts, 1).is_err());
        assert!(cutoff_curve(&sim, &[1.0], &s, &params, &EstimatorOptions::new(4), 1).is_err());
    }

    #[test]
    fn invariant_variance_of_linear_model() {
        let q = 2.0;
        let field = scalar_field(q);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(q));
        let eps = 0.2;
        let mu = estimate_invariant_measure(&sim, eps, InvariantMethod::Ensemble, 20_000, 10.0, 3).unwrap();
        let var = mu.moment(2.0);
        let target = eps * eps / (2.0 * q);
        assert!((var - target).abs() < 0.03 * target, "{var} vs {target}");

        let long = InvariantMethod::LongRun { chains: 40, thin: 1.0 };
        let mu = estimate_invariant_measure(&sim, eps, long, 20_000, 10.0, 3).unwrap();
        assert_eq!(mu.len(), 20_000);
        assert!((mu.moment(2.0) - target).abs() < 0.05 * target);
    }

    #[test]
    fn invariant_measure_scales_with_epsilon() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let small = estimate_invariant_measure(&sim, 0.05, InvariantMethod::Ensemble, 2000, 20.0, 8).unwrap();
        let unit = estimate_invariant_measure(&sim, 1.0, InvariantMethod::Ensemble, 2000, 20.0, 8).unwrap();
        let w = wp_exact_1d(&small.scaled(20.0), &unit, 2.0).unwrap().value;
        assert!(w < sampling_tol(&unit), "{w}");
    }

    #[test]
    fn fput_invariant_mean_is_zero() {
        let field = fput_field(2).unwrap();
        let noise = LevyTriplet::brownian(2).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(field.delta()));
        let eps = 0.3;
        let mu = estimate_invariant_measure(&sim, eps, InvariantMethod::Ensemble, 8000, 20.0, 4).unwrap();
        for c in 0..2 {
            let xs: Vec<f64> = (0..mu.len()).map(|i| mu.point(i)[c]).collect();
            let (m, se) = mean_and_stderr(&xs);
            assert!(m.abs() < 4.0 * se, "{m} {se}");
        }
    }

    #[test]
    fn ergodic_bound_and_gaussian_values() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let mut opts = EstimatorOptions::new(8000);
        opts.horizon = Some(15.0);
        let eps = 0.05;
        let times = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 6.0];
        let rep = ergodic_decay_check(&sim, eps, &[1.0], 2.0, &times, &opts, 9).unwrap();
        assert!(rep.pass);
        for pt in &rep.points[..7] {
            let o = ou_gaussian_ratio(1.0, 1.0, eps, pt.t) * eps;
            assert!((pt.wp - o).abs() < 0.05 * o, "{pt:?} vs {o}");
        }
        let slope = decay_slope(&rep, 0.0, 2.0).unwrap();
        assert!((slope + 1.0).abs() < 0.15, "{slope}");

        // From the origin at t = 0 both sides are E|y|, up to sampling noise.
        let rep = ergodic_decay_check(&sim, eps, &[0.0], 1.0, &[0.0], &opts, 9).unwrap();
        let pt = &rep.points[0];
        assert!((pt.bound - rep.moment).abs() < 1e-15);
        assert!((pt.wp - pt.bound).abs() < pt.tol && pt.pass);
    }

    #[test]
    fn fw_errors_vanish_for_linear_drift() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let params = linear_params(&field, &[1.0]);
        let s = CutoffSchedule::new(vec![0.1, 0.05], vec![0.0], 1.0, 2.0).unwrap();
        let mut opts = EstimatorOptions::new(500);
        opts.horizon = Some(10.0);
        let out = fw_error_decay(&sim, &[1.0], &s, &params, &opts, 2).unwrap();
        for pt in &out {
            assert!(pt.wp_xy_over_eps < 1e-12, "{pt:?}");
            assert!(pt.wp_mu_over_eps < 1e-12, "{pt:?}");
        }
    }

    #[test]
    fn fw_error_decays_for_fput() {
        let field = fput_field(1).unwrap();
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let params = crate::spectral::nonlinear_cutoff_params(
            &field,
            &[1.0],
            0.05,
            &crate::spectral::FlowOptions::for_field(&field),
            &SpectralOptions::default(),
        )
        .unwrap();
        let s = CutoffSchedule::new(vec![0.1, 0.025], vec![0.0], 1.0, 2.0).unwrap();
        let mut opts = EstimatorOptions::new(2000);
        opts.horizon = Some(10.0);
        let out = fw_error_decay(&sim, &[1.0], &s, &params, &opts, 2).unwrap();
        assert!(out[1].wp_xy_over_eps < 0.5 * out[0].wp_xy_over_eps, "{out:?}");
        assert!(out[1].wp_mu_over_eps < out[0].wp_mu_over_eps, "{out:?}");
    }

    #[test]
    fn moments_plateau_and_blow_up() {
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let params = linear_params(&field, &[1.0]);
        let s = CutoffSchedule::new(vec![0.01], vec![-4.0, 0.0, 6.0], 1.0, 2.0).unwrap();
        let mut opts = EstimatorOptions::new(20_000);
        opts.horizon = Some(15.0);
        let rep = moments_cutoff(&sim, &[1.0], &s, &params, &opts, 4).unwrap();
        // E|O|^2 = 1/2 for unit rate.
        assert!((rep.plateau - 0.5).abs() < 0.03);
        let e = &rep.entries;
        assert!((e[2].moment_ratio - rep.plateau).abs() < 0.1 * rep.plateau);
        assert!(e[0].moment_ratio > 10.0 * rep.plateau);
    }

    #[test]
    fn coupled_wp_paths_agree() {
        // The 1d sorting path and the assignment path see the same clouds.
        let field = scalar_field(1.0);
        let noise = LevyTriplet::brownian(1).unwrap();
        let sim = SimSpec::new(&field, &noise, default_dt(1.0));
        let mu = estimate_invariant_measure(&sim, 0.5, InvariantMethod::Ensemble, 512, 10.0, 1).unwrap();
        let nu = mu.shifted(&[0.3]);
        let mut opts = EstimatorOptions::new(512);
        let (exact, se) = coupled_wp(&nu, &mu, 2.0, &opts).unwrap();
        assert!((exact - 0.3).abs() < 1e-12 && se < 1e-12);
        opts.batches = 1;
        let (a, _) = coupled_wp(&nu, &mu, 0.5, &opts).unwrap();
        assert!(a <= 0.3f64.sqrt() + 1e-12);
    }
}

//! The subcommands. Each one computes its artifacts in memory; [`run`] adds
//! the manifest and commits everything at once.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use cutoff_lab::cutoff_experiments::{
    collapse_check, compare_with_theory, cutoff_curve, cutoff_time, decay_slope, epsilon_seed, ergodic_decay_check,
    estimate_invariant_measure, fw_error_decay, is_decreasing_in_r, max_epsilon_disagreement, moments_cutoff,
    profile_fit, profile_verdict, theoretical_profile, CollapsePoint, CutoffCurve, ErgodicPoint, FwErrorPoint,
    InvariantMethod, MomentEntry, ProfileFit, ProfilePoint, ProfileVerdict, TheoryComparison, VerdictOptions,
};
use cutoff_lab::sde_sim::{coupled_difference, integrate_sde, summarize, write_batches_csv, MomentSummary, Start};
use cutoff_lab::spectral::{linear_cutoff_params, verify_hg_limit, CutoffParams, SpectralOptions};
use cutoff_lab::wasserstein::{
    sampling_tol, verify_shift_linearity, verify_translation_homogeneity, wp_batched, wp_exact_1d, wp_sliced,
    EmpiricalMeasure, Method,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;
use crate::output::{commit, Artifacts, Manifest, MANIFEST, SCHEMA_VERSION};
use crate::suites::{shifts, spectral_suite, Law, LAWS, SHIFT_NORMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subcommand {
    Spectral,
    Simulate,
    Wasserstein,
    Properties,
    Ergodic,
    Cutoff,
    Moments,
    FwError,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Spectral,
        Subcommand::Simulate,
        Subcommand::Wasserstein,
        Subcommand::Properties,
        Subcommand::Ergodic,
        Subcommand::Cutoff,
        Subcommand::Moments,
        Subcommand::FwError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Spectral => "spectral",
            Subcommand::Simulate => "simulate",
            Subcommand::Wasserstein => "wasserstein",
            Subcommand::Properties => "properties",
            Subcommand::Ergodic => "ergodic",
            Subcommand::Cutoff => "cutoff",
            Subcommand::Moments => "moments",
            Subcommand::FwError => "fw-error",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown subcommand {s:?}"))
    }
}

/// Typed results, for callers that want more than the files.
#[derive(Debug, Clone)]
pub enum Report {
    Spectral(SpectralReport),
    Simulate(SimulateReport),
    Wasserstein(Vec<WassersteinRow>),
    Properties(PropertiesReport),
    Ergodic(ErgodicSummary),
    Cutoff(Box<CutoffReport>),
    Moments(MomentsSummary),
    FwError(FwErrorSummary),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub artifacts: Artifacts,
    pub manifest: Manifest,
    pub written: Vec<PathBuf>,
}

/// Where `cmd` writes: one subdirectory of `output_dir` per subcommand.
pub fn output_dir(config: &ExperimentConfig, cmd: Subcommand) -> PathBuf {
    config.output_dir.join(cmd.name())
}

/// Validates `config`, runs `cmd` and commits its outputs (plus the
/// manifest) to [`output_dir`].
pub fn run(config: &ExperimentConfig, cmd: Subcommand) -> Result<RunOutcome, CliError> {
    let exp = config.resolve()?;
    let (report, mut artifacts) = execute(&exp, cmd)?;
    let manifest = Manifest::new(cmd.name(), &exp.config, &artifacts)?;
    artifacts.json(MANIFEST, &manifest)?;
    let written = commit(&output_dir(&exp.config, cmd), &artifacts)?;
    Ok(RunOutcome {
        report,
        artifacts,
        manifest,
        written,
    })
}

/// [`run`] inside a dedicated pool of `workers` threads.
pub fn run_with_workers(config: &ExperimentConfig, cmd: Subcommand, workers: Option<usize>) -> Result<RunOutcome, CliError> {
    match workers {
        None => run(config, cmd),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Env {
                name: "CUTOFF_WORKERS",
                message: e.to_string(),
            })?
            .install(|| run(config, cmd)),
    }
}

/// Runs `cmd` without touching the disk.
pub fn execute(exp: &Experiment, cmd: Subcommand) -> Result<(Report, Artifacts), CliError> {
    let mut art = Artifacts::default();
    let report = match cmd {
        Subcommand::Spectral => {
            let r = spectral(exp)?;
            art.json("verdict.json", &r)?;
            Report::Spectral(r)
        }
        Subcommand::Simulate => Report::Simulate(simulate(exp, &mut art)?),
        Subcommand::Wasserstein => {
            let rows = wasserstein(exp)?;
            art.csv("wasserstein.csv", &rows)?;
            Report::Wasserstein(rows)
        }
        Subcommand::Properties => Report::Properties(properties(exp, &mut art)?),
        Subcommand::Ergodic => Report::Ergodic(ergodic(exp, &mut art)?),
        Subcommand::Cutoff => Report::Cutoff(Box::new(cutoff(exp, &mut art)?)),
        Subcommand::Moments => Report::Moments(moments(exp, &mut art)?),
        Subcommand::FwError => Report::FwError(fw_error(exp, &mut art)?),
    };
    Ok((report, art))
}

fn ratio_scale(eps: f64, p: f64) -> f64 {
    eps.powf(p.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffTime {
    pub epsilon: f64,
    pub t_eps: f64,
}

/// Contents of `verdict.json`: spectral data, the profile decision and,
/// when one is granted, the profile on the schedule grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub schema_version: u32,
    pub field: String,
    pub dim: usize,
    pub delta: f64,
    pub x0: Vec<f64>,
    /// `origin` for linear fields, `flow` when the nonlinear flow was run into the ball of radius `r0`.
    pub linearization: &'static str,
    pub r0: Option<f64>,
    pub tau_bound: Option<f64>,
    pub w: Vec<f64>,
    pub vs: Vec<ComplexVector>,
    #[serde(flatten)]
    pub verdict: ProfileVerdict,
    pub window: f64,
    pub cutoff_times: Vec<CutoffTime>,
    pub profile: Option<Vec<ProfilePoint>>,
}

fn spectral_report(
    exp: &Experiment,
    params: &CutoffParams,
    verdict: ProfileVerdict,
    profile: Option<Vec<ProfilePoint>>,
) -> SpectralReport {
    SpectralReport {
        schema_version: SCHEMA_VERSION,
        field: exp.field.name().to_string(),
        dim: exp.field.dim(),
        delta: exp.field.delta(),
        x0: exp.x0().to_vec(),
        linearization: if params.r0.is_some() { "flow" } else { "origin" },
        r0: params.r0,
        tau_bound: params.tau_bound,
        w: params.w.clone(),
        vs: params
            .vs
            .iter()
            .map(|v| ComplexVector {
                re: v.iter().map(|z| z.re).collect(),
                im: v.iter().map(|z| z.im).collect(),
            })
            .collect(),
        verdict,
        window: exp.schedule.w,
        cutoff_times: exp
            .schedule
            .epsilons
            .iter()
            .map(|&epsilon| CutoffTime {
                epsilon,
                t_eps: cutoff_time(params.q, params.ell, epsilon),
            })
            .collect(),
        profile,
    }
}

pub fn spectral(exp: &Experiment) -> Result<SpectralReport, CliError> {
    let params = exp.cutoff_params()?;
    let p = exp.schedule.p;
    let verdict = profile_verdict(&params, p, &VerdictOptions::default())?;
    // The p < 1 profile needs stationary samples; `cutoff` reports it.
    let profile = if verdict.granted && p >= 1.0 {
        Some(theoretical_profile(
            &params,
            &verdict,
            exp.schedule.w,
            &exp.schedule.r_grid,
            None,
            &exp.estimator(),
        )?)
    } else {
        None
    };
    Ok(spectral_report(exp, &params, verdict, profile))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateRun {
    pub epsilon: f64,
    pub file: String,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub runs: Vec<SimulateRun>,
    pub moments: Vec<MomentSummary>,
}

fn simulate(exp: &Experiment, art: &mut Artifacts) -> Result<SimulateReport, CliError> {
    let params = exp.cutoff_params()?;
    let sim = exp.sim();
    let p = exp.schedule.p;
    let mut runs = Vec::new();
    let mut moments = Vec::new();
    for (k, &eps) in exp.schedule.epsilons.iter().enumerate() {
        let times: Vec<f64> = match &exp.config.probes.times {
            Some(t) => t.clone(),
            None => exp.schedule.times(&params, eps).into_iter().map(|x| x.1).collect(),
        };
        if times.is_empty() {
            continue;
        }
        let batches = integrate_sde(&sim, Start::Point(exp.x0()), eps, &times, exp.n_traj(), epsilon_seed(exp.seed(), k))?;
        let mut bytes = Vec::new();
        write_batches_csv(&batches, &mut bytes).map_err(|e| CliError::Serialize(e.to_string()))?;
        let file = format!("trajectories_{k}.csv");
        art.add(file.clone(), bytes);
        moments.extend(batches.iter().map(|b| summarize(b, p)));
        runs.push(SimulateRun {
            epsilon: eps,
            file,
            times,
        });
    }
    let report = SimulateReport {
        schema_version: SCHEMA_VERSION,
        runs,
        moments,
    };
    art.json("summary.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WassersteinRow {
    pub epsilon: f64,
    pub r: f64,
    pub t: f64,
    pub method: Method,
    pub value: f64,
    pub stderr: Option<f64>,
    /// `value / eps^{1 ^ p}`.
    pub ratio: f64,
    /// False for upper bounds (quantile coupling with `p < 1`, sliced).
    pub exact: bool,
}

/// Uncoupled estimates of `W_p(X^eps_t(x0), mu^eps)` from independent
/// clouds, by every applicable method.
fn wasserstein(exp: &Experiment) -> Result<Vec<WassersteinRow>, CliError> {
    let params = exp.cutoff_params()?;
    let sim = exp.sim();
    let p = exp.schedule.p;
    let n = exp.n_traj();
    let est = exp.config.estimator;
    let blocks = est.batches.max(n.div_ceil(est.batch_cap));
    let mut rows = Vec::new();
    for (k, &eps) in exp.schedule.epsilons.iter().enumerate() {
        let rt = exp.schedule.times(&params, eps);
        if rt.is_empty() {
            continue;
        }
        let seed = epsilon_seed(exp.seed(), k);
        let times: Vec<f64> = rt.iter().map(|x| x.1).collect();
        let batches = integrate_sde(&sim, Start::Point(exp.x0()), eps, &times, n, seed)?;
        let mu = estimate_invariant_measure(&sim, eps, InvariantMethod::Ensemble, n, exp.horizon(), seed)?;
        let scale = ratio_scale(eps, p);
        for (&(r, t), b) in rt.iter().zip(&batches) {
            let x = EmpiricalMeasure::from_batch(b)?;
            let mut results = Vec::new();
            if x.dim() == 1 {
                results.push(wp_exact_1d(&x, &mu, p)?);
            }
            results.push(wp_batched(&x, &mu, p, blocks, est.batch_cap)?);
            if p >= 1.0 && x.dim() > 1 {
                results.push(wp_sliced(&x, &mu, p, exp.config.probes.sliced_directions, seed)?);
            }
            rows.extend(results.into_iter().map(|res| WassersteinRow {
                epsilon: eps,
                r,
                t,
                method: res.method,
                value: res.value,
                stderr: res.stderr,
                ratio: res.value / scale,
                exact: res.exact && !(res.method == Method::Exact1d && p < 1.0),
            }));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub law: &'static str,
    pub p: f64,
    pub shift: usize,
    pub shift_norm: f64,
    pub lhs: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneityRow {
    pub law_a: &'static str,
    pub law_b: &'static str,
    pub p: f64,
    pub translated: f64,
    pub reduced: f64,
    pub translation_pass: bool,
    pub base: f64,
    pub scaled: f64,
    pub factor: f64,
    pub homogeneity_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSuiteRow {
    pub case: &'static str,
    pub q_expected: f64,
    pub q: Option<f64>,
    pub ell_expected: usize,
    pub ell: Option<usize>,
    pub m_expected: usize,
    pub m: Option<usize>,
    pub thetas_match: bool,
    pub residual: Option<f64>,
    pub residual_tol: f64,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertiesReport {
    pub schema_version: u32,
    pub n: usize,
    pub dim: usize,
    pub shift_checks: usize,
    pub shift_failures: usize,
    pub homogeneity_checks: usize,
    pub homogeneity_failures: usize,
    pub spectral_cases: usize,
    pub spectral_failures: usize,
    pub all_pass: bool,
    #[serde(skip)]
    pub shifts: Vec<ShiftRow>,
    #[serde(skip)]
    pub homogeneity: Vec<HomogeneityRow>,
    #[serde(skip)]
    pub spectral: Vec<SpectralSuiteRow>,
}

/// Shift linearity on the builtin laws and shifts at `n` points.
pub fn shift_suite(n: usize, d: usize, ps: &[f64], seed: u64) -> Result<Vec<ShiftRow>, CliError> {
    let us = shifts(d);
    let jobs: Vec<(f64, Law, usize)> = ps
        .iter()
        .flat_map(|&p| LAWS.iter().flat_map(move |&law| (0..SHIFT_NORMS.len()).map(move |k| (p, law, k))))
        .collect();
    let samples: Vec<EmpiricalMeasure> = LAWS.iter().map(|l| l.sample(n, d, seed)).collect();
    jobs.par_iter()
        .map(|&(p, law, k)| {
            let mu = &samples[LAWS.iter().position(|l| *l == law).unwrap()];
            let rep = verify_shift_linearity(mu, &us[k], p, sampling_tol(mu))?;
            Ok(ShiftRow {
                law: law.name(),
                p,
                shift: k,
                shift_norm: us[k].iter().map(|v| v * v).sum::<f64>().sqrt(),
                lhs: rep.lhs,
                lower: rep.lower,
                upper: rep.upper,
                tol: rep.tol,
                pass: rep.pass,
            })
        })
        .collect()
}

/// Translation reduction and homogeneity on consecutive pairs of builtin laws.
pub fn homogeneity_suite(n: usize, d: usize, ps: &[f64], seed: u64) -> Result<Vec<HomogeneityRow>, CliError> {
    let us = shifts(d);
    let samples: Vec<EmpiricalMeasure> = LAWS.iter().map(|l| l.sample(n, d, seed)).collect();
    let jobs: Vec<(f64, usize)> = ps.iter().flat_map(|&p| (0..LAWS.len()).map(move |k| (p, k))).collect();
    jobs.par_iter()
        .map(|&(p, k)| {
            let j = (k + 1) % LAWS.len();
            let rep = verify_translation_homogeneity(&samples[k], &samples[j], &us[k], &us[j], 2.5, p)?;
            Ok(HomogeneityRow {
                law_a: LAWS[k].name(),
                law_b: LAWS[j].name(),
                p,
                translated: rep.translated,
                reduced: rep.reduced,
                translation_pass: rep.translation_pass,
                base: rep.base,
                scaled: rep.scaled,
                factor: rep.factor,
                homogeneity_pass: rep.homogeneity_pass,
            })
        })
        .collect()
}

/// Extraction on the builtin matrices against their known data. The
/// Hartman-Grobman residual must be below `1e-6` for diagonalizable cases
/// and `10 / t_max` for defective ones.
pub fn spectral_suite_check() -> Vec<SpectralSuiteRow> {
    spectral_suite()
        .into_iter()
        .map(|case| {
            let tol = if case.defective { 10.0 / case.t_max } else { 1e-6 };
            let mut row = SpectralSuiteRow {
                case: case.name,
                q_expected: case.q,
                q: None,
                ell_expected: case.ell,
                ell: None,
                m_expected: case.m,
                m: None,
                thetas_match: false,
                residual: None,
                residual_tol: tol,
                error: None,
                pass: false,
            };
            match linear_cutoff_params(&case.matrix, &case.w, &SpectralOptions::default()) {
                Ok(params) => {
                    let grid: Vec<f64> = (1..=400).map(|i| case.t_max * i as f64 / 400.0).collect();
                    let residual = verify_hg_limit(&params, &case.matrix, &case.w, &grid);
                    row.thetas_match = params.thetas.len() == case.thetas.len()
                        && params.thetas.iter().zip(&case.thetas).all(|(a, b)| (a - b).abs() < 1e-8);
                    row.pass = (params.q - case.q).abs() < 1e-8
                        && params.ell == case.ell
                        && params.m == case.m
                        && row.thetas_match
                        && residual < tol;
                    row.q = Some(params.q);
                    row.ell = Some(params.ell);
                    row.m = Some(params.m);
                    row.residual = Some(residual);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn properties(exp: &Experiment, art: &mut Artifacts) -> Result<PropertiesReport, CliError> {
    let pr = &exp.config.probes;
    let d = exp.field.dim();
    let n = pr.property_n;
    let shifts = shift_suite(n, d, &pr.property_ps, exp.seed())?;
    // Four assignment solves per row; a quarter of the sample keeps it cheap.
    let homogeneity = homogeneity_suite((n / 4).max(2), d, &pr.property_ps, exp.seed())?;
    let spectral = spectral_suite_check();
    let shift_failures = shifts.iter().filter(|r| !r.pass).count();
    let homogeneity_failures = homogeneity
        .iter()
        .filter(|r| !(r.translation_pass && r.homogeneity_pass))
        .count();
    let spectral_failures = spectral.iter().filter(|r| !r.pass).count();
    art.csv("shift_linearity.csv", &shifts)?;
    art.csv("homogeneity.csv", &homogeneity)?;
    art.csv("spectral_suite.csv", &spectral)?;
    let report = PropertiesReport {
        schema_version: SCHEMA_VERSION,
        n,
        dim: d,
        shift_checks: shifts.len(),
        shift_failures,
        homogeneity_checks: homogeneity.len(),
        homogeneity_failures,
        spectral_cases: spectral.len(),
        spectral_failures,
        all_pass: shift_failures + homogeneity_failures + spectral_failures == 0,
        shifts,
        homogeneity,
        spectral,
    };
    art.json("summary.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicRow {
    pub epsilon: f64,
    pub t: f64,
    pub wp: f64,
    pub stderr: f64,
    pub bound: f64,
    pub tol: f64,
    pub pass: bool,
}

impl ErgodicRow {
    fn new(epsilon: f64, pt: ErgodicPoint) -> Self {
        Self {
            epsilon,
            t: pt.t,
            wp: pt.wp,
            stderr: pt.stderr,
            bound: pt.bound,
            tol: pt.tol,
            pass: pt.pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicLevel {
    pub epsilon: f64,
    pub moment: f64,
    pub decay_slope: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicSummary {
    pub schema_version: u32,
    pub p: f64,
    pub delta: f64,
    pub levels: Vec<ErgodicLevel>,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<ErgodicRow>,
}

fn ergodic(exp: &Experiment, art: &mut Artifacts) -> Result<ErgodicSummary, CliError> {
    let delta = exp.field.delta();
    let times: Vec<f64> = match &exp.config.probes.times {
        Some(t) => t.clone(),
        None => (0..=8).map(|k| k as f64 / delta).collect(),
    };
    let sim = exp.sim();
    let opts = exp.estimator();
    let p = exp.schedule.p;
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for (k, &eps) in exp.schedule.epsilons.iter().enumerate() {
        let rep = ergodic_decay_check(&sim, eps, exp.x0(), p, &times, &opts, epsilon_seed(exp.seed(), k))?;
        let lo = times.first().copied().unwrap_or(0.0);
        let hi = times.last().copied().unwrap_or(0.0);
        levels.push(ErgodicLevel {
            epsilon: eps,
            moment: rep.moment,
            decay_slope: decay_slope(&rep, lo, hi),
            pass: rep.pass,
        });
        rows.extend(rep.points.into_iter().map(|pt| ErgodicRow::new(eps, pt)));
    }
    art.csv("ergodic.csv", &rows)?;
    let summary = ErgodicSummary {
        schema_version: SCHEMA_VERSION,
        p,
        delta,
        pass: levels.iter().all(|l| l.pass),
        levels,
        rows,
    };
    art.json("summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub epsilon: f64,
    pub r: f64,
    pub t: f64,
    pub wp_ratio: f64,
    pub stderr: f64,
    pub theory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreasingCheck {
    pub epsilon: f64,
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub schema_version: u32,
    pub p: f64,
    pub w: f64,
    pub granted: bool,
    pub fit: Option<ProfileFit>,
    pub fit_error: Option<String>,
    /// Curve against the profile at the smallest noise level.
    pub comparison: Vec<TheoryComparison>,
    /// Ratios at the two smallest noise levels.
    pub collapse: Vec<CollapsePoint>,
    pub max_disagreement: f64,
    pub decreasing: Vec<DecreasingCheck>,
    #[serde(skip)]
    pub curve: CutoffCurve,
    #[serde(skip)]
    pub spectral: SpectralReport,
}

fn cutoff(exp: &Experiment, art: &mut Artifacts) -> Result<CutoffReport, CliError> {
    let params = exp.cutoff_params()?;
    let curve = cutoff_curve(&exp.sim(), exp.x0(), &exp.schedule, &params, &exp.estimator(), exp.seed())?;
    let rows: Vec<CurveRow> = curve
        .entries
        .iter()
        .map(|e| CurveRow {
            epsilon: e.epsilon,
            r: e.r,
            t: e.t,
            wp_ratio: e.wp_ratio,
            stderr: e.stderr,
            theory: curve.theory_at(e.r).map(|pt| pt.value),
        })
        .collect();
    art.csv("curve.csv", &rows)?;
    let spectral = spectral_report(exp, &params, curve.verdict.clone(), curve.theory.clone());
    art.json("verdict.json", &spectral)?;

    let eps = curve.epsilons();
    let (fit, fit_error) = match profile_fit(&curve) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let comparison = match eps.last() {
        Some(&e) if curve.theory.is_some() => compare_with_theory(&curve, e)?,
        _ => Vec::new(),
    };
    let collapse = if eps.len() >= 2 {
        collapse_check(&curve, eps[eps.len() - 2], eps[eps.len() - 1])
    } else {
        Vec::new()
    };
    let report = CutoffReport {
        schema_version: SCHEMA_VERSION,
        p: curve.p,
        w: curve.w,
        granted: curve.verdict.granted,
        fit,
        fit_error,
        comparison,
        collapse,
        max_disagreement: max_epsilon_disagreement(&curve),
        decreasing: eps
            .iter()
            .map(|&epsilon| DecreasingCheck {
                epsilon,
                decreasing: is_decreasing_in_r(&curve, epsilon),
            })
            .collect(),
        curve,
        spectral,
    };
    art.json("summary.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledMomentRow {
    pub epsilon: f64,
    pub t: f64,
    pub p: f64,
    /// `E|X^eps_t - X^0_t|^p`.
    pub deviation: f64,
    pub deviation_stderr: f64,
    /// `E|X^eps_t - X^0_t - eps Y_t|^p`.
    pub fw_residual: f64,
    pub fw_residual_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsSummary {
    pub schema_version: u32,
    pub p: f64,
    pub plateau: f64,
    pub plateau_stderr: f64,
    /// Least-squares slope of `ln E|X^eps_t - X^0_t|^p` against `ln eps`.
    pub deviation_slope: Option<f64>,
    #[serde(skip)]
    pub entries: Vec<MomentEntry>,
    #[serde(skip)]
    pub coupled: Vec<CoupledMomentRow>,
}

/// Least-squares slope through `(x, y)` pairs.
pub fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn moments(exp: &Experiment, art: &mut Artifacts) -> Result<MomentsSummary, CliError> {
    let params = exp.cutoff_params()?;
    let sim = exp.sim();
    let p = exp.schedule.p;
    let report = moments_cutoff(&sim, exp.x0(), &exp.schedule, &params, &exp.estimator(), exp.seed())?;
    let t = exp.config.probes.moment_time;
    let mut coupled = Vec::new();
    for (k, &eps) in exp.schedule.epsilons.iter().enumerate() {
        let m = coupled_difference(&sim, exp.x0(), eps, t, exp.n_traj(), epsilon_seed(exp.seed(), k), &[p])?;
        coupled.push(CoupledMomentRow {
            epsilon: eps,
            t,
            p,
            deviation: m.theta[0],
            deviation_stderr: m.theta_stderr[0],
            fw_residual: m.delta[0],
            fw_residual_stderr: m.delta_stderr[0],
        });
    }
    let pts: Vec<(f64, f64)> = coupled
        .iter()
        .filter(|c| c.deviation > 0.0)
        .map(|c| (c.epsilon.ln(), c.deviation.ln()))
        .collect();
    art.csv("moments.csv", &report.entries)?;
    art.csv("coupled_moments.csv", &coupled)?;
    let summary = MomentsSummary {
        schema_version: SCHEMA_VERSION,
        p,
        plateau: report.plateau,
        plateau_stderr: report.plateau_stderr,
        deviation_slope: slope(&pts),
        entries: report.entries,
        coupled,
    };
    art.json("summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwErrorSummary {
    pub schema_version: u32,
    pub p: f64,
    /// First over last `W_p(X^eps, Y^eps) / eps` along the schedule.
    pub decrease_factor: Option<f64>,
    #[serde(skip)]
    pub points: Vec<FwErrorPoint>,
}

fn fw_error(exp: &Experiment, art: &mut Artifacts) -> Result<FwErrorSummary, CliError> {
    let params = exp.cutoff_params()?;
    let points = fw_error_decay(&exp.sim(), exp.x0(), &exp.schedule, &params, &exp.estimator(), exp.seed())?;
    art.csv("fw_error.csv", &points)?;
    let decrease_factor = match (points.first(), points.last()) {
        (Some(a), Some(b)) if points.len() >= 2 && b.wp_xy_over_eps > 0.0 => Some(a.wp_xy_over_eps / b.wp_xy_over_eps),
        _ => None,
    };
    let summary = FwErrorSummary {
        schema_version: SCHEMA_VERSION,
        p: exp.schedule.p,
        decrease_factor,
        points,
    };
    art.json("summary.json", &summary)?;
    Ok(summary)
}

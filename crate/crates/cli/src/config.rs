//! Experiment configuration.
//!
//! A config is a TOML document with top-level scalars (`master_seed`,
//! `output_dir`, `x0` and optional overrides) and the tables `[field]`,
//! `[noise]`, `[schedule]`, `[estimator]` and `[probes]`. See
//! `docs/config.md` for the schema.

use std::path::PathBuf;

use cutoff_lab::cutoff_experiments::{CutoffSchedule, EstimatorOptions};
use cutoff_lab::levy_noise::{JumpSpec, LevyTriplet};
use cutoff_lab::sde_sim::{default_dt, Scheme, SimSpec};
use cutoff_lab::spectral::{
    default_r0, linear_cutoff_params, nonlinear_cutoff_params, CutoffParams, FlowOptions, SpectralOptions,
};
use cutoff_lab::vector_fields::{
    fput_field, linear_field, linear_field_with_delta, oscillator_field, OscillatorParams, OscillatorPotential,
    OscillatorRotation, VectorFieldSpec,
};
use cutoff_lab::wasserstein::DEFAULT_CAP;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, FieldError};

pub const DEFAULT_N_TRAJ: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must fit in a TOML integer, i.e. at most `i64::MAX`.
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Burn-in time for stationary samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Radius of the linearization ball for nonlinear fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default)]
    pub scheme: SchemeName,
    pub field: FieldConfig,
    pub noise: NoiseConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    SplitRk4,
    EulerMaruyama,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::SplitRk4 => Scheme::SplitRk4,
            SchemeName::EulerMaruyama => Scheme::EulerMaruyama,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    /// `b(x) = x (1 + |x|^2)`.
    Fput { dim: usize },
    /// `b(x) = Q x`, rows of `Q`.
    Linear {
        matrix: Vec<Vec<f64>>,
        /// Claimed dissipativity constant; the least eigenvalue of the
        /// symmetric part when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    Oscillator {
        a: f64,
        b: f64,
        #[serde(default)]
        c: f64,
        eta0: f64,
        /// `F(x) = -eta0 + rotation_k |x|^2`.
        #[serde(default)]
        rotation_k: f64,
        /// Quartic coefficient of the potential.
        #[serde(default)]
        quartic_k: f64,
    },
}

impl FieldConfig {
    pub fn dim(&self) -> usize {
        match self {
            FieldConfig::Fput { dim } => *dim,
            FieldConfig::Linear { matrix, .. } => matrix.len(),
            FieldConfig::Oscillator { .. } => 2,
        }
    }

    /// Whether `b` is linear, so the spectral data come straight from `Db(0)`.
    pub fn is_linear(&self) -> bool {
        match self {
            FieldConfig::Fput { .. } => false,
            FieldConfig::Linear { .. } => true,
            FieldConfig::Oscillator {
                rotation_k, quartic_k, ..
            } => *rotation_k == 0.0 && *quartic_k == 0.0,
        }
    }

    pub fn build(&self) -> Result<VectorFieldSpec, String> {
        let built = match self {
            FieldConfig::Fput { dim } => fput_field(*dim),
            FieldConfig::Linear { matrix, delta } => {
                let m = square_matrix(matrix)?;
                match delta {
                    Some(d) => linear_field_with_delta(&m, *d),
                    None => linear_field(&m),
                }
            }
            FieldConfig::Oscillator {
                a,
                b,
                c,
                eta0,
                rotation_k,
                quartic_k,
            } => {
                let mut params = OscillatorParams::linear(*a, *b, *c, *eta0);
                if *rotation_k != 0.0 {
                    params.rotation = OscillatorRotation::Radial { k: *rotation_k };
                }
                if *quartic_k != 0.0 {
                    params.potential = OscillatorPotential::Quartic { k: *quartic_k };
                }
                oscillator_field(params)
            }
        };
        built.map_err(|e| e.to_string())
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("all matrix rows must have the same length".into());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("matrix entries must be finite".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn square_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let m = rows_to_matrix(rows)?;
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(format!("matrix must be square and nonempty, got {}x{}", m.nrows(), m.ncols()));
    }
    Ok(m)
}

fn infinite() -> f64 {
    f64::INFINITY
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// `sigma_sqrt B_t`, standard when `sigma_sqrt` is absent.
    Brownian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_sqrt: Option<Vec<Vec<f64>>>,
    },
    /// Optional Brownian part plus Gaussian jumps at Poisson times.
    CompoundPoisson {
        rate: f64,
        jump_mean: Vec<f64>,
        jump_cov_sqrt: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_sqrt: Option<Vec<Vec<f64>>>,
        #[serde(default = "infinite")]
        p_star: f64,
    },
    /// Rotation-invariant alpha-stable noise.
    StableIsotropic {
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
        p_star: f64,
    },
    /// Scalar alpha-stable noise along `direction`.
    StableProjected {
        direction: Vec<f64>,
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
        p_star: f64,
    },
}

impl NoiseConfig {
    pub fn build(&self, dim: usize) -> Result<LevyTriplet, String> {
        let built = match self {
            NoiseConfig::Brownian { sigma_sqrt: None } => LevyTriplet::brownian(dim),
            NoiseConfig::Brownian { sigma_sqrt: Some(s) } => LevyTriplet::degenerate_brownian(rows_to_matrix(s)?),
            NoiseConfig::CompoundPoisson {
                rate,
                jump_mean,
                jump_cov_sqrt,
                sigma_sqrt,
                p_star,
            } => {
                let sigma = match sigma_sqrt {
                    Some(s) => rows_to_matrix(s)?,
                    None => DMatrix::zeros(dim, 0),
                };
                LevyTriplet::new(
                    vec![0.0; sigma.nrows()],
                    sigma,
                    JumpSpec::CompoundPoisson {
                        rate: *rate,
                        jump_mean: jump_mean.clone(),
                        jump_cov_sqrt: rows_to_matrix(jump_cov_sqrt)?,
                    },
                    *p_star,
                )
            }
            NoiseConfig::StableIsotropic { alpha, scale, p_star } => {
                LevyTriplet::stable_isotropic(dim, *alpha, *scale, *p_star)
            }
            NoiseConfig::StableProjected {
                direction,
                alpha,
                scale,
                p_star,
            } => LevyTriplet::stable_projected(direction.clone(), *alpha, *scale, *p_star),
        };
        built.map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Strictly decreasing, in `(0, 1)`.
    pub epsilons: Vec<f64>,
    /// Window offsets `r`, strictly increasing.
    pub r_grid: Vec<f64>,
    #[serde(default = "one")]
    pub w: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "EstimatorConfig::default_batches")]
    pub batches: usize,
    #[serde(default = "EstimatorConfig::default_batch_cap")]
    pub batch_cap: usize,
}

impl EstimatorConfig {
    fn default_batches() -> usize {
        8
    }

    fn default_batch_cap() -> usize {
        2048
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            batches: Self::default_batches(),
            batch_cap: Self::default_batch_cap(),
        }
    }
}

/// Settings for the subcommands that do not run on the cutoff window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Output times for `simulate` and `ergodic`; `simulate` uses the
    /// cutoff window and `ergodic` uses `0, 1/delta, ..., 8/delta` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Time of the coupled moment estimate in `moments`.
    #[serde(default = "one")]
    pub moment_time: f64,
    /// Sample size of the builtin laws in `properties`.
    #[serde(default = "ProbeConfig::default_property_n")]
    pub property_n: usize,
    #[serde(default = "ProbeConfig::default_property_ps")]
    pub property_ps: Vec<f64>,
    /// Projections for the sliced estimate in `wasserstein`.
    #[serde(default = "ProbeConfig::default_directions")]
    pub sliced_directions: usize,
}

impl ProbeConfig {
    fn default_property_n() -> usize {
        2048
    }

    fn default_property_ps() -> Vec<f64> {
        vec![0.5, 1.0, 2.0]
    }

    fn default_directions() -> usize {
        64
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            times: None,
            moment_time: 1.0,
            property_n: Self::default_property_n(),
            property_ps: Self::default_property_ps(),
            sliced_directions: Self::default_directions(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, CliError> {
        let s = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Serialize(e.to_string()))
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), CliError> {
        self.resolve().map(|_| ())
    }

    /// Validates the config, fills in defaults and builds the model.
    pub fn resolve(&self) -> Result<Experiment, CliError> {
        let mut errs = Vec::new();
        let mut err = |field: &str, message: String| errs.push(FieldError::new(field, message));

        if self.master_seed > i64::MAX as u64 {
            err("master_seed", "must be at most 9223372036854775807 to fit a TOML integer".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            err("output_dir", "must not be empty".into());
        }

        let field = match self.field.build() {
            Ok(f) => Some(f),
            Err(e) => {
                err("field", e);
                None
            }
        };
        let dim = self.field.dim();
        let noise = match self.noise.build(dim) {
            Ok(n) => Some(n),
            Err(e) => {
                err("noise", e);
                None
            }
        };
        if let Some(n) = &noise {
            if n.dim() != dim {
                err("noise", format!("noise has dimension {} but the field has dimension {dim}", n.dim()));
            }
        }

        if self.x0.len() != dim {
            err("x0", format!("expected {dim} coordinates, found {}", self.x0.len()));
        } else if self.x0.iter().any(|v| !v.is_finite()) {
            err("x0", "coordinates must be finite".into());
        } else if self.x0.iter().all(|v| *v == 0.0) {
            err("x0", "must be nonzero; the origin is the fixed point".into());
        }

        let s = &self.schedule;
        if s.epsilons.is_empty() {
            err("schedule.epsilons", "needs at least one noise level".into());
        } else if s.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            err("schedule.epsilons", "every epsilon must lie in (0, 1)".into());
        } else if s.epsilons.windows(2).any(|p| p[1] >= p[0]) {
            err("schedule.epsilons", "must be strictly decreasing".into());
        }
        if s.r_grid.is_empty() {
            err("schedule.r_grid", "needs at least one offset".into());
        } else if s.r_grid.iter().any(|r| !r.is_finite()) || s.r_grid.windows(2).any(|p| p[1] <= p[0]) {
            err("schedule.r_grid", "must be finite and strictly increasing".into());
        }
        if !(s.w > 0.0 && s.w.is_finite()) {
            err("schedule.w", format!("window size must be positive and finite, got {}", s.w));
        }
        if !(s.p > 0.0 && s.p.is_finite()) {
            err("schedule.p", format!("must be positive and finite, got {}", s.p));
        } else if let Some(n) = &noise {
            if s.p >= n.p_star() {
                err(
                    "schedule.p",
                    format!(
                        "p = {} is not below the noise moment order p_star = {}; the noise moment hypothesis \
                         requires finite moments of order p, so p < p_star",
                        s.p,
                        n.p_star()
                    ),
                );
            }
        }

        let est = self.estimator;
        if est.batches == 0 {
            err("estimator.batches", "must be at least 1".into());
        }
        if est.batch_cap == 0 || est.batch_cap > DEFAULT_CAP {
            err("estimator.batch_cap", format!("must be in 1..={DEFAULT_CAP}"));
        }
        let n_traj = self.n_traj.unwrap_or(DEFAULT_N_TRAJ);
        if n_traj < est.batches.max(2) {
            err("n_traj", format!("must be at least max(2, estimator.batches) = {}", est.batches.max(2)));
        }

        let dt = self.dt.or(field.as_ref().map(|f| default_dt(f.delta())));
        if let (Some(dt), Some(f), Some(n)) = (dt, &field, &noise) {
            if n.dim() == f.dim() {
                if let Err(e) = SimSpec::new(f, n, dt).validate() {
                    err("dt", e.to_string());
                }
            }
        }
        let horizon = self.horizon.or(field.as_ref().map(|f| 20.0 / f.delta()));
        if let Some(h) = horizon {
            if !(h > 0.0 && h.is_finite()) {
                err("horizon", format!("must be positive and finite, got {h}"));
            }
        }
        let r0 = match (self.r0, &field) {
            (Some(r), _) => {
                if !(r > 0.0 && r.is_finite()) {
                    err("r0", format!("must be positive and finite, got {r}"));
                }
                Some(r)
            }
            (None, Some(f)) if !self.field.is_linear() => Some(default_r0(f)),
            _ => None,
        };

        let pr = &self.probes;
        if let Some(times) = &pr.times {
            if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                err("probes.times", "needs nonnegative finite times".into());
            } else if times.windows(2).any(|p| p[1] <= p[0]) {
                err("probes.times", "must be strictly increasing".into());
            }
        }
        if !(pr.moment_time > 0.0 && pr.moment_time.is_finite()) {
            err("probes.moment_time", format!("must be positive and finite, got {}", pr.moment_time));
        }
        if pr.property_n < 2 || pr.property_n > DEFAULT_CAP {
            err("probes.property_n", format!("must be in 2..={DEFAULT_CAP}"));
        }
        if pr.property_ps.is_empty() || pr.property_ps.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            err("probes.property_ps", "needs positive finite orders".into());
        }
        if pr.sliced_directions == 0 {
            err("probes.sliced_directions", "must be at least 1".into());
        }

        if !errs.is_empty() {
            return Err(CliError::ConfigInvalid(errs));
        }
        let field = field.unwrap();
        let noise = noise.unwrap();
        let dt = dt.unwrap();
        let horizon = horizon.unwrap();

        let mut resolved = self.clone();
        resolved.n_traj = Some(n_traj);
        resolved.dt = Some(dt);
        resolved.horizon = Some(horizon);
        resolved.r0 = r0;
        let schedule = CutoffSchedule::new(s.epsilons.clone(), s.r_grid.clone(), s.w, s.p)?;
        Ok(Experiment {
            config: resolved,
            field,
            noise,
            schedule,
        })
    }
}

/// A validated config with its model built. `config` has every default
/// filled in and is what the manifest records.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub field: VectorFieldSpec,
    pub noise: LevyTriplet,
    pub schedule: CutoffSchedule,
}

impl Experiment {
    pub fn seed(&self) -> u64 {
        self.config.master_seed
    }

    pub fn x0(&self) -> &[f64] {
        &self.config.x0
    }

    pub fn n_traj(&self) -> usize {
        self.config.n_traj.unwrap()
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon.unwrap()
    }

    pub fn sim(&self) -> SimSpec<'_> {
        SimSpec::new(&self.field, &self.noise, self.config.dt.unwrap()).with_scheme(self.config.scheme.into())
    }

    pub fn estimator(&self) -> EstimatorOptions {
        let mut opts = EstimatorOptions::new(self.n_traj());
        opts.horizon = self.config.horizon;
        opts.batches = self.config.estimator.batches;
        opts.batch_cap = self.config.estimator.batch_cap;
        opts
    }

    /// Spectral data of the flow from `x0`: read from `Db(0)` for linear
    /// fields, after running into the ball of radius `r0` otherwise.
    pub fn cutoff_params(&self) -> cutoff_lab::Result<CutoffParams> {
        let opts = SpectralOptions::default();
        match self.config.r0 {
            Some(r0) if !self.config.field.is_linear() => {
                nonlinear_cutoff_params(&self.field, self.x0(), r0, &FlowOptions::for_field(&self.field), &opts)
            }
            _ => linear_cutoff_params(&self.field.jacobian_at_origin(), self.x0(), &opts),
        }
    }
}

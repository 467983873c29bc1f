//! Python bindings: transport distances, linear cutoff data, the Gaussian
//! oracle and config-driven runs of the `cutoff-lab` subcommands.

use std::path::PathBuf;

use cutoff_lab::cutoff_experiments;
use cutoff_lab::spectral::{linear_cutoff_params, SpectralOptions};
use cutoff_lab::wasserstein::{wp_assignment, wp_sliced, EmpiricalMeasure};
use cutoff_lab_cli::{run_with_workers, CliError, ExperimentConfig, Subcommand};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn core_err(e: cutoff_lab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn measure(points: Vec<Vec<f64>>) -> PyResult<EmpiricalMeasure> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(PyValueError::new_err("all points must have the same dimension"));
    }
    EmpiricalMeasure::uniform(points.concat(), d).map_err(core_err)
}

/// Exact `W_p` between two uniform clouds of equal size.
#[pyfunction]
#[pyo3(signature = (a, b, p=2.0))]
fn wasserstein(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, p: f64) -> PyResult<f64> {
    let (a, b) = (measure(a)?, measure(b)?);
    wp_assignment(&a, &b, p).map(|r| r.value).map_err(core_err)
}

/// Sliced `W_p` (`p >= 1`), a lower bound on the exact value.
#[pyfunction]
#[pyo3(signature = (a, b, p=2.0, directions=64, seed=0))]
fn sliced_wasserstein(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, p: f64, directions: usize, seed: u64) -> PyResult<f64> {
    let (a, b) = (measure(a)?, measure(b)?);
    wp_sliced(&a, &b, p, directions, seed).map(|r| r.value).map_err(core_err)
}

/// Decay data of `e^{-At} x0`: `q`, `ell`, `m`, `thetas` and the real and
/// imaginary parts of the vectors `v_k`.
#[pyfunction]
fn linear_cutoff<'py>(py: Python<'py>, matrix: Vec<Vec<f64>>, x0: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let n = matrix.len();
    if matrix.iter().any(|row| row.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let a = DMatrix::from_row_iterator(n, n, matrix.concat());
    let params = linear_cutoff_params(&a, &x0, &SpectralOptions::default()).map_err(core_err)?;
    let out = PyDict::new(py);
    out.set_item("q", params.q)?;
    out.set_item("ell", params.ell)?;
    out.set_item("m", params.m)?;
    out.set_item("thetas", params.thetas.clone())?;
    let re: Vec<Vec<f64>> = params.vs.iter().map(|v| v.iter().map(|z| z.re).collect()).collect();
    let im: Vec<Vec<f64>> = params.vs.iter().map(|v| v.iter().map(|z| z.im).collect()).collect();
    out.set_item("vs_re", re)?;
    out.set_item("vs_im", im)?;
    out.set_item("norm_bound", params.norm_bound())?;
    Ok(out)
}

/// `(1/q)|ln eps| + ((ell - 1)/q) ln|ln eps|`.
#[pyfunction]
fn cutoff_time(q: f64, ell: usize, epsilon: f64) -> f64 {
    cutoff_experiments::cutoff_time(q, ell, epsilon)
}

/// Closed-form `W_2(X_t, mu) / eps` for the one-dimensional drift `b(x) = q x`
/// under Brownian noise.
#[pyfunction]
fn ou_gaussian_ratio(q: f64, x0: f64, epsilon: f64, t: f64) -> f64 {
    cutoff_experiments::ou_gaussian_ratio(q, x0, epsilon, t)
}

fn parse(config: &str, output_dir: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_toml_str(config).map_err(cli_err)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

/// Resolve a TOML config and return it with every default filled in.
#[pyfunction]
fn resolve_config(config: &str) -> PyResult<String> {
    let exp = parse(config, None)?.resolve().map_err(cli_err)?;
    exp.config.to_toml_string().map_err(cli_err)
}

/// Run one subcommand on a TOML config and return the paths written.
#[pyfunction]
#[pyo3(signature = (subcommand, config, output_dir=None, workers=None))]
fn run(
    py: Python<'_>,
    subcommand: &str,
    config: &str,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<Vec<PathBuf>> {
    let cmd: Subcommand = subcommand.parse().map_err(PyValueError::new_err)?;
    let cfg = parse(config, output_dir)?;
    if workers == Some(0) {
        return Err(PyValueError::new_err("workers must be positive"));
    }
    let outcome = py.detach(|| run_with_workers(&cfg, cmd, workers)).map_err(cli_err)?;
    Ok(outcome.written)
}

#[pymodule]
#[pyo3(name = "cutoff_lab")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(linear_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(cutoff_time, m)?)?;
    m.add_function(wrap_pyfunction!(ou_gaussian_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("SUBCOMMANDS", Subcommand::ALL.map(|c| c.name()).to_vec())?;
    Ok(())
}

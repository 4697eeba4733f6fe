//! Python bindings. Inputs and results cross the boundary as JSON strings
//! using the same schema as the command-line tool.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nacs_core::config::RunConfig;
use nacs_core::cosearch as search;
use nacs_core::costmodel::{analytical_model, network_cost, run_sweep};
use nacs_core::das::{das_optimize_network, gumbel_softmax_sample};
use nacs_core::gads::{validate, AcceleratorConfig, AcceleratorSpace};
use nacs_core::rng::stream;
use nacs_core::workload::NetworkDesc;
use nacs_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidChoice(_) | Error::InvalidLayer(_) | Error::ShapeMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn dump<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn load(config: &str, seed: Option<u64>) -> PyResult<RunConfig> {
    let cfg = RunConfig::from_json(config).map_err(err)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Cost report of `network` on `accel` under the config's tables and space.
#[pyfunction]
fn estimate(config: &str, network: &str, accel: &str) -> PyResult<String> {
    let cfg = load(config, None)?;
    let net: NetworkDesc = parse("network", network)?;
    let hw: AcceleratorConfig = parse("accel", accel)?;
    let space = AcceleratorSpace::for_network(cfg.accelerator_space, &net).map_err(err)?;
    let legality = validate(&hw, &net, &space, &cfg.cost_tables);
    let report = network_cost(&net, &hw, &cfg.cost_tables).map_err(err)?;
    dump(&serde_json::json!({ "legal": legality.is_legal(), "legality": legality, "report": report }))
}

/// Accelerator search for a fixed network.
#[pyfunction]
#[pyo3(signature = (config, network, seed=None))]
fn das(py: Python<'_>, config: &str, network: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = load(config, seed)?;
    let net: NetworkDesc = parse("network", network)?;
    let r = py
        .detach(|| {
            let space = AcceleratorSpace::for_network(cfg.accelerator_space.clone(), &net)?;
            das_optimize_network(&net, &space, &cfg.cost_tables, cfg.cosearch.objective, &cfg.das, None)
        })
        .map_err(err)?;
    dump(&serde_json::json!({ "cost": r.best_cost, "config": r.best, "legal_samples": r.legal_samples }))
}

#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn cosearch(py: Python<'_>, config: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = load(config, seed)?;
    let r = py.detach(|| search::run(&cfg.problem(), &cfg.cosearch, &cfg.das, &cfg.dns)).map_err(err)?;
    dump(&r)
}

#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn seq(py: Python<'_>, config: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = load(config, seed)?;
    let r = py
        .detach(|| search::run_sequential_baseline(&cfg.problem(), &cfg.cosearch, &cfg.das, &cfg.dns))
        .map_err(err)?;
    dump(&r)
}

#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn random_search(py: Python<'_>, config: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = load(config, seed)?;
    let r = py
        .detach(|| search::run_random_baseline(&cfg.problem(), &cfg.random, cfg.cosearch.objective, &cfg.dns))
        .map_err(err)?;
    dump(&r)
}

/// Analytical model vs loop-nest oracle over the config's sweep:
/// `(passed, checked, mismatches)`.
#[pyfunction]
fn oracle_check(py: Python<'_>, config: &str) -> PyResult<(bool, usize, usize)> {
    let cfg = load(config, None)?;
    let r = py.detach(|| run_sweep(&cfg.oracle_sweep, analytical_model)).map_err(err)?;
    Ok((r.passed(), r.checked, r.mismatches))
}

/// One Gumbel-softmax draw: `(choice, soft probabilities)`.
#[pyfunction]
fn gumbel_sample(logits: Vec<f64>, temp: f64, seed: u64) -> PyResult<(usize, Vec<f64>)> {
    gumbel_softmax_sample(&logits, temp, &mut stream(seed, &[])).map_err(err)
}

#[pymodule]
fn nacs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(das, m)?)?;
    m.add_function(wrap_pyfunction!(cosearch, m)?)?;
    m.add_function(wrap_pyfunction!(seq, m)?)?;
    m.add_function(wrap_pyfunction!(random_search, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_sample, m)?)?;
    Ok(())
}

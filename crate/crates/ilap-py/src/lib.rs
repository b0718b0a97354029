//! Python bindings for the allocation-and-pricing engine.
//!
//! The module exposes the exact solver, the confidence radii and price
//! discount, synthetic instance generation, the theoretical performance
//! ceiling, and the full simulation loop driven by the same text
//! configuration format the command line accepts.

use ilap_core::data;
use ilap_core::harness::per_seed_csv;
use ilap_core::rng::{stream, Purpose};
use ilap_core::{
    run_sim, solve_allocation, verify_stability, ConstraintProfile, Mode, PriceVector, SimConfig,
};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: ilap_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(theta: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = theta.len();
    let m = theta.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(PyValueError::new_err("theta must be a nonempty matrix"));
    }
    if theta.iter().any(|row| row.len() != m) {
        return Err(PyValueError::new_err("theta rows must share one length"));
    }
    Ok(DMatrix::from_fn(n, m, |u, i| theta[u][i]))
}

fn mode_from_str(mode: &str) -> PyResult<Mode> {
    match mode {
        "contextual" => Ok(Mode::Contextual),
        "lowrank" => Ok(Mode::LowRank),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'contextual' or 'lowrank', got '{other}'"
        ))),
    }
}

/// Solve one market exactly: welfare-optimal integral allocation plus
/// entrywise-minimal market-clearing prices.
#[pyfunction]
fn solve<'py>(
    py: Python<'py>,
    theta: Vec<Vec<f64>>,
    demands: Vec<u32>,
    capacities: Vec<u32>,
) -> PyResult<Bound<'py, PyDict>> {
    let mat = matrix_from_rows(&theta)?;
    let cons = ConstraintProfile::new(demands, capacities).map_err(err)?;
    let out = solve_allocation(&mat, &cons).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("welfare", out.welfare)?;
    d.set_item("pairs", out.allocation.pairs().to_vec())?;
    d.set_item("prices", out.prices.as_slice().to_vec())?;
    d.set_item("demand_duals", out.demand_duals)?;
    d.set_item("duality_gap", out.duality_gap)?;
    Ok(d)
}

/// Total and per-user instability of an allocation-and-prices outcome.
#[pyfunction]
#[pyo3(signature = (theta, pairs, prices, demands, capacities, accept_reject = false))]
fn stability(
    theta: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    prices: Vec<f64>,
    demands: Vec<u32>,
    capacities: Vec<u32>,
    accept_reject: bool,
) -> PyResult<(Vec<f64>, f64)> {
    let mat = matrix_from_rows(&theta)?;
    let (n, m) = mat.shape();
    let alloc = ilap_core::Allocation::new(n, m, pairs).map_err(err)?;
    let prices = PriceVector::new(prices).map_err(err)?;
    let cons = ConstraintProfile::new(demands, capacities).map_err(err)?;
    verify_stability(&mat, &alloc, &prices, &cons, accept_reject).map_err(err)
}

/// Squared per-user confidence radius of the contextual estimator.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn rho_star(
    t: usize,
    delta: f64,
    alpha: f64,
    gamma: f64,
    n: usize,
    m: usize,
    r: usize,
    eta: f64,
    g: f64,
) -> PyResult<f64> {
    ilap_core::rho_star(t, delta, alpha, gamma, n, m, r, eta, g).map_err(err)
}

/// Squared global confidence radius of the low-rank estimator.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn beta_star(
    t: usize,
    delta: f64,
    alpha: f64,
    gamma: f64,
    n: usize,
    m: usize,
    r: usize,
    eta: f64,
    g: f64,
) -> PyResult<f64> {
    ilap_core::beta_star(t, delta, alpha, gamma, n, m, r, eta, g).map_err(err)
}

/// Default price discount scale for a horizon-end radius.
#[pyfunction]
fn nu_default(mode: &str, radius: f64, n: usize, m: usize) -> PyResult<f64> {
    ilap_core::nu_default(mode_from_str(mode)?, radius, n, m).map_err(err)
}

/// Welfare-regret and instability ceilings for a full run.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn theoretical_bound(
    mode: &str,
    radius_total: f64,
    n_users: usize,
    m: usize,
    n_active: usize,
    t: usize,
    gamma: f64,
    accept_reject: bool,
) -> PyResult<(f64, f64)> {
    ilap_core::theoretical_bound(
        mode_from_str(mode)?,
        radius_total,
        n_users,
        m,
        n_active,
        t,
        gamma,
        accept_reject,
    )
    .map_err(err)
}

/// Deterministic synthetic bounded rank-`r` reward matrix, identical to
/// the one a simulation with the same seed plays against.
#[pyfunction]
fn synth_instance(n: usize, m: usize, r: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let mut rng = stream(seed, Purpose::Instance, &[n as u64, m as u64, r as u64]);
    let truth = data::synth_instance(n, m, r, &mut rng).map_err(err)?;
    Ok((0..n)
        .map(|u| (0..m).map(|i| truth.get(u, i)).collect())
        .collect())
}

/// Run a simulation from configuration text; one dictionary per seed
/// with the trajectory as CSV plus final summary numbers.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config_text: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = SimConfig::parse(config_text).map_err(err)?;
    let output = run_sim(&cfg).map_err(err)?;
    output
        .runs
        .iter()
        .map(|run| {
            let d = PyDict::new(py);
            d.set_item("seed", run.seed)?;
            d.set_item("final_cum_regret", run.final_cum_regret())?;
            d.set_item("final_cum_instability", run.final_cum_instability())?;
            d.set_item("coverage_held", run.coverage_held)?;
            d.set_item("csv", per_seed_csv(&run.rows))?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn ilap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(rho_star, m)?)?;
    m.add_function(wrap_pyfunction!(beta_star, m)?)?;
    m.add_function(wrap_pyfunction!(nu_default, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_bound, m)?)?;
    m.add_function(wrap_pyfunction!(synth_instance, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

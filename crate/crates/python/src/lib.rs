//! Python bindings. Instances cross the boundary as JSON strings in the
//! same format the CLI reads and writes.

use berk_nash::equilibrium::{verify_berk_nash, ActionDistribution, Posterior};
use berk_nash::model::{Contract, ContractInstance};
use berk_nash::{cli, learning, optimal, scenarios};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: berk_nash::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn instance(json: &str) -> PyResult<ContractInstance> {
    ContractInstance::from_json(json).map_err(err)
}

/// Parses and validates an instance, returning it in canonical JSON.
#[pyfunction]
fn validate(instance_json: &str) -> PyResult<String> {
    Ok(instance(instance_json)?.to_json())
}

/// `kl[b][a]` in nats; support violations are `inf`.
#[pyfunction]
fn kl_matrix(instance_json: &str) -> PyResult<Vec<Vec<f64>>> {
    let inst = instance(instance_json)?;
    Ok((0..inst.n_beliefs())
        .map(|b| (0..inst.n_actions()).map(|a| inst.kl(b, a)).collect())
        .collect())
}

/// Revenue-optimal contract report as JSON.
#[pyfunction]
fn solve(instance_json: &str) -> PyResult<String> {
    let inst = instance(instance_json)?;
    Ok(optimal::optimal_contract(&inst).map_err(err)?.to_json())
}

/// Returns `(valid, optimality_residual, consistency_residual)`.
#[pyfunction]
fn verify(instance_json: &str, contract: Vec<f64>, alpha: Vec<f64>, mu: Vec<f64>, epsilon: f64) -> PyResult<(bool, f64, f64)> {
    let inst = instance(instance_json)?;
    let p = Contract::new(contract).map_err(err)?;
    let alpha = ActionDistribution::new(alpha).map_err(err)?;
    let mu = Posterior::new(mu).map_err(err)?;
    let c = verify_berk_nash(&inst, &p, &alpha, &mu, epsilon).map_err(err)?;
    Ok((c.valid, c.residuals.optimality, c.residuals.consistency))
}

/// Returns `(actions, outcomes, switch_times)` of a seeded run.
#[pyfunction]
fn simulate(instance_json: &str, contract: Vec<f64>, rounds: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let inst = instance(instance_json)?;
    let p = Contract::new(contract).map_err(err)?;
    let t = learning::simulate(&inst, &p, rounds, seed).map_err(err)?;
    Ok((t.actions, t.outcomes, t.switch_times))
}

#[pyfunction]
#[pyo3(signature = (p, c, delta, correct=false))]
fn unhappy_instance(p: f64, c: f64, delta: f64, correct: bool) -> PyResult<String> {
    let params = scenarios::UnhappyParams::new(p, c, delta).map_err(err)?;
    let spec = if correct { scenarios::Specification::Correct } else { scenarios::Specification::Misspecified };
    Ok(scenarios::make_unhappy_principal(&params, spec).map_err(err)?.to_json())
}

/// Closed-form `(correct, misspecified, ratio)` revenues.
#[pyfunction]
fn unhappy_bounds(p: f64, c: f64, delta: f64) -> (f64, f64, f64) {
    let b = scenarios::unhappy_bounds(&scenarios::UnhappyParams { p, c, delta });
    (b.correct_revenue, b.misspecified_revenue, b.gap_ratio)
}

#[pyfunction]
fn divergence_instance() -> (String, Vec<f64>) {
    let (inst, p) = scenarios::make_divergence_instance();
    (inst.to_json(), p.payments().to_vec())
}

/// Runs a CLI command; returns `(exit_code, artifacts, summary)`.
#[pyfunction]
fn execute(argv: Vec<String>) -> (i32, Vec<String>, String) {
    let o = cli::execute(&argv);
    let paths = o.artifacts.iter().map(|p| p.display().to_string()).collect();
    (o.exit_code, paths, o.summary)
}

#[pymodule]
fn berk_nash_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(unhappy_instance, m)?)?;
    m.add_function(wrap_pyfunction!(unhappy_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_instance, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    Ok(())
}

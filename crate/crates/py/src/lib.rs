//! Python bindings. Results come back as plain dicts and lists, built from
//! the same JSON the command-line tool writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use evprice_core::coupled::{coupled_fixed_point, CouplingConfig};
use evprice_core::{
    fd_check, fixtures, gdgsa, grid_enumerate, load_tntp, sensitivity, solve_opf, solve_ue, Error, GdgsaConfig,
    GridSpec, ModelParams, PowerNetwork, PricingProblem, Scenario, UeOptions,
};

/// Validation errors raise `ValueError`, numerical failures `RuntimeError`.
fn err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

/// Transport network, demand and model parameters.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: Scenario,
}

impl PyScenario {
    fn problem(&self) -> PricingProblem<'_> {
        PricingProblem::new(&self.inner)
    }

    /// `lam`, or the rival prices of the owned stations.
    fn lambda(&self, lam: Option<Vec<f64>>) -> Vec<f64> {
        let p = self.problem();
        lam.unwrap_or_else(|| p.owned.iter().map(|&m| p.base_prices[m]).collect())
    }

    fn midpoint(&self) -> Vec<f64> {
        let (lo, hi) = self.problem().bounds();
        lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

#[pymethods]
impl PyScenario {
    /// Indices of the provider's stations.
    #[getter]
    fn owned(&self) -> Vec<usize> {
        self.inner.net.owned_stations()
    }

    /// `(lower, upper)` price bounds.
    #[getter]
    fn bounds(&self) -> (f64, f64) {
        (self.inner.params.price_lower, self.inner.params.price_upper)
    }

    /// Equilibrium at owned prices `lam` (default: rival prices).
    #[pyo3(signature = (lam=None, tol=1e-10))]
    fn solve_ue(&self, py: Python<'_>, lam: Option<Vec<f64>>, tol: f64) -> PyResult<Py<PyAny>> {
        let prices = self.problem().full_prices(&self.lambda(lam)).map_err(err)?;
        let sol = py.detach(|| solve_ue(&self.inner, &prices, &UeOptions::with_tol(tol))).map_err(err)?;
        to_py(py, &sol)
    }

    /// Provider profit at owned prices `lam`.
    #[pyo3(signature = (lam, tol=1e-10))]
    fn profit(&self, py: Python<'_>, lam: Vec<f64>, tol: f64) -> PyResult<f64> {
        let (_, f) = py
            .detach(|| self.problem().evaluate(&lam, None, &UeOptions::with_tol(tol)))
            .map_err(err)?;
        Ok(f)
    }

    /// Derivatives of the charging flows with respect to the owned prices.
    #[pyo3(signature = (lam=None, tol=1e-10))]
    fn sensitivity(&self, py: Python<'_>, lam: Option<Vec<f64>>, tol: f64) -> PyResult<Py<PyAny>> {
        let lam = self.lambda(lam);
        let r = py
            .detach(|| {
                let p = self.problem();
                let (sol, _) = p.evaluate(&lam, None, &UeOptions::with_tol(tol))?;
                sensitivity(&self.inner, &sol, &p.owned, &Default::default())
            })
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Gradient ascent on the profit from `lam0` (default: box midpoint).
    #[pyo3(signature = (lam0=None, alpha0=1.0, gamma=2.0, eps=1e-3, max_iters=200))]
    fn optimize(
        &self,
        py: Python<'_>,
        lam0: Option<Vec<f64>>,
        alpha0: f64,
        gamma: f64,
        eps: f64,
        max_iters: usize,
    ) -> PyResult<Py<PyAny>> {
        let start = lam0.unwrap_or_else(|| self.midpoint());
        let cfg = GdgsaConfig { alpha0, gamma, eps, max_iters, ..GdgsaConfig::default() };
        let t = py.detach(|| gdgsa(&self.problem(), &start, &cfg)).map_err(err)?;
        to_py(py, &t)
    }

    /// Best point of a grid with `points` values per owned price.
    #[pyo3(signature = (points=21, tol=1e-10))]
    fn grid(&self, py: Python<'_>, points: usize, tol: f64) -> PyResult<Py<PyAny>> {
        let p = self.problem();
        let (lo, hi) = p.bounds();
        let g = py
            .detach(|| grid_enumerate(&p, &GridSpec::with_points(lo, hi, points), &UeOptions::with_tol(tol)))
            .map_err(err)?;
        to_py(py, &(g.best_prices, g.best_profit, g.landscape.len()))
    }

    /// Analytic gradient against central differences at `lam` (default: midpoint).
    #[pyo3(signature = (lam=None, delta=1e-3))]
    fn fd_check(&self, py: Python<'_>, lam: Option<Vec<f64>>, delta: f64) -> PyResult<Py<PyAny>> {
        let lam = lam.unwrap_or_else(|| self.midpoint());
        let r = py
            .detach(|| fd_check(&self.problem(), &lam, delta, &Default::default(), &UeOptions::with_tol(1e-10)))
            .map_err(err)?;
        to_py(py, &r)
    }
}

/// Radial power network.
#[pyclass(name = "PowerNetwork", frozen)]
struct PyPowerNetwork {
    inner: PowerNetwork,
}

#[pymethods]
impl PyPowerNetwork {
    #[getter]
    fn buses(&self) -> usize {
        self.inner.buses.len()
    }

    /// Optimal power flow with `loads` MW of charging per bus.
    fn solve_opf(&self, py: Python<'_>, loads: Vec<f64>) -> PyResult<Py<PyAny>> {
        let sol = py.detach(|| solve_opf(&self.inner, &loads)).map_err(err)?;
        to_py(py, &sol)
    }
}

/// Reads a network, trip table and station file.
#[pyfunction]
#[pyo3(signature = (network, trips, fcs, energy=50.0, time_value=2.0, price_lower=200.0, price_upper=230.0, paths_per_od=8))]
#[allow(clippy::too_many_arguments)]
fn load_scenario(
    network: &str,
    trips: &str,
    fcs: &str,
    energy: f64,
    time_value: f64,
    price_lower: f64,
    price_upper: f64,
    paths_per_od: usize,
) -> PyResult<PyScenario> {
    let (net, demand) = load_tntp(network, trips, fcs).map_err(err)?;
    let params = ModelParams { charge_energy: energy, time_value, price_lower, price_upper };
    let inner = Scenario::new(net, demand, params, paths_per_od).map_err(err)?;
    Ok(PyScenario { inner })
}

/// The five-node toy network.
#[pyfunction]
fn illustrative() -> PyScenario {
    PyScenario { inner: fixtures::illustrative() }
}

/// Nguyen-Dupuis with stations at nodes 5, 8, 9 and 13.
#[pyfunction]
fn nguyen_dupuis() -> PyScenario {
    PyScenario { inner: fixtures::nguyen_dupuis() }
}

#[pyfunction]
fn load_power(path: &str) -> PyResult<PyPowerNetwork> {
    Ok(PyPowerNetwork { inner: evprice_core::load_power(path).map_err(err)? })
}

/// The four-bus feeder matched to the Nguyen-Dupuis stations.
#[pyfunction]
fn four_bus() -> PyPowerNetwork {
    PyPowerNetwork { inner: fixtures::four_bus() }
}

/// Alternates optimal power flow and price optimization until the profit settles.
#[pyfunction]
#[pyo3(signature = (scenario, power, lam0=None, load_scale=1.0, lmp_scale=1.0, eps=1e-3, max_cycles=20))]
#[allow(clippy::too_many_arguments)]
fn coupled_run(
    py: Python<'_>,
    scenario: &PyScenario,
    power: &PyPowerNetwork,
    lam0: Option<Vec<f64>>,
    load_scale: f64,
    lmp_scale: f64,
    eps: f64,
    max_cycles: usize,
) -> PyResult<Py<PyAny>> {
    let start = lam0.unwrap_or_else(|| scenario.midpoint());
    let cfg = CouplingConfig { load_scale, lmp_scale, eps, max_cycles, ..CouplingConfig::default() };
    let r = py
        .detach(|| coupled_fixed_point(&scenario.problem(), &power.inner, &start, &cfg))
        .map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn evprice(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyPowerNetwork>()?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(illustrative, m)?)?;
    m.add_function(wrap_pyfunction!(nguyen_dupuis, m)?)?;
    m.add_function(wrap_pyfunction!(load_power, m)?)?;
    m.add_function(wrap_pyfunction!(four_bus, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_run, m)?)?;
    m.add("ND_LOAD_SCALE", fixtures::ND_LOAD_SCALE)?;
    m.add("__version__", evprice_core::VERSION)?;
    Ok(())
}

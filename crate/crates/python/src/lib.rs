//! Python bindings for sensor placement and flow prediction.

use std::path::Path;
use std::time::Duration;

use flowsense_core as fs;
use fs::instances;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: fs::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A directed network; edge `i` runs from `edges[i][0]` to `edges[i][1]`.
#[pyclass(name = "FlowNetwork", frozen)]
struct PyFlowNetwork {
    inner: fs::FlowNetwork,
}

#[pymethods]
impl PyFlowNetwork {
    #[new]
    #[pyo3(signature = (node_count, edges, name = "network"))]
    fn new(node_count: usize, edges: Vec<(usize, usize)>, name: &str) -> PyResult<Self> {
        let inner = fs::FlowNetwork::new(name, node_count, edges).map_err(err)?;
        Ok(Self { inner })
    }

    /// Parses TNTP network text.
    #[staticmethod]
    #[pyo3(signature = (text, name = "network"))]
    fn from_tntp(text: &str, name: &str) -> PyResult<Self> {
        let inner = fs::dataio::parse_network(name, text).map_err(err)?;
        Ok(Self { inner })
    }

    /// A street grid loaded with random trips; returns `(network, flows)`.
    #[staticmethod]
    #[pyo3(signature = (rows, cols, trips = None, seed = 0))]
    fn grid(rows: usize, cols: usize, trips: Option<usize>, seed: u64) -> PyResult<(Self, Vec<f64>)> {
        if rows * cols < 2 {
            return Err(PyValueError::new_err("grid needs at least two nodes"));
        }
        let (inner, flow) = instances::seeded_road_grid(rows, cols, trips.unwrap_or(10 * rows * cols), seed);
        Ok((Self { inner }, flow.into_inner()))
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    /// Dimension of the cycle space, `m - n + components`.
    #[getter]
    fn cycle_rank(&self) -> usize {
        self.inner.cycle_rank()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    /// Net inflow minus outflow at every node.
    fn divergence(&self, flow: Vec<f64>) -> PyResult<Vec<f64>> {
        fs::graph::divergence(&self.inner, &fs::EdgeFlow::new(flow)).map_err(err)
    }

    /// Parses TNTP flow text for this network.
    fn parse_flow(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(fs::dataio::parse_flow(text, &self.inner).map_err(err)?.into_inner())
    }

    fn to_tntp(&self) -> String {
        fs::dataio::write_network(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowNetwork(name={:?}, nodes={}, edges={})",
            self.inner.name(),
            self.inner.node_count(),
            self.inner.edge_count()
        )
    }
}

/// Loads a TNTP network and its flow file.
#[pyfunction]
#[pyo3(signature = (network_path, flow_path, name = "network"))]
fn load_tntp(network_path: &str, flow_path: &str, name: &str) -> PyResult<(PyFlowNetwork, Vec<f64>)> {
    let bundle = fs::dataio::NetworkBundle::load(name, Path::new(network_path), Path::new(flow_path)).map_err(err)?;
    Ok((PyFlowNetwork { inner: bundle.net }, bundle.flows.into_inner()))
}

#[pyclass(name = "SensorPlan", frozen, get_all)]
struct PySensorPlan {
    algorithm: String,
    sensors: Vec<usize>,
    error_trace: Vec<f64>,
    elapsed_ms: f64,
    evaluations: usize,
    truncated: bool,
    factorizations: usize,
    solves: usize,
}

#[pymethods]
impl PySensorPlan {
    #[getter]
    fn final_error(&self) -> Option<f64> {
        self.error_trace.last().copied()
    }

    fn __repr__(&self) -> String {
        format!(
            "SensorPlan(algorithm={:?}, sensors={:?}, evaluations={})",
            self.algorithm, self.sensors, self.evaluations
        )
    }
}

/// An int budget is a sensor count, a float a fraction of the candidates.
#[derive(FromPyObject)]
enum BudgetArg {
    Count(usize),
    Fraction(f64),
}

/// Flows on every edge given the flows at `sensors`.
#[pyfunction]
#[pyo3(signature = (net, sensors, observed, lam = fs::DEFAULT_LAMBDA))]
fn predict(net: &PyFlowNetwork, sensors: Vec<usize>, observed: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    let b = net.inner.incidence();
    let problem = fs::PredictionProblem::new(&b, sensors, observed, lam).map_err(err)?;
    Ok(fs::predict_flows(&problem).map_err(err)?.into_inner())
}

/// Selects sensors with one of the placement algorithms.
#[pyfunction]
#[pyo3(signature = (
    net, flow, budget, algorithm = "lazy_recursive", seed = 0, lam = fs::DEFAULT_LAMBDA,
    candidates = None, targets = None, route = "node", time_limit = None
))]
#[allow(clippy::too_many_arguments)]
fn place(
    py: Python<'_>,
    net: &PyFlowNetwork,
    flow: Vec<f64>,
    budget: BudgetArg,
    algorithm: &str,
    seed: u64,
    lam: f64,
    candidates: Option<Vec<usize>>,
    targets: Option<Vec<usize>>,
    route: &str,
    time_limit: Option<f64>,
) -> PyResult<PySensorPlan> {
    let algorithm: fs::Algorithm = algorithm.parse().map_err(err)?;
    let route: fs::RecursiveRoute = route.parse().map_err(err)?;
    let budget = match budget {
        BudgetArg::Count(k) => fs::Budget::Count(k),
        BudgetArg::Fraction(f) => fs::Budget::Fraction(f),
    };
    let flow = fs::EdgeFlow::new(flow);
    flow.check_len(net.inner.edge_count()).map_err(err)?;
    let mut req = fs::PlacementRequest::new(&net.inner, &flow, budget, algorithm)
        .seed(seed)
        .lambda(lam)
        .route(route)
        .time_limit(time_limit.map(Duration::from_secs_f64));
    if let Some(c) = candidates {
        req = req.candidates(c);
    }
    if let Some(t) = targets {
        req = req.targets(t);
    }
    let plan = py.detach(|| fs::place(&req)).map_err(err)?;
    Ok(PySensorPlan {
        algorithm: plan.algorithm.name().to_string(),
        sensors: plan.sensors,
        error_trace: plan.error_trace,
        elapsed_ms: plan.elapsed_ms,
        evaluations: plan.evaluations,
        truncated: plan.truncated,
        factorizations: plan.ops.factorizations,
        solves: plan.ops.solves,
    })
}

/// Near-conserved flows weighted towards the cycle space.
#[pyfunction]
#[pyo3(signature = (net, b = 20.0, eps = 0.1))]
fn synthetic_flow(net: &PyFlowNetwork, b: f64, eps: f64) -> PyResult<Vec<f64>> {
    let flow = fs::synthetic_flow(&net.inner.incidence(), fs::SyntheticParams { b, eps }).map_err(err)?;
    Ok(flow.into_inner())
}

/// Adds Gaussian noise with standard deviation `r` times that of `flow`.
#[pyfunction]
#[pyo3(signature = (flow, r, seed = 0))]
fn add_noise(flow: Vec<f64>, r: f64, seed: u64) -> PyResult<Vec<f64>> {
    let noisy = fs::add_noise(&fs::EdgeFlow::new(flow), fs::NoiseParams { r, seed }).map_err(err)?;
    Ok(noisy.into_inner())
}

/// Corr, MSE, MAE, MAPE and max error of `predicted` on `edges` (default: all).
#[pyfunction]
#[pyo3(signature = (predicted, truth, edges = None))]
fn score<'py>(
    py: Python<'py>,
    predicted: Vec<f64>,
    truth: Vec<f64>,
    edges: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let edges = edges.unwrap_or_else(|| (0..truth.len()).collect());
    let r = fs::score(&predicted, &truth, &edges).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("corr", r.corr)?;
    out.set_item("mse", r.mse)?;
    out.set_item("mae", r.mae)?;
    out.set_item("mape", r.mape)?;
    out.set_item("mape_support", r.mape_support)?;
    out.set_item("max_err", r.max_err)?;
    Ok(out)
}

/// Upper bound on the reconstruction error from `sensors` when they number the cycle rank.
#[pyfunction]
fn rrqr_bound(net: &PyFlowNetwork, sensors: Vec<usize>, flow: Vec<f64>) -> PyResult<f64> {
    fs::rrqr_bound(&net.inner.incidence(), &sensors, &flow).map_err(err)
}

#[pymodule]
fn flowsense(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFlowNetwork>()?;
    m.add_class::<PySensorPlan>()?;
    m.add_function(wrap_pyfunction!(load_tntp, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(place, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_flow, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(rrqr_bound, m)?)?;
    m.add("DEFAULT_LAMBDA", fs::DEFAULT_LAMBDA)?;
    Ok(())
}

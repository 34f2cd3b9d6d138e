//! Python bindings: datasets, policies, fitting and evaluation.

use boxpolicy_core as core;
use core::bnp::{self, BnPConfig};
use core::cli::{self as cli, PolicyDocument};
use core::data::{self, Label, Sample};
use core::scores::Method;
use core::simgen::{self, Scenario};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scenario(id: &str) -> PyResult<Scenario> {
    id.parse().map_err(err)
}

#[pyclass(name = "Hyperbox", module = "boxpolicy")]
#[derive(Clone)]
struct PyHyperbox {
    inner: data::Hyperbox,
}

#[pymethods]
impl PyHyperbox {
    #[new]
    fn new(lower: Vec<f64>, upper: Vec<f64>) -> PyResult<Self> {
        Ok(PyHyperbox { inner: data::Hyperbox::new(lower, upper).map_err(err)? })
    }

    #[getter]
    fn lower(&self) -> Vec<f64> {
        self.inner.lower.clone()
    }

    #[getter]
    fn upper(&self) -> Vec<f64> {
        self.inner.upper.clone()
    }

    fn contains(&self, x: Vec<f64>) -> PyResult<bool> {
        data::box_contains(&self.inner, &x).map_err(err)
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn __repr__(&self) -> String {
        format!("Hyperbox(lower={:?}, upper={:?})", self.inner.lower, self.inner.upper)
    }
}

#[pyclass(name = "Policy", module = "boxpolicy")]
#[derive(Clone)]
struct PyPolicy {
    inner: data::Policy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (boxes, flipped = false))]
    fn new(boxes: Vec<PyHyperbox>, flipped: bool) -> Self {
        PyPolicy { inner: data::Policy::new(boxes.into_iter().map(|b| b.inner).collect(), flipped) }
    }

    #[getter]
    fn boxes(&self) -> Vec<PyHyperbox> {
        self.inner.boxes.iter().map(|b| PyHyperbox { inner: b.clone() }).collect()
    }

    #[getter]
    fn flipped(&self) -> bool {
        self.inner.flipped
    }

    /// Treatment decision, `+1` or `-1`.
    fn decide(&self, x: Vec<f64>) -> PyResult<i8> {
        data::policy_decide(&self.inner, &x).map(Label::as_i8).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.boxes.len()
    }
}

#[pyclass(name = "Dataset", module = "boxpolicy")]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(x: Vec<Vec<f64>>, t: Vec<i64>, y: Vec<f64>) -> PyResult<Self> {
        if x.len() != t.len() || x.len() != y.len() {
            return Err(PyValueError::new_err("x, t and y must have the same length"));
        }
        let samples = x
            .into_iter()
            .zip(t)
            .zip(y)
            .map(|((x, t), y)| {
                let t = Label::from_sign(t).ok_or_else(|| PyValueError::new_err(format!("label must be +1 or -1, got {t}")))?;
                Ok(Sample { x, t, y })
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyDataset { inner: data::Dataset::new(samples).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, zero_one_labels = false))]
    fn from_csv(path: &str, zero_one_labels: bool) -> PyResult<Self> {
        Ok(PyDataset { inner: data::load_csv(path, zero_one_labels).map_err(err)? })
    }

    /// Draws `n` samples from a named synthetic scenario.
    #[staticmethod]
    fn simulate(scenario_id: &str, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset { inner: simgen::generate(scenario(scenario_id)?, n, seed).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.samples().iter().map(|s| s.x.clone()).collect()
    }

    #[getter]
    fn t(&self) -> Vec<i8> {
        self.inner.samples().iter().map(|s| s.t.as_i8()).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.samples().iter().map(|s| s.y).collect()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(|e| PyValueError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
}

#[pyclass(name = "FitResult", module = "boxpolicy", get_all)]
struct PyFitResult {
    policy: PyPolicy,
    objective: f64,
    penalized_objective: f64,
    relaxation_bound: f64,
    nodes_explored: usize,
    columns_generated: usize,
    status: String,
    document: String,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(boxes={}, objective={}, status={})",
            self.policy.inner.boxes.len(),
            self.objective,
            self.status
        )
    }
}

/// Learns a policy with at most `max_boxes` boxes.
#[pyfunction]
#[pyo3(signature = (
    dataset, max_boxes, method = "dr", nuisance = "kernel+logistic", penalty = 0.0, flip = false,
    scale_psi = false, max_nodes = 50, pricing_time_limit = 180.0, milp_time_limit = 30.0, time_limit = None
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    dataset: &PyDataset,
    max_boxes: usize,
    method: &str,
    nuisance: &str,
    penalty: f64,
    flip: bool,
    scale_psi: bool,
    max_nodes: usize,
    pricing_time_limit: f64,
    milp_time_limit: f64,
    time_limit: Option<f64>,
) -> PyResult<PyFitResult> {
    let method: Method = method.parse().map_err(err)?;
    let ds = &dataset.inner;
    let config = BnPConfig {
        m_max: max_boxes,
        omega: penalty,
        flip,
        max_nodes,
        pricing_time_limit,
        milp_time_limit,
        time_limit: time_limit.unwrap_or(f64::INFINITY),
        ..BnPConfig::default()
    };
    let (result, doc) = py.allow_threads(|| -> core::Result<_> {
        let scores = cli::scores_for(ds, method, nuisance, scale_psi)?;
        let result = bnp::fit(ds, &scores, &config)?;
        let doc = cli::document_from_fit(ds, &result, method, &config, nuisance, scale_psi, None);
        Ok((result, doc))
    })
    .map_err(err)?;
    Ok(PyFitResult {
        policy: PyPolicy { inner: result.policy.clone() },
        objective: result.objective,
        penalized_objective: result.penalized_objective,
        relaxation_bound: result.relaxation_bound,
        nodes_explored: result.nodes_explored,
        columns_generated: result.columns_generated,
        status: result.status.id().to_string(),
        document: doc.to_json(),
    })
}

/// Weighted mismatch of `policy` on `dataset` under the chosen scores.
#[pyfunction]
#[pyo3(signature = (policy, dataset, method = "dr", nuisance = "kernel+logistic", scale_psi = false))]
fn empirical_objective(
    policy: &PyPolicy,
    dataset: &PyDataset,
    method: &str,
    nuisance: &str,
    scale_psi: bool,
) -> PyResult<f64> {
    let method: Method = method.parse().map_err(err)?;
    let scores = cli::scores_for(&dataset.inner, method, nuisance, scale_psi).map_err(err)?;
    core::eval::empirical_objective(&policy.inner, &dataset.inner, &scores).map_err(err)
}

/// Monte-Carlo policy value as `(mean, standard_error)`.
#[pyfunction]
#[pyo3(signature = (policy, scenario_id, n_mc = 100_000, seed = 0))]
fn policy_value(policy: &PyPolicy, scenario_id: &str, n_mc: usize, seed: u64) -> PyResult<(f64, f64)> {
    let e = core::eval::policy_value_mc_se(&policy.inner, scenario(scenario_id)?, n_mc, seed).map_err(err)?;
    Ok((e.mean, e.se))
}

/// Monte-Carlo regret as `(mean, standard_error)`.
#[pyfunction]
#[pyo3(signature = (policy, scenario_id, n_mc = 100_000, seed = 0))]
fn regret(policy: &PyPolicy, scenario_id: &str, n_mc: usize, seed: u64) -> PyResult<(f64, f64)> {
    let e = core::eval::regret_se(&policy.inner, scenario(scenario_id)?, n_mc, seed).map_err(err)?;
    Ok((e.mean, e.se))
}

#[pyfunction]
fn rademacher_bound(max_boxes: usize) -> f64 {
    core::eval::rademacher_bound(max_boxes)
}

/// Parses a policy JSON document into a policy.
#[pyfunction]
fn load_policy(document: &str) -> PyResult<PyPolicy> {
    Ok(PyPolicy { inner: PolicyDocument::from_json(document).map_err(err)?.policy() })
}

/// Renders a policy JSON document as `text` or `dot`.
#[pyfunction]
#[pyo3(signature = (document, format = "text"))]
fn render(document: &str, format: &str) -> PyResult<String> {
    let doc = PolicyDocument::from_json(document).map_err(err)?;
    match format {
        "text" => Ok(cli::render_text(&doc)),
        "dot" => Ok(cli::render_dot(&doc)),
        other => Err(PyValueError::new_err(format!("unknown format `{other}`"))),
    }
}

#[pymodule]
fn boxpolicy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyperbox>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_objective, m)?)?;
    m.add_function(wrap_pyfunction!(policy_value, m)?)?;
    m.add_function(wrap_pyfunction!(regret, m)?)?;
    m.add_function(wrap_pyfunction!(rademacher_bound, m)?)?;
    m.add_function(wrap_pyfunction!(load_policy, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    Ok(())
}

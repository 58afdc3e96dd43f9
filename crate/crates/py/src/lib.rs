//! Python bindings: datasets, tree models, the exact learner, baselines,
//! the MPC oracle, MILP export and closed-loop simulation.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use symtree_core::baselines;
use symtree_core::basis::canonical_basis;
use symtree_core::data::Dataset;
use symtree_core::learner::{self, LearnConfig};
use symtree_core::milp;
use symtree_core::mpc::{self, MpcSpec, SampleMode};
use symtree_core::sim::{self, Controller};
use symtree_core::tree::{self, TreeModel};
use symtree_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Convergence(_) | Error::Numerical(_) | Error::Controller { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Dataset", module = "symtree", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// One-feature dataset from matching lists of states and labels.
    #[new]
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Self> {
        Dataset::from_1d(&xs, &ys).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Dataset::from_csv(text).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[getter]
    fn xs(&self) -> Vec<f64> {
        self.inner.column(0)
    }

    #[getter]
    fn ys(&self) -> Vec<f64> {
        self.inner.labels().to_vec()
    }

    fn sha256(&self) -> String {
        self.inner.sha256()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "TreeModel", module = "symtree", skip_from_py_object)]
#[derive(Clone)]
struct PyTreeModel {
    inner: TreeModel,
}

#[pymethods]
impl PyTreeModel {
    /// The published CSTR tree.
    #[staticmethod]
    fn reference() -> Self {
        PyTreeModel {
            inner: tree::reference_cstr_model(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        tree::deserialize(text).map(|inner| PyTreeModel { inner }).map_err(py_err)
    }

    fn to_json(&self) -> String {
        tree::serialize(&self.inner)
    }

    fn predict(&self, x: f64) -> PyResult<f64> {
        self.inner.predict(&[x]).map_err(py_err)
    }

    fn predict_many(&self, xs: Vec<f64>) -> PyResult<Vec<f64>> {
        xs.iter().map(|&x| self.inner.predict(&[x]).map_err(py_err)).collect()
    }

    /// Leaf node reached by `x`.
    fn route(&self, x: f64) -> PyResult<usize> {
        self.inner.route(&[x]).map_err(py_err)
    }

    /// `(node, threshold)` of every branch node.
    fn splits(&self) -> Vec<(usize, f64)> {
        self.inner.rules.iter().map(|(&n, r)| (n, r.threshold)).collect()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn complexity(&self) -> usize {
        self.inner.complexity()
    }

    fn is_valid(&self) -> bool {
        self.inner.is_valid()
    }

    fn __str__(&self) -> String {
        self.inner.describe()
    }
}

#[pyclass(name = "FitReport", module = "symtree", get_all)]
struct PyFitReport {
    model: PyTreeModel,
    objective: f64,
    l_acc: f64,
    l_c: f64,
    l_m: f64,
    subproblems_solved: usize,
    wall_time_s: f64,
}

/// Globally optimal symbolic tree over the 19-function basis.
#[pyfunction]
#[pyo3(signature = (data, depth=2, lambda_c=1e-2, lambda_m=1e-2, c_bounds=(-100.0, 100.0), y_bounds=None))]
fn fit_tree(
    py: Python<'_>,
    data: &PyDataset,
    depth: usize,
    lambda_c: f64,
    lambda_m: f64,
    c_bounds: (f64, f64),
    y_bounds: Option<(f64, f64)>,
) -> PyResult<PyFitReport> {
    let cfg = LearnConfig {
        depth,
        lambda_c,
        lambda_m,
        c_bounds,
        y_bounds,
        ..LearnConfig::default()
    };
    let d = data.inner.clone();
    let r = py
        .detach(|| learner::fit_tree(&d, &canonical_basis(), &cfg))
        .map_err(py_err)?;
    Ok(PyFitReport {
        model: PyTreeModel { inner: r.model },
        objective: r.objective,
        l_acc: r.breakdown.l_acc,
        l_c: r.breakdown.l_c,
        l_m: r.breakdown.l_m,
        subproblems_solved: r.subproblems_solved,
        wall_time_s: r.wall_time.as_secs_f64(),
    })
}

/// Comparison model: `"sparse"`, `"cart"` or `"lintree"`.
#[pyfunction]
#[pyo3(signature = (data, kind, depth=2, lambda_m=0.0))]
fn fit_baseline(data: &PyDataset, kind: &str, depth: usize, lambda_m: f64) -> PyResult<PyTreeModel> {
    let inner = match kind {
        "sparse" => {
            baselines::fit_sparse(&data.inner, &canonical_basis(), lambda_m, (-100.0, 100.0))
                .map_err(py_err)?
                .model
        }
        "cart" => baselines::fit_cart_constant(&data.inner, depth),
        "lintree" => baselines::fit_cart_linear(&data.inner, depth),
        _ => return Err(PyValueError::new_err(format!("unknown baseline kind {kind:?}"))),
    };
    Ok(PyTreeModel { inner })
}

/// MPC-labeled dataset of the CSTR; `mode` is `"uniform-grid"` or
/// `"seeded-random"`.
#[pyfunction]
#[pyo3(signature = (n=50, lo=0.1, hi=0.9, mode="uniform-grid", seed=0))]
fn generate_dataset(py: Python<'_>, n: usize, lo: f64, hi: f64, mode: &str, seed: u64) -> PyResult<PyDataset> {
    let mode = match mode {
        "uniform-grid" => SampleMode::UniformGrid,
        "seeded-random" => SampleMode::SeededRandom,
        _ => return Err(PyValueError::new_err(format!("unknown sampling mode {mode:?}"))),
    };
    py.detach(|| mpc::generate_dataset(&MpcSpec::default(), n, lo, hi, mode, seed))
        .map(|inner| PyDataset { inner })
        .map_err(py_err)
}

#[pyclass(name = "MpcSolution", module = "symtree", get_all)]
struct PyMpcSolution {
    controls: Vec<f64>,
    states: Vec<f64>,
    objective: f64,
    first_action: f64,
    kkt_residual: f64,
    max_violation: f64,
}

/// Solves the canonical CSTR MPC from `x0`.
#[pyfunction]
fn solve_mpc(x0: f64) -> PyResult<PyMpcSolution> {
    let s = mpc::solve_mpc(&MpcSpec::default(), x0).map_err(py_err)?;
    Ok(PyMpcSolution {
        controls: s.controls,
        states: s.states,
        objective: s.objective,
        first_action: s.first_action,
        kkt_residual: s.kkt_residual,
        max_violation: s.max_violation,
    })
}

/// `(variables, binary, constraints)` of the learning MILP for `data`.
#[pyfunction]
#[pyo3(signature = (data, depth=2, path=None))]
fn milp_counts(data: &PyDataset, depth: usize, path: Option<&str>) -> PyResult<(usize, usize, usize)> {
    let cfg = LearnConfig {
        depth,
        y_bounds: Some((-1000.0, 1000.0)),
        ..LearnConfig::default()
    };
    let art = milp::build_milp(&data.inner, &canonical_basis(), &cfg).map_err(py_err)?;
    if let Some(p) = path {
        milp::write_mps(&art, std::path::Path::new(p)).map_err(py_err)?;
    }
    let c = art.counts();
    Ok((c.n_vars, c.n_binary, c.n_rows))
}

#[pyclass(name = "SimTrace", module = "symtree", get_all)]
struct PySimTrace {
    times: Vec<f64>,
    states: Vec<f64>,
    controls: Vec<f64>,
    latencies: Vec<f64>,
    iae: f64,
}

/// Closed-loop run; `controller` is a `TreeModel`, a number (constant
/// flow) or `"mpc"`.
#[pyfunction]
#[pyo3(signature = (controller, x0=0.75, t_final=10.0, dt_sample=0.1))]
fn simulate(controller: &Bound<'_, PyAny>, x0: f64, t_final: f64, dt_sample: f64) -> PyResult<PySimTrace> {
    let spec = MpcSpec::default();
    let ctrl = if let Ok(m) = controller.cast::<PyTreeModel>() {
        Controller::Model(m.borrow().inner.clone())
    } else if let Ok(v) = controller.extract::<f64>() {
        Controller::Constant(v)
    } else if controller.extract::<String>().is_ok_and(|s| s == "mpc") {
        Controller::Mpc(spec)
    } else {
        return Err(PyValueError::new_err("controller must be a TreeModel, a number or \"mpc\""));
    };
    let t = sim::simulate(&spec.plant, &ctrl, x0, t_final, dt_sample).map_err(py_err)?;
    let iae = sim::iae(&t, spec.x_sp);
    Ok(PySimTrace {
        times: t.times,
        states: t.states,
        controls: t.controls,
        latencies: t.latencies,
        iae,
    })
}

#[pymodule]
fn symtree(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTreeModel>()?;
    m.add_class::<PyFitReport>()?;
    m.add_class::<PyMpcSolution>()?;
    m.add_class::<PySimTrace>()?;
    m.add_function(wrap_pyfunction!(fit_tree, m)?)?;
    m.add_function(wrap_pyfunction!(fit_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mpc, m)?)?;
    m.add_function(wrap_pyfunction!(milp_counts, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

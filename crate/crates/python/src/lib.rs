//! Python module `ridgemrf`: datasets, parameter matrices, fitting, cross-validation,
//! Gibbs sampling and the lattice design.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ridgemrf::experiments::{self, EdgeSet};
use ridgemrf::model::{MixedDataset, ParamMatrix, VariateFamily};
use ridgemrf::optimizer::{self, AlphaPolicy, FitConfig};
use ridgemrf::sampler::{self, ChainConfig, DEFAULT_BURN_IN, DEFAULT_THINNING};
use ridgemrf::selection::{self, DEFAULT_FOLDS, DEFAULT_GRID_MAX, DEFAULT_GRID_MIN, DEFAULT_GRID_POINTS};
use ridgemrf::{io, pseudolikelihood, Error};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_families(tags: &[String]) -> PyResult<Vec<VariateFamily>> {
    tags.iter()
        .map(|t| t.parse::<VariateFamily>().map_err(py_err))
        .collect()
}

fn tags(families: &[VariateFamily]) -> Vec<String> {
    families.iter().map(|f| f.tag().to_string()).collect()
}

fn edge_tuples(edges: &EdgeSet) -> Vec<(usize, usize, f64)> {
    edges.edges.iter().map(|e| (e.a, e.b, e.weight)).collect()
}

#[pyclass(name = "Dataset", module = "ridgemrf", frozen)]
struct PyDataset {
    inner: MixedDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (families, rows, names = None))]
    fn new(families: Vec<String>, rows: Vec<Vec<f64>>, names: Option<Vec<String>>) -> PyResult<Self> {
        let mut inner = MixedDataset::from_rows(parse_families(&families)?, &rows).map_err(py_err)?;
        if let Some(names) = names {
            inner = inner.with_names(names).map_err(py_err)?;
        }
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: io::load_dataset(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_dataset(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn families(&self) -> Vec<String> {
        tags(self.inner.families())
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|i| self.inner.row(i)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

#[pyclass(name = "ParamMatrix", module = "ridgemrf", frozen)]
struct PyParamMatrix {
    inner: ParamMatrix,
}

#[pymethods]
impl PyParamMatrix {
    /// Builds Theta from a dense symmetric table of rows.
    #[new]
    #[pyo3(signature = (families, rows, names = None))]
    fn new(families: Vec<String>, rows: Vec<Vec<f64>>, names: Option<Vec<String>>) -> PyResult<Self> {
        let fams = parse_families(&families)?;
        let p = fams.len();
        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err(format!("expected a {p} x {p} table")));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let dense = ridgemrf::nalgebra::DMatrix::from_row_slice(p, p, &flat);
        let mut inner = ParamMatrix::from_dense(fams, dense).map_err(py_err)?;
        if let Some(names) = names {
            inner = inner.with_names(names).map_err(py_err)?;
        }
        Ok(PyParamMatrix { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyParamMatrix {
            inner: io::theta_from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        io::theta_to_json(&self.inner).map_err(py_err)
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn families(&self) -> Vec<String> {
        tags(self.inner.families())
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    fn get(&self, a: usize, b: usize) -> PyResult<f64> {
        if a >= self.inner.p() || b >= self.inner.p() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(a, b))
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        let p = self.inner.p();
        (0..p).map(|a| (0..p).map(|b| self.inner.get(a, b)).collect()).collect()
    }

    /// `(satisfied, [violation descriptions])`.
    fn check_constraints(&self) -> (bool, Vec<String>) {
        let report = ridgemrf::check_constraints(&self.inner);
        let msgs = report
            .violations
            .iter()
            .map(|v| format!("{:?} at {:?}: {}", v.constraint, v.indices, v.magnitude))
            .collect();
        (report.satisfied, msgs)
    }

    fn top_k_edges(&self, k: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        Ok(edge_tuples(&experiments::top_k_edges(&self.inner, k).map_err(py_err)?))
    }

    fn frobenius_distance(&self, other: &PyParamMatrix) -> f64 {
        self.inner.frobenius_distance(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("ParamMatrix(p={})", self.inner.p())
    }
}

#[pyclass(name = "FitResult", module = "ridgemrf", frozen)]
struct PyFitResult {
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    error_trace: Vec<f64>,
    #[pyo3(get)]
    alpha_trace: Vec<f64>,
    theta: ParamMatrix,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn theta_hat(&self) -> PyParamMatrix {
        PyParamMatrix {
            inner: self.theta.clone(),
        }
    }
}

#[pyclass(name = "CvResult", module = "ridgemrf", frozen)]
struct PyCvResult {
    #[pyo3(get)]
    lambda_grid: Vec<f64>,
    #[pyo3(get)]
    mean_mspe: Vec<f64>,
    #[pyo3(get)]
    sd_mspe: Vec<f64>,
    #[pyo3(get)]
    lambda_opt: f64,
    #[pyo3(get)]
    folds: usize,
    #[pyo3(get)]
    seed: u64,
}

fn fit_config(
    lambda: f64,
    tau: f64,
    alpha: Option<f64>,
    alpha_policy: &str,
    max_iter: Option<usize>,
) -> PyResult<FitConfig> {
    Ok(FitConfig {
        lambda,
        tau,
        alpha0: alpha,
        alpha_policy: alpha_policy.parse::<AlphaPolicy>().map_err(py_err)?,
        max_iterations: max_iter,
        ..FitConfig::default()
    })
}

#[pyfunction]
#[pyo3(signature = (data, lam = 0.0, tau = 1e-10, alpha = None, alpha_policy = "fixed", max_iter = None))]
fn fit(
    py: Python<'_>,
    data: &PyDataset,
    lam: f64,
    tau: f64,
    alpha: Option<f64>,
    alpha_policy: &str,
    max_iter: Option<usize>,
) -> PyResult<PyFitResult> {
    let cfg = fit_config(lam, tau, alpha, alpha_policy, max_iter)?;
    let res = py.detach(|| optimizer::fit(&data.inner, &cfg)).map_err(py_err)?;
    Ok(PyFitResult {
        iterations: res.iterations,
        converged: res.converged,
        error_trace: res.error_trace,
        alpha_trace: res.alpha_trace,
        theta: res.theta_hat,
    })
}

#[pyfunction]
#[pyo3(signature = (
    data,
    k = DEFAULT_FOLDS,
    seed = 0,
    grid_min = DEFAULT_GRID_MIN,
    grid_max = DEFAULT_GRID_MAX,
    grid_points = DEFAULT_GRID_POINTS,
    tau = 1e-10,
))]
fn cross_validate(
    py: Python<'_>,
    data: &PyDataset,
    k: usize,
    seed: u64,
    grid_min: f64,
    grid_max: f64,
    grid_points: usize,
    tau: f64,
) -> PyResult<PyCvResult> {
    let grid = selection::log_grid(grid_min, grid_max, grid_points).map_err(py_err)?;
    let cfg = FitConfig {
        tau,
        ..FitConfig::default()
    };
    let cv = py
        .detach(|| selection::cross_validate(&data.inner, &grid, k, seed, &cfg))
        .map_err(py_err)?;
    Ok(PyCvResult {
        lambda_grid: cv.lambda_grid,
        mean_mspe: cv.mean_mspe,
        sd_mspe: cv.sd_mspe,
        lambda_opt: cv.lambda_opt,
        folds: cv.folds,
        seed: cv.seed,
    })
}

#[pyfunction]
#[pyo3(signature = (theta, n, seed = 0, burn_in = DEFAULT_BURN_IN, thin = DEFAULT_THINNING))]
fn gibbs_chain(
    py: Python<'_>,
    theta: &PyParamMatrix,
    n: usize,
    seed: u64,
    burn_in: usize,
    thin: usize,
) -> PyResult<PyDataset> {
    let cfg = ChainConfig {
        burn_in,
        thinning: thin,
        ..ChainConfig::new(n, seed)
    };
    let inner = py
        .detach(|| sampler::gibbs_chain(&theta.inner, &cfg))
        .map_err(py_err)?;
    Ok(PyDataset { inner })
}

#[pyfunction]
fn pseudo_loglik(theta: &PyParamMatrix, data: &PyDataset) -> PyResult<f64> {
    pseudolikelihood::pseudo_loglik(&theta.inner, &data.inner).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (data, lam = 0.0))]
fn nodewise_baseline(data: &PyDataset, lam: f64) -> PyResult<PyParamMatrix> {
    Ok(PyParamMatrix {
        inner: experiments::nodewise_baseline(&data.inner, lam).map_err(py_err)?,
    })
}

/// The 16-variate mixed lattice and its 36 true edges.
#[pyfunction]
fn lattice_theta() -> (PyParamMatrix, Vec<(usize, usize, f64)>) {
    let (theta, edges) = experiments::lattice_theta();
    (PyParamMatrix { inner: theta }, edge_tuples(&edges))
}

#[pymodule]
#[pyo3(name = "ridgemrf")]
fn ridgemrf_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyParamMatrix>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyCvResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs_chain, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(nodewise_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_theta, m)?)?;
    Ok(())
}

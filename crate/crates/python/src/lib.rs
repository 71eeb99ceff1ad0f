//! Python bindings: meshes, the problem catalog, adaptive runs and the
//! marking/rate helpers, mirroring the CLI's capabilities in-process.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use afem2d::driver::{self, AfemConfig};
use afem2d::estimator::{self, Indicators};
use afem2d::fem::FeSpace;
use afem2d::marking;
use afem2d::mesh::{self, Triangulation};
use afem2d::problems;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A conforming triangulation under newest-vertex bisection.
#[pyclass(name = "Mesh")]
struct PyMesh {
    inner: Triangulation,
}

#[pymethods]
impl PyMesh {
    /// Parses the plain-text mesh format (header `nv ne nb`).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: Triangulation::parse(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn unit_square() -> Self {
        Self { inner: mesh::two_triangle_square() }
    }

    #[staticmethod]
    fn lshape() -> Self {
        Self { inner: mesh::lshape_mesh() }
    }

    #[staticmethod]
    fn for_problem(id: &str) -> PyResult<Self> {
        let p = problems::catalog(id).map_err(value_err)?;
        Ok(Self { inner: p.initial_mesh() })
    }

    #[getter]
    fn num_elements(&self) -> usize {
        self.inner.num_active()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    fn vertices(&self) -> Vec<(f64, f64)> {
        (0..self.inner.num_vertices())
            .map(|i| {
                let v = self.inner.vertex(i);
                (v.x, v.y)
            })
            .collect()
    }

    fn elements(&self) -> Vec<(usize, usize, usize)> {
        self.inner
            .active_elements()
            .map(|e| {
                let v = self.inner.element(e).v;
                (v[0], v[1], v[2])
            })
            .collect()
    }

    fn element_ids(&self) -> Vec<usize> {
        self.inner.active_elements().collect()
    }

    /// Bisects the given elements (plus a conforming completion) `b` times.
    #[pyo3(signature = (marked, b = 1))]
    fn refine(&self, marked: Vec<usize>, b: u32) -> PyResult<Self> {
        let refined = self.inner.refine(&marked, b).map_err(value_err)?;
        Ok(Self { inner: refined })
    }

    fn uniform_refine(&self) -> Self {
        Self { inner: self.inner.uniform_refine() }
    }

    fn min_angle(&self) -> f64 {
        self.inner.quality().min_angle
    }

    fn check_conforming(&self) -> PyResult<()> {
        self.inner.check_conforming().map_err(runtime_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh({} vertices, {} elements)",
            self.inner.num_vertices(),
            self.inner.num_active()
        )
    }
}

/// The result of an adaptive run: per-iteration records plus diagnostics.
#[pyclass(name = "Trace")]
struct PyTrace {
    #[pyo3(get)]
    records: Vec<Py<PyDict>>,
    #[pyo3(get)]
    eta_slope: Option<f64>,
    #[pyo3(get)]
    error_slope: Option<f64>,
    #[pyo3(get)]
    lambda_slope: Option<f64>,
    #[pyo3(get)]
    gamma_used: f64,
    #[pyo3(get)]
    contraction: Vec<f64>,
    #[pyo3(get)]
    complexity: Vec<f64>,
    #[pyo3(get)]
    csv: String,
}

/// (id, description) pairs of the problem catalog, in stable order.
#[pyfunction]
fn list_problems() -> Vec<(String, String)> {
    problems::catalog_descriptions()
}

/// Runs the adaptive loop SOLVE→ESTIMATE→MARK→REFINE.
#[pyfunction]
#[pyo3(signature = (problem, degree = 1, theta = 0.5, max_dofs = 100_000, tol = None,
                    bisections = 1, uniform = false, out = None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    problem: &str,
    degree: usize,
    theta: f64,
    max_dofs: usize,
    tol: Option<f64>,
    bisections: u32,
    uniform: bool,
    out: Option<PathBuf>,
) -> PyResult<PyTrace> {
    let cfg = AfemConfig {
        degree,
        theta,
        max_dofs,
        tol,
        bisections,
        uniform,
        out,
        ..AfemConfig::new(problem)
    };
    let trace = driver::run(&cfg).map_err(runtime_err)?;
    let mut records = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let d = PyDict::new(py);
        d.set_item("k", r.k)?;
        d.set_item("elements", r.elements)?;
        d.set_item("dofs", r.dofs)?;
        d.set_item("eta", r.eta)?;
        d.set_item("osc", r.osc)?;
        d.set_item("energy_error", r.energy_error)?;
        d.set_item("lambda", r.lambda)?;
        d.set_item("lambda_error", r.lambda_error)?;
        d.set_item("marked", r.marked)?;
        d.set_item("solver_iters", r.solver_iters)?;
        d.set_item("wall_ms", r.wall_ms)?;
        records.push(d.unbind());
    }
    let csv = trace.to_csv();
    Ok(PyTrace {
        records,
        eta_slope: trace.eta_slope,
        error_slope: trace.error_slope,
        lambda_slope: trace.lambda_slope,
        gamma_used: trace.gamma_used,
        contraction: trace.contraction,
        complexity: trace.complexity,
        csv,
    })
}

/// Least-squares slope of log y against log x.
#[pyfunction]
fn fit_rate(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    driver::fit_rate(&xs, &ys).map_err(value_err)
}

/// Minimal Dörfler set for squared indicators `eta2` and parameter θ.
#[pyfunction]
fn dorfler_mark(eta2: Vec<f64>, theta: f64) -> PyResult<Vec<usize>> {
    let ind = Indicators::from_parts(
        eta2.iter().copied().enumerate().collect(),
        eta2.iter().map(|_| 0.0).enumerate().collect(),
    );
    Ok(marking::dorfler_mark(&ind, theta).map_err(value_err)?.marked)
}

/// Solves one catalog problem on its initial mesh refined `refinements`
/// times uniformly; returns (dofs, eta, energy_error or None).
#[pyfunction]
#[pyo3(signature = (problem, degree = 1, refinements = 0))]
fn solve_once(
    problem: &str,
    degree: usize,
    refinements: usize,
) -> PyResult<(usize, f64, Option<f64>)> {
    use afem2d::problems::ProblemVariant;
    use afem2d::solver::{
        solve_eigen_problem, solve_linear_problem, solve_nonlinear_problem, EigenConfig,
        NewtonConfig, SolverConfig,
    };

    let p = problems::catalog(problem).map_err(value_err)?;
    let mut m = p.initial_mesh();
    for _ in 0..refinements {
        m = m.uniform_refine();
    }
    let space = FeSpace::build(Arc::new(m), degree).map_err(value_err)?;
    let (u, lambda) = match p.variant {
        ProblemVariant::BoundaryValue | ProblemVariant::Nonsymmetric => {
            let (u, _) = solve_linear_problem(&p, &space, None, &SolverConfig::default())
                .map_err(runtime_err)?;
            (u, None)
        }
        ProblemVariant::Nonlinear => {
            let (u, _) = solve_nonlinear_problem(&p, &space, None, &NewtonConfig::default())
                .map_err(runtime_err)?;
            (u, None)
        }
        ProblemVariant::Eigenvalue => {
            let (l, u, _) = solve_eigen_problem(&p, &space, None, &EigenConfig::default())
                .map_err(runtime_err)?;
            (u, Some(l))
        }
    };
    let ind = estimator::indicators(&p, &u, lambda).map_err(runtime_err)?;
    let (eta, _) = ind.global(None);
    let err = p.exact.as_ref().and_then(|ex| ex.grad.as_ref()).map(|g| {
        let g = Arc::clone(g);
        afem2d::fem::energy_error(move |x, y| g(x, y), &u, &p.coefficients())
    });
    Ok((space.ndofs, eta, err))
}

#[pymodule]
fn afem2d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(dorfler_mark, m)?)?;
    m.add_function(wrap_pyfunction!(solve_once, m)?)?;
    Ok(())
}

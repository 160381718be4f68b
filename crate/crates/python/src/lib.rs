use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use permshield::designs::paired_design as core_paired_design;
use permshield::error::Error;
use permshield::linalg::{Matrix, RankTolerance};
use permshield::oracle;
use permshield::palm;
use permshield::perm::RowSet;
use permshield::rowselect::{self, SelectionConfig};
use permshield::verify::{self, Suite};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows_of(n: usize, one_based: Option<Vec<usize>>) -> PyResult<RowSet> {
    match one_based {
        Some(idx) => RowSet::from_one_based(n, &idx).map_err(to_py),
        None => Ok(RowSet::empty(n)),
    }
}

#[pyclass(get_all, frozen)]
pub struct TestResult {
    pub p_value: f64,
    pub b: usize,
    pub n_greater: usize,
    pub n_ties: usize,
    pub rows: Vec<usize>,
    pub collinear_draws: usize,
    pub seed: u64,
}

#[pymethods]
impl TestResult {
    fn __repr__(&self) -> String {
        format!(
            "TestResult(p_value={}, b={}, rows={:?}, collinear_draws={})",
            self.p_value, self.b, self.rows, self.collinear_draws
        )
    }
}

#[pyclass(get_all, frozen)]
pub struct Selection {
    pub shield_rows: Vec<usize>,
    pub shield_safety: f64,
    pub q_values: Vec<f64>,
    pub t_star: usize,
    pub rows: Vec<usize>,
}

#[pymethods]
impl Selection {
    fn __repr__(&self) -> String {
        format!("Selection(rows={:?}, t_star={})", self.rows, self.t_star)
    }
}

/// Returns `(x, z)` for the paired design, `z` as a list of rows.
#[pyfunction]
fn paired_design(n: usize, p: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = core_paired_design(n, p).map_err(to_py)?;
    Ok((d.x, d.z.to_rows()))
}

/// Permutation test of `beta = 0`; `rows` are 1-based indices held fixed.
#[pyfunction]
#[pyo3(signature = (x, z, y, rows=None, b=2000, seed=1))]
fn run_test(
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    rows: Option<Vec<usize>>,
    b: usize,
    seed: u64,
) -> PyResult<TestResult> {
    let z = matrix(z)?;
    let r = rows_of(x.len(), rows)?;
    let res = palm::run_test(&x, &z, &y, &r, b, seed).map_err(to_py)?;
    Ok(TestResult {
        p_value: res.p_value,
        b: res.b,
        n_greater: res.n_greater,
        n_ties: res.n_ties,
        rows: res.row_set.to_one_based(),
        collinear_draws: res.collinear_draws,
        seed: res.seed,
    })
}

#[pyfunction]
#[pyo3(signature = (x, z, alpha=0.05, budget=20, m=2000, seed=1))]
fn select_rows(
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    alpha: f64,
    budget: usize,
    m: usize,
    seed: u64,
) -> PyResult<Selection> {
    let z = matrix(z)?;
    let cfg = SelectionConfig::new(alpha, budget, m);
    let t = rowselect::select_rows_seeded(&x, &z, &cfg, seed, RankTolerance::default())
        .map_err(to_py)?;
    Ok(Selection {
        shield_rows: t.shield_rows.iter().map(|s| s.row + 1).collect(),
        shield_safety: t.shield_safety,
        q_values: t.q_values,
        t_star: t.t_star,
        rows: t.final_row_set.to_one_based(),
    })
}

/// `(mu, safety, quantile, group_size)` by full enumeration.
#[pyfunction]
#[pyo3(signature = (x, z, rows=None, alpha=0.05))]
fn exact_estimates(
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    rows: Option<Vec<usize>>,
    alpha: f64,
) -> PyResult<(f64, f64, f64, usize)> {
    let z = matrix(z)?;
    let r = rows_of(x.len(), rows)?;
    let e = oracle::exact_estimates(&x, &z, &r, alpha).map_err(to_py)?;
    Ok((e.mu_exact, e.safety_exact, e.d_quantile_exact, e.group_size))
}

/// `[(name, passed, cases, violations)]` for `group`, `oracle` or `identity`.
#[pyfunction]
#[pyo3(signature = (suite, seed=1))]
fn verify_suite(suite: &str, seed: u64) -> PyResult<Vec<(String, bool, usize, usize)>> {
    let suite = match suite {
        "group" => Suite::Group,
        "oracle" => Suite::Oracle,
        "identity" => Suite::Identity,
        other => return Err(PyValueError::new_err(format!("unknown suite {other:?}"))),
    };
    let reports = verify::run_suite(suite, seed).map_err(to_py)?;
    Ok(reports
        .into_iter()
        .map(|r| {
            let passed = r.passed();
            (r.name, passed, r.cases, r.violations)
        })
        .collect())
}

#[pymodule]
#[pyo3(name = "permshield")]
fn permshield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TestResult>()?;
    m.add_class::<Selection>()?;
    m.add_function(wrap_pyfunction!(paired_design, m)?)?;
    m.add_function(wrap_pyfunction!(run_test, m)?)?;
    m.add_function(wrap_pyfunction!(select_rows, m)?)?;
    m.add_function(wrap_pyfunction!(exact_estimates, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

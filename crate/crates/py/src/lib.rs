//! Python bindings: a thin veneer over the core crate exposing data
//! construction, the closed-form error breakdowns, the two estimation
//! routes, and the model-space searches.

// the ? operator on pyo3 setters trips this lint throughout the glue
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use nalgebra::{DMatrix, DVector};
use twoset_core::dataio::{
    build_geyser, load_csv, partition_diabetes, partition_generic, standardize, StandardizedData,
    TwoSetData,
};
use twoset_core::gibbs::{gibbs_run, pe_posterior};
use twoset_core::hyperg::hyperg_fit;
use twoset_core::linmodel::{pe_grcm, Direction, ErrorBreakdown, ModelPair, VarianceEstimates};
use twoset_core::montecarlo::{empirical_pe, SimConfig};
use twoset_core::search::{
    compat_table, mlsel, similarity_search, CompareOptions, Objective, SearchOptions,
};

fn core_err(e: twoset_core::Error) -> PyErr {
    match &e {
        twoset_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyObject {
    match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::new_bound(py, items.iter().map(|i| json_to_py(py, i)));
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, val) in map {
                let _ = dict.set_item(k, json_to_py(py, val));
            }
            dict.into_py(py)
        }
    }
}

fn breakdown_dict(py: Python<'_>, b: &ErrorBreakdown) -> PyObject {
    let dict = PyDict::new_bound(py);
    let _ = dict.set_item("direction", b.direction.to_string());
    let _ = dict.set_item("term1", b.term1);
    let _ = dict.set_item("term2", b.term2);
    let _ = dict.set_item("term3", b.term3);
    let _ = dict.set_item("total", b.total);
    dict.into_py(py)
}

fn parse_direction(s: &str) -> PyResult<Direction> {
    match s {
        "S0|S1" | "zero_from_one" => Ok(Direction::ZeroFromOne),
        "S1|S0" | "one_from_zero" => Ok(Direction::OneFromZero),
        other => Err(PyValueError::new_err(format!(
            "direction must be 'S0|S1' or 'S1|S0', got {other:?}"
        ))),
    }
}

/// Two labelled datasets with standardized predictors.
#[pyclass(name = "TwoSet")]
struct PyTwoSet {
    data: StandardizedData,
}

impl PyTwoSet {
    fn resolve(&self, names: Vec<String>) -> PyResult<Vec<usize>> {
        names
            .iter()
            .map(|name| {
                self.data
                    .data
                    .names
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(name))
                    .ok_or_else(|| PyValueError::new_err(format!("unknown predictor {name:?}")))
            })
            .collect()
    }

    fn pair(
        &self,
        common: Vec<String>,
        specific0: Vec<String>,
        specific1: Vec<String>,
    ) -> PyResult<ModelPair> {
        ModelPair::new(
            self.resolve(common)?,
            self.resolve(specific0)?,
            self.resolve(specific1)?,
        )
        .map_err(core_err)
    }
}

#[pymethods]
impl PyTwoSet {
    /// Observation counts `(n0, n1)`.
    fn counts(&self) -> (usize, usize) {
        self.data.counts()
    }

    /// Predictor names.
    #[getter]
    fn names(&self) -> Vec<String> {
        self.data.data.names.clone()
    }

    /// Response vector of one dataset.
    fn response(&self, dataset: u8) -> Vec<f64> {
        self.data.response(dataset).iter().copied().collect()
    }

    /// Closed-form posterior summaries for one dataset and predictor set.
    fn fit(&self, py: Python<'_>, dataset: u8, predictors: Vec<String>) -> PyResult<PyObject> {
        let cols = self.resolve(predictors)?;
        let x = self.data.design(dataset, &cols);
        let y = self.data.response(dataset);
        let fit = hyperg_fit(&x, &y).map_err(core_err)?;
        let dict = PyDict::new_bound(py);
        dict.set_item("beta_mean", fit.beta_mean.iter().copied().collect::<Vec<f64>>())?;
        dict.set_item("intercept_mean", fit.intercept_mean)?;
        dict.set_item("sigma_sq_mean", fit.sigma_sq_mean)?;
        dict.set_item("shrinkage_mean", fit.shrinkage_mean)?;
        dict.set_item("log_marginal", fit.log_marginal)?;
        dict.set_item("r_squared", fit.r_squared)?;
        Ok(dict.into_py(py))
    }

    /// Closed-form expected prediction error for a model pair at given
    /// variances.
    #[pyo3(signature = (common, sigma0_sq, sigma1_sq, sigma_eta_sq, direction,
                        specific0 = vec![], specific1 = vec![]))]
    #[allow(clippy::too_many_arguments)]
    fn prediction_error(
        &self,
        py: Python<'_>,
        common: Vec<String>,
        sigma0_sq: f64,
        sigma1_sq: f64,
        sigma_eta_sq: f64,
        direction: &str,
        specific0: Vec<String>,
        specific1: Vec<String>,
    ) -> PyResult<PyObject> {
        let pair = self.pair(common, specific0, specific1)?;
        let v = VarianceEstimates::new(sigma0_sq, sigma1_sq, sigma_eta_sq).map_err(core_err)?;
        let b = pe_grcm(&v, &pair, &self.data, parse_direction(direction)?).map_err(core_err)?;
        Ok(breakdown_dict(py, &b))
    }

    /// Cross-prediction error table for predictor sets (both directions).
    fn compat_table(&self, py: Python<'_>, sets: Vec<Vec<String>>) -> PyResult<PyObject> {
        let sets: Vec<Vec<usize>> = sets
            .into_iter()
            .map(|s| self.resolve(s))
            .collect::<PyResult<_>>()?;
        let rows = compat_table(&self.data, &sets).map_err(core_err)?;
        let out = PyList::empty_bound(py);
        for row in rows {
            let dict = PyDict::new_bound(py);
            dict.set_item("predictors", row.names.clone())?;
            dict.set_item("direction", row.direction.to_string())?;
            dict.set_item("breakdown", breakdown_dict(py, &row.breakdown))?;
            out.append(dict)?;
        }
        Ok(out.into_py(py))
    }

    /// Ranked common-predictor sets by model-averaged prediction error.
    #[pyo3(signature = (min_common = 1, max_common = None, objective = "sum", top = None))]
    fn similarity_search(
        &self,
        py: Python<'_>,
        min_common: usize,
        max_common: Option<usize>,
        objective: &str,
        top: Option<usize>,
    ) -> PyResult<PyObject> {
        let objective = match objective {
            "sum" => Objective::Sum,
            "maxmin" => Objective::MaxMin,
            other => {
                return Err(PyValueError::new_err(format!(
                    "objective must be 'sum' or 'maxmin', got {other:?}"
                )))
            }
        };
        let results = similarity_search(
            &self.data,
            &SearchOptions {
                min_common,
                max_common,
                objective,
            },
        )
        .map_err(core_err)?;
        let shown = top.unwrap_or(results.len()).min(results.len());
        let out = PyList::empty_bound(py);
        for r in &results[..shown] {
            let dict = PyDict::new_bound(py);
            dict.set_item("rank", r.rank)?;
            dict.set_item("common", r.names.clone())?;
            dict.set_item("pe_total", r.pe_total)?;
            dict.set_item("objective_value", r.objective_value)?;
            dict.set_item("forward", breakdown_dict(py, &r.pe_forward))?;
            dict.set_item("backward", breakdown_dict(py, &r.pe_backward))?;
            out.append(dict)?;
        }
        Ok(out.into_py(py))
    }

    /// Exhaustive subset ranking by marginal likelihood, best first.
    #[pyo3(signature = (dataset, top = None))]
    fn mlsel(&self, py: Python<'_>, dataset: u8, top: Option<usize>) -> PyResult<PyObject> {
        let ranking = mlsel(&self.data, dataset).map_err(core_err)?;
        let shown = top.unwrap_or(ranking.len()).min(ranking.len());
        let out = PyList::empty_bound(py);
        for e in &ranking[..shown] {
            let dict = PyDict::new_bound(py);
            dict.set_item("predictors", e.names.clone())?;
            dict.set_item("log_marginal", e.log_marginal)?;
            out.append(dict)?;
        }
        Ok(out.into_py(py))
    }

    /// Posterior sampling for one model pair; returns summaries plus the
    /// retained variance draws.
    #[pyo3(signature = (common, specific0 = vec![], specific1 = vec![],
                        iters = 20_000, burnin = 5_000, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn gibbs(
        &self,
        py: Python<'_>,
        common: Vec<String>,
        specific0: Vec<String>,
        specific1: Vec<String>,
        iters: usize,
        burnin: usize,
        seed: u64,
    ) -> PyResult<PyObject> {
        let pair = self.pair(common, specific0, specific1)?;
        let draws = gibbs_run(&pair, &self.data, iters, burnin, seed).map_err(core_err)?;
        let pe = pe_posterior(&draws, &pair, &self.data).map_err(core_err)?;
        let dict = PyDict::new_bound(py);
        dict.set_item(
            "sigma0_sq",
            draws.states.iter().map(|s| s.sigma_sq[0]).collect::<Vec<f64>>(),
        )?;
        dict.set_item(
            "sigma1_sq",
            draws.states.iter().map(|s| s.sigma_sq[1]).collect::<Vec<f64>>(),
        )?;
        dict.set_item(
            "sigma_eta_sq",
            draws.states.iter().map(|s| s.sigma_eta_sq).collect::<Vec<f64>>(),
        )?;
        dict.set_item(
            "acceptance_rate",
            vec![draws.acceptance_rate(0), draws.acceptance_rate(1)],
        )?;
        dict.set_item("warnings", draws.warnings.clone())?;
        dict.set_item("pe_samples", pe.samples)?;
        dict.set_item("pe_mean", pe.mean)?;
        dict.set_item("pe_sd", pe.sd)?;
        Ok(dict.into_py(py))
    }

    /// Compare the closed-form and MCMC routes on the restricted model
    /// family (see the command-line `compare`).
    #[pyo3(signature = (min_common = 7, iters = 20_000, burnin = 5_000, seed = 0, subset = None))]
    fn compare_approaches(
        &self,
        py: Python<'_>,
        min_common: usize,
        iters: usize,
        burnin: usize,
        seed: u64,
        subset: Option<usize>,
    ) -> PyResult<PyObject> {
        let records = twoset_core::search::compare_approaches(
            &self.data,
            &CompareOptions {
                min_common,
                iters,
                burnin,
                seed,
                subset,
            },
        )
        .map_err(core_err)?;
        let value = serde_json::to_value(&records)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(json_to_py(py, &value))
    }
}

fn build_two_set(data: TwoSetData) -> PyResult<PyTwoSet> {
    let data = standardize(&data).map_err(core_err)?;
    Ok(PyTwoSet { data })
}

/// Load the lagged geyser construction from a CSV file.
#[pyfunction]
fn load_geyser(path: &str) -> PyResult<PyTwoSet> {
    let table = load_csv(path, true).map_err(core_err)?;
    let ing = build_geyser(&table).map_err(core_err)?;
    build_two_set(ing.data)
}

/// Load the precision-partitioned diabetes data from a CSV file.
#[pyfunction]
fn load_diabetes(path: &str) -> PyResult<PyTwoSet> {
    let table = load_csv(path, true).map_err(core_err)?;
    let ing = partition_diabetes(&table).map_err(core_err)?;
    build_two_set(ing.data)
}

/// Load a generic CSV with a 0/1 label column.
#[pyfunction]
#[pyo3(signature = (path, label_column, response_column = None))]
fn load_labeled(path: &str, label_column: &str, response_column: Option<&str>) -> PyResult<PyTwoSet> {
    let table = load_csv(path, true).map_err(core_err)?;
    let ing = partition_generic(&table, label_column, response_column).map_err(core_err)?;
    build_two_set(ing.data)
}

/// Build a dataset from in-memory arrays.
#[pyfunction]
fn from_arrays(
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    labels: Vec<u8>,
    names: Vec<String>,
) -> PyResult<PyTwoSet> {
    let n = y.len();
    let p = names.len();
    if x.len() != n || x.iter().any(|row| row.len() != p) {
        return Err(PyValueError::new_err(
            "x must be n rows of len(names) values",
        ));
    }
    let data = TwoSetData::new(
        DVector::from_vec(y),
        DMatrix::from_fn(n, p, |i, j| x[i][j]),
        names,
        labels,
    )
    .map_err(core_err)?;
    build_two_set(data)
}

/// Brute-force check of the closed-form error: returns the Monte Carlo mean,
/// standard error, and both closed-form totals for a JSON simulation config.
#[pyfunction]
fn simulate_check(py: Python<'_>, config_json: &str) -> PyResult<PyObject> {
    let cfg: SimConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let designs = twoset_core::montecarlo::SimDesigns::for_config(&cfg).map_err(core_err)?;
    let std = twoset_core::montecarlo::designs_as_standardized(&designs);
    let pair = twoset_core::montecarlo::design_model_pair(&designs, &cfg);
    let v = VarianceEstimates::new(cfg.sigma0_sq, cfg.sigma1_sq, cfg.sigma_eta_sq)
        .map_err(core_err)?;
    let out = PyDict::new_bound(py);
    for direction in Direction::BOTH {
        let mc = empirical_pe(&cfg, direction).map_err(core_err)?;
        let closed = pe_grcm(&v, &pair, &std, direction).map_err(core_err)?;
        let entry = PyDict::new_bound(py);
        entry.set_item("mc_mean", mc.mean)?;
        entry.set_item("mc_se", mc.mc_standard_error)?;
        entry.set_item("closed_form", closed.total)?;
        entry.set_item(
            "z",
            (mc.mean - closed.total).abs() / mc.mc_standard_error,
        )?;
        out.set_item(direction.to_string(), entry)?;
    }
    Ok(out.into_py(py))
}

#[pymodule]
fn twoset(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTwoSet>()?;
    m.add_function(wrap_pyfunction!(load_geyser, m)?)?;
    m.add_function(wrap_pyfunction!(load_diabetes, m)?)?;
    m.add_function(wrap_pyfunction!(load_labeled, m)?)?;
    m.add_function(wrap_pyfunction!(from_arrays, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_check, m)?)?;
    Ok(())
}

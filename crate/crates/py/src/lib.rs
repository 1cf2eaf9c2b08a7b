//! Python bindings: configs, runs and records, the knowledge model, and a
//! handful of the numeric building blocks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use bilevel_core::controller::{update_temperature as core_update, TemperatureState};
use bilevel_core::domain::{KnowledgeTriple, MetricValue, Solution};
use bilevel_core::editor::{solve_edit as core_solve, KeyValuePair, Matrix};
use bilevel_core::orchestrator as orch;
use bilevel_core::simulators::{brute_force_tsp, simulate, TaskInstance, TspInstance};
use bilevel_core::{expr, Error};

create_exception!(bilevel, BilevelError, PyException);

fn err(e: Error) -> PyErr {
    BilevelError::new_err(e.to_string())
}

fn metric(v: Option<f64>) -> MetricValue {
    v.map_or(MetricValue::NotSolved, MetricValue::Value)
}

/// Canonical fully parenthesised form of a law expression.
#[pyfunction]
fn parse_expr(text: &str) -> PyResult<String> {
    expr::parse(text)
        .map(|e| expr::pretty_print(&e))
        .map_err(|e| err(e.into()))
}

#[pyfunction]
fn evaluate_expr(text: &str, binding: BTreeMap<String, f64>) -> PyResult<f64> {
    let e = expr::parse(text).map_err(|e| err(e.into()))?;
    expr::evaluate(&e, &binding).map_err(|e| err(e.into()))
}

/// Next temperature after observing `objective`.
#[pyfunction]
#[pyo3(signature = (temperature, prev_objective, objective))]
fn update_temperature(temperature: f64, prev_objective: Option<f64>, objective: f64) -> PyResult<f64> {
    core_update(
        TemperatureState {
            temperature,
            prev_objective,
        },
        objective,
    )
    .map(|s| s.temperature)
    .map_err(err)
}

#[pyfunction]
fn tour_length(nodes: Vec<[f64; 2]>, tour: Vec<usize>) -> PyResult<f64> {
    let task = TaskInstance::Tsp(TspInstance::new(nodes).map_err(err)?);
    simulate(&task, &Solution::Tour(tour)).map(|f| f.objective).map_err(err)
}

/// Exact optimum by enumeration; small instances only.
#[pyfunction]
fn optimal_tour(nodes: Vec<[f64; 2]>) -> PyResult<(Vec<usize>, f64)> {
    brute_force_tsp(&TspInstance::new(nodes).map_err(err)?).map_err(err)
}

fn pairs(raw: Vec<(Vec<f64>, Vec<f64>)>) -> PyResult<Vec<KeyValuePair>> {
    raw.into_iter()
        .map(|(k, v)| KeyValuePair::new(k, v).map_err(err))
        .collect()
}

/// Ridge least-squares edit of `w` (rows = output dim) from preserved and new
/// (key, value) pairs.
#[pyfunction]
#[pyo3(signature = (w, preserved, new, lam=None))]
fn solve_edit(
    w: Vec<Vec<f64>>,
    preserved: Vec<(Vec<f64>, Vec<f64>)>,
    new: Vec<(Vec<f64>, Vec<f64>)>,
    lam: Option<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    let m = Matrix::from_vec(rows, cols, w.into_iter().flatten().collect()).map_err(err)?;
    let w1 = core_solve(&m, &pairs(preserved)?, &pairs(new)?, lam).map_err(err)?;
    Ok((0..rows).map(|r| (0..cols).map(|c| w1.get(r, c)).collect()).collect())
}

/// (mean, standard error, n, not available); `None` entries are unsolved runs.
#[pyfunction]
fn summarize(metrics: Vec<Option<f64>>) -> PyResult<(Option<f64>, Option<f64>, usize, usize)> {
    let ms: Vec<MetricValue> = metrics.into_iter().map(metric).collect();
    let s = orch::summarize(&ms).map_err(err)?;
    Ok((s.mean, s.std_error, s.n, s.not_available))
}

#[pyfunction]
#[pyo3(signature = (loss, loss_ref))]
fn score_map(loss: Option<f64>, loss_ref: f64) -> PyResult<f64> {
    orch::score_map(metric(loss), loss_ref).map_err(err)
}

#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: orch::RunConfig,
    base_dir: PathBuf,
}

#[pymethods]
impl PyRunConfig {
    /// Parses TOML text; relative task paths resolve against `base_dir`.
    #[new]
    #[pyo3(signature = (toml, base_dir="."))]
    fn new(toml: &str, base_dir: &str) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: orch::RunConfig::from_toml(toml).map_err(err)?,
            base_dir: base_dir.into(),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let p = Path::new(path);
        Ok(PyRunConfig {
            inner: orch::RunConfig::load(p).map_err(err)?,
            base_dir: p.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn max_iterations(&self) -> usize {
        self.inner.max_iterations
    }
    #[setter]
    fn set_max_iterations(&mut self, v: usize) {
        self.inner.max_iterations = v;
    }
    #[getter]
    fn patience(&self) -> usize {
        self.inner.patience
    }
    #[setter]
    fn set_patience(&mut self, v: usize) {
        self.inner.patience = v;
    }
    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }
    #[setter]
    fn set_seeds(&mut self, v: Vec<u64>) {
        self.inner.seeds = v;
    }
    #[getter]
    fn edit_enabled(&self) -> bool {
        self.inner.edit_enabled
    }
    #[setter]
    fn set_edit_enabled(&mut self, v: bool) {
        self.inner.edit_enabled = v;
    }
    #[getter]
    fn dynamic_temperature(&self) -> bool {
        self.inner.dynamic_temperature
    }
    #[setter]
    fn set_dynamic_temperature(&mut self, v: bool) {
        self.inner.dynamic_temperature = v;
    }
    #[getter]
    fn initial_temperature(&self) -> f64 {
        self.inner.initial_temperature
    }
    #[setter]
    fn set_initial_temperature(&mut self, v: f64) {
        self.inner.initial_temperature = v;
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(task={}, seeds={:?})", self.inner.task.kind, self.inner.seeds)
    }
}

#[pyclass(name = "RunRecord", frozen, skip_from_py_object)]
struct PyRunRecord {
    inner: orch::RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }
    #[getter]
    fn arm(&self) -> &'static str {
        orch::arm_name(&self.inner)
    }
    #[getter]
    fn final_objective(&self) -> f64 {
        self.inner.final_objective
    }
    /// Task metric; `None` when the run never reached the optimum and the
    /// metric needs it.
    #[getter]
    fn metric(&self) -> Option<f64> {
        self.inner.metric.value()
    }
    #[getter]
    fn solved(&self) -> bool {
        self.inner.solved
    }
    #[getter]
    fn steps(&self) -> Option<usize> {
        self.inner.steps
    }
    #[getter]
    fn stop(&self) -> String {
        format!("{:?}", self.inner.stop).to_lowercase()
    }
    #[getter]
    fn best_curve(&self) -> Vec<f64> {
        self.inner.best_curve()
    }
    #[getter]
    fn temperatures(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.temperature).collect()
    }
    #[getter]
    fn triples_edited(&self) -> Vec<usize> {
        self.inner.rows.iter().map(|r| r.triples_edited).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| err(e.into()))
    }

    fn __repr__(&self) -> String {
        format!(
            "RunRecord(seed={}, arm={}, final_objective={}, solved={})",
            self.inner.seed,
            orch::arm_name(&self.inner),
            self.inner.final_objective,
            self.inner.solved
        )
    }
}

fn wrap(records: Vec<orch::RunRecord>) -> Vec<PyRunRecord> {
    records.into_iter().map(|inner| PyRunRecord { inner }).collect()
}

/// One seed; defaults to the first configured seed.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn run(py: Python<'_>, config: PyRunConfig, seed: Option<u64>) -> PyResult<PyRunRecord> {
    let seed = match seed.or(config.inner.seeds.first().copied()) {
        Some(s) => s,
        None => return Err(err(Error::EmptyInput("seeds"))),
    };
    let inner = py
        .detach(|| orch::run_seed(&config.inner, seed, &config.base_dir))
        .map_err(err)?;
    Ok(PyRunRecord { inner })
}

#[pyfunction]
fn sweep(py: Python<'_>, config: PyRunConfig) -> PyResult<Vec<PyRunRecord>> {
    py.detach(|| orch::sweep(&config.inner, &config.base_dir))
        .map(wrap)
        .map_err(err)
}

#[pyfunction]
fn ablate(py: Python<'_>, config: PyRunConfig) -> PyResult<Vec<PyRunRecord>> {
    py.detach(|| orch::run_ablation(&config.inner, &config.base_dir))
        .map(wrap)
        .map_err(err)
}

/// Writes records.jsonl, summary.csv and curve files under `dir`.
#[pyfunction]
fn write_outputs(dir: &str, records: Vec<PyRef<'_, PyRunRecord>>) -> PyResult<()> {
    let rs: Vec<orch::RunRecord> = records.iter().map(|r| r.inner.clone()).collect();
    orch::write_outputs(Path::new(dir), &rs).map_err(err)
}

/// The toy model the loop writes triples into.
#[pyclass(name = "KnowledgeModel", skip_from_py_object)]
struct PyKnowledgeModel {
    inner: orch::KnowledgeModel,
}

fn triple(t: (String, String, String)) -> PyResult<KnowledgeTriple> {
    KnowledgeTriple::new(t.0, t.1, t.2).map_err(err)
}

#[pymethods]
impl PyKnowledgeModel {
    /// Trains on the default synthetic corpus for `seed`.
    #[new]
    #[pyo3(signature = (seed=0))]
    fn new(py: Python<'_>, seed: u64) -> PyResult<Self> {
        let settings = orch::EditorSettings::default();
        let inner = py
            .detach(|| orch::KnowledgeModel::prepare(&settings, seed))
            .map_err(err)?;
        Ok(PyKnowledgeModel { inner })
    }

    #[getter]
    fn layer(&self) -> usize {
        self.inner.layer
    }

    /// Edits (subject, relation, object) triples; returns (edited, recall).
    fn edit(&mut self, triples: Vec<(String, String, String)>) -> PyResult<(usize, f64)> {
        let ts = triples.into_iter().map(triple).collect::<PyResult<Vec<_>>>()?;
        let s = self.inner.edit_triples(&ts).map_err(err)?;
        Ok((s.edited, s.recall))
    }

    fn knows(&self, subject: String, relation: String, object: String) -> PyResult<bool> {
        self.inner.knows(&triple((subject, relation, object))?).map_err(err)
    }
}

#[pymodule]
fn bilevel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BilevelError", m.py().get_type::<BilevelError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_class::<PyKnowledgeModel>()?;
    m.add_function(wrap_pyfunction!(parse_expr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_expr, m)?)?;
    m.add_function(wrap_pyfunction!(update_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(tour_length, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_tour, m)?)?;
    m.add_function(wrap_pyfunction!(solve_edit, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(score_map, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(write_outputs, m)?)?;
    Ok(())
}

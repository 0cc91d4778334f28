//! Python bindings. Structured results (reports, summaries, trajectories) are
//! returned as plain dicts built from their JSON form.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use submfq::experiment::{run_sweep, ExperimentConfig};
use submfq::learner::{self, LearnConfig};
use submfq::policy::{self, ExecutionConfig, InitialState};
use submfq::verify::{run_checks, Check, SuiteParams};
use submfq::{JointAction, JointState, Layout};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match value.extract::<String>() {
        Ok(s) => s,
        Err(_) => value.py().import("json")?.call_method1("dumps", (value,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(err)
}

fn parse_strategy(name: &str) -> PyResult<policy::Strategy> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| err(format!("unknown strategy {name:?}; expected independent, weak_shared or strong_shared")))
}

fn initial_state(spec: &submfq::SystemSpec, initial: Option<(usize, Vec<usize>)>) -> InitialState {
    match initial {
        Some((s_g, s_locals)) => InitialState::Fixed {
            state: JointState::new(s_g, s_locals),
        },
        None => {
            let d = spec.dims();
            InitialState::Product {
                global: vec![1.0; d.global_states],
                local: vec![1.0; d.local_states],
            }
        }
    }
}

/// A validated system: kernels, rewards, discount and agent count.
#[pyclass(module = "submfq", name = "SystemSpec", frozen)]
struct PySystemSpec {
    inner: submfq::SystemSpec,
}

#[pymethods]
impl PySystemSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        submfq::SystemSpec::from_json_str(text).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        submfq::SystemSpec::load(path).map(|inner| Self { inner }).map_err(err)
    }

    /// Random instance with the given sizes, drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed, n, global_states, local_states, global_actions, local_actions, gamma))]
    fn random(
        seed: u64,
        n: usize,
        global_states: usize,
        local_states: usize,
        global_actions: usize,
        local_actions: usize,
        gamma: f64,
    ) -> PyResult<Self> {
        let sizes = submfq::envs::RandomSizes::new(n, global_states, local_states, global_actions, local_actions, gamma);
        submfq::envs::random_instance(seed, sizes).map(|inner| Self { inner }).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(err)
    }

    fn with_gamma(&self, gamma: f64) -> PyResult<Self> {
        self.inner.with_gamma(gamma).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn dims<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.dims())
    }

    fn value_bound(&self) -> f64 {
        self.inner.value_bound()
    }

    fn system_reward(&self, s_g: usize, s_locals: Vec<usize>, a_g: usize, a_locals: Vec<usize>) -> PyResult<f64> {
        submfq::system_reward(&self.inner, &JointState::new(s_g, s_locals), &JointAction::new(a_g, a_locals))
            .map_err(err)
    }

    fn surrogate_reward(
        &self,
        s_g: usize,
        s_locals: Vec<usize>,
        a_g: usize,
        a_locals: Vec<usize>,
        delta: Vec<usize>,
    ) -> PyResult<f64> {
        let (s, a) = (JointState::new(s_g, s_locals), JointAction::new(a_g, a_locals));
        submfq::surrogate_reward(&self.inner, &s, &a, &delta).map_err(err)
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!(
            "SystemSpec(n={}, global_states={}, local_states={}, global_actions={}, local_actions={}, gamma={})",
            self.inner.n(),
            d.global_states,
            d.local_states,
            d.global_actions,
            d.local_actions,
            self.inner.gamma()
        )
    }
}

/// A learned Q-table in one of the three layouts.
#[pyclass(module = "submfq", name = "QTable", frozen)]
struct PyQTable {
    inner: submfq::QTable,
}

#[pymethods]
impl PyQTable {
    #[getter]
    fn layout<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.layout())
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn get(&self, s_g: usize, s_locals: Vec<usize>, a_g: usize, a_locals: Vec<usize>) -> PyResult<f64> {
        self.inner.get(s_g, &s_locals, a_g, &a_locals).map_err(err)
    }

    fn max_abs_diff(&self, other: &PyQTable) -> PyResult<f64> {
        self.inner.max_abs_diff(&other.inner).map_err(err)
    }

    /// Writes the binary table and its JSON sidecar.
    #[pyo3(signature = (path, metadata=None))]
    fn save(&self, path: std::path::PathBuf, metadata: Option<&Bound<'_, PyAny>>) -> PyResult<()> {
        let metadata = metadata.map(from_py::<serde_json::Value>).transpose()?;
        self.inner.save(&path, metadata).map_err(err)
    }

    /// Returns `(table, sidecar)`.
    #[staticmethod]
    fn load(py: Python<'_>, path: std::path::PathBuf) -> PyResult<(Self, Bound<'_, PyAny>)> {
        let (inner, sidecar) = submfq::QTable::load(&path).map_err(err)?;
        Ok((Self { inner }, to_py(py, &sidecar)?))
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.inner.write_csv(&mut out).map_err(err)?;
        String::from_utf8(out).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("QTable(layout={}, k={}, entries={})", self.inner.layout().name(), self.inner.k(), self.inner.len())
    }
}

/// Greedy policy over a learned table.
#[pyclass(module = "submfq", name = "LearnedPolicy", frozen)]
struct PyLearnedPolicy {
    inner: submfq::LearnedPolicy,
}

#[pymethods]
impl PyLearnedPolicy {
    #[new]
    fn new(table: &PyQTable) -> PyResult<Self> {
        submfq::LearnedPolicy::new(table.inner.clone()).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn table(&self) -> PyQTable {
        PyQTable {
            inner: self.inner.table().clone(),
        }
    }

    /// Global action for the global state and `k` sampled local states.
    fn greedy_global(&self, s_g: usize, s_delta: Vec<usize>) -> PyResult<usize> {
        self.inner.greedy_global(s_g, &s_delta).map_err(err)
    }

    /// Action of a local agent in state `s_i` given `k-1` peer states.
    fn greedy_local(&self, s_g: usize, s_i: usize, s_peers: Vec<usize>) -> PyResult<usize> {
        self.inner.greedy_local(s_g, s_i, &s_peers).map_err(err)
    }
}

/// Learns a `k`-agent table. Sampled mode when `m` is given, exact
/// expectations otherwise. `layout` is `"explicit_subset"` or `"mean_field"`;
/// by default the smaller one is used. Returns `(table, report)`.
#[pyfunction]
#[pyo3(signature = (spec, k, iterations, m=None, seed=0, tol=None, layout=None))]
fn learn<'py>(
    py: Python<'py>,
    spec: &PySystemSpec,
    k: usize,
    iterations: usize,
    m: Option<usize>,
    seed: u64,
    tol: Option<f64>,
    layout: Option<&str>,
) -> PyResult<(PyQTable, Bound<'py, PyAny>)> {
    let mut cfg = match m {
        Some(m) => LearnConfig::sampled(k, m, iterations, seed),
        None => LearnConfig::exact(k, iterations),
    };
    if let Some(tol) = tol {
        cfg.tol = tol;
    }
    cfg.layout = match layout {
        None => None,
        Some("explicit_subset") => Some(Layout::ExplicitSubset { k }),
        Some("mean_field") => Some(Layout::MeanField { k }),
        Some(other) => return Err(err(format!("unknown layout {other:?}"))),
    };
    let spec = &spec.inner;
    let (q, report) = py.detach(|| learner::learn(spec, &cfg)).map_err(err)?;
    Ok((PyQTable { inner: q }, to_py(py, &report)?))
}

/// Monte Carlo estimate of the discounted return on the full system.
/// `initial` is `(s_g, s_locals)`; uniform random starts otherwise.
#[pyfunction]
#[pyo3(signature = (spec, policy, strategy="independent", episodes=1000, horizon=None, seed=0, initial=None))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    spec: &PySystemSpec,
    policy: &PyLearnedPolicy,
    strategy: &str,
    episodes: usize,
    horizon: Option<usize>,
    seed: u64,
    initial: Option<(usize, Vec<usize>)>,
) -> PyResult<Bound<'py, PyAny>> {
    let strategy = parse_strategy(strategy)?;
    let horizon = horizon.unwrap_or_else(|| policy::default_horizon(spec.inner.gamma()));
    let init = initial_state(&spec.inner, initial);
    let (spec, pi) = (&spec.inner, &policy.inner);
    let summary = py
        .detach(|| policy::evaluate_policy(spec, pi, strategy, episodes, horizon, seed, &init))
        .map_err(err)?;
    to_py(py, &summary)
}

/// One episode; returns the trajectory with every state, action and reward.
#[pyfunction]
#[pyo3(signature = (spec, policy, strategy="independent", horizon=None, seed=0, initial=None))]
fn execute<'py>(
    py: Python<'py>,
    spec: &PySystemSpec,
    policy: &PyLearnedPolicy,
    strategy: &str,
    horizon: Option<usize>,
    seed: u64,
    initial: Option<(usize, Vec<usize>)>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = ExecutionConfig {
        strategy: parse_strategy(strategy)?,
        horizon: horizon.unwrap_or_else(|| policy::default_horizon(spec.inner.gamma())),
        seed,
        initial: initial_state(&spec.inner, initial),
    };
    let t = policy::execute(&spec.inner, &policy.inner, &config).map_err(err)?;
    to_py(py, &t)
}

/// Runs named verification checks (all by default); returns their reports.
#[pyfunction]
#[pyo3(signature = (checks=None, seed=0, perturb_gamma=None))]
fn verify<'py>(
    py: Python<'py>,
    checks: Option<Vec<String>>,
    seed: u64,
    perturb_gamma: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let checks: Vec<Check> = match checks {
        Some(names) => names.iter().map(|n| Check::from_name(n)).collect::<submfq::Result<_>>().map_err(err)?,
        None => Check::ALL.to_vec(),
    };
    let params = SuiteParams {
        perturb_gamma,
        ..SuiteParams::seeded(seed)
    };
    let reports = py.detach(|| run_checks(&checks, &params)).map_err(err)?;
    to_py(py, &reports)
}

/// Runs a sweep from an experiment config (JSON text or dict); returns one
/// record per `(k, m)` cell.
#[pyfunction]
#[pyo3(signature = (config, jobs=1))]
fn sweep<'py>(py: Python<'py>, config: &Bound<'py, PyAny>, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
    let config: ExperimentConfig = from_py(config)?;
    config.validate().map_err(err)?;
    let records = py.detach(|| run_sweep(&config, jobs)).map_err(err)?;
    to_py(py, &records)
}

/// Successor samples per entry needed for the sampled learner's guarantee.
#[pyfunction]
fn sample_size_mstar(spec: &PySystemSpec, k: usize) -> PyResult<u64> {
    learner::sample_size_mstar(spec.inner.dims(), spec.inner.gamma(), k).map_err(err)
}

#[pymodule(name = "submfq")]
fn submfq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", submfq::experiment::VERSION)?;
    m.add_class::<PySystemSpec>()?;
    m.add_class::<PyQTable>()?;
    m.add_class::<PyLearnedPolicy>()?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sample_size_mstar, m)?)?;
    Ok(())
}

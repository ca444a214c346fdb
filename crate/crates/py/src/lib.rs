//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from their JSON form.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cascade_core::evaluation::{evaluate_corpus, ApeBins, EvaluationConfig};
use cascade_core::io;
use cascade_core::simulate::default_mixture;
use cascade_core::{ModelTag, ShareEvent};

create_exception!(cascade_forecast, InsufficientDataError, PyValueError);

fn py_err(e: cascade_core::Error) -> PyErr {
    use cascade_core::Error::*;
    match e {
        InsufficientData(_) => InsufficientDataError::new_err(e.to_string()),
        Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Reaction-time kernel: constant `c` up to `s0` seconds, then a power-law tail.
#[pyclass(module = "cascade_forecast", frozen)]
struct Kernel {
    inner: cascade_core::KernelParams,
}

#[pymethods]
impl Kernel {
    /// Without `c`, the kernel is normalized to unit mass.
    #[new]
    #[pyo3(signature = (s0 = 300.0, theta = 0.242, c = None))]
    fn new(s0: f64, theta: f64, c: Option<f64>) -> PyResult<Self> {
        let inner = match c {
            Some(c) => cascade_core::KernelParams::new(c, s0, theta, false),
            None => cascade_core::KernelParams::normalized(s0, theta),
        }
        .map_err(py_err)?;
        Ok(Kernel { inner })
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn s0(&self) -> f64 {
        self.inner.s0
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    fn phi(&self, s: f64) -> PyResult<f64> {
        cascade_core::phi(s, &self.inner).map_err(py_err)
    }

    fn mass(&self, a: f64, b: f64) -> PyResult<f64> {
        cascade_core::phi_mass(a, b, &self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Kernel(s0={}, theta={}, c={})", self.inner.s0, self.inner.theta, self.inner.c)
    }
}

/// Model and evaluation settings; defaults match the library defaults.
#[pyclass(module = "cascade_forecast", frozen)]
struct Config {
    inner: io::Config,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => io::Config::from_toml(t).map_err(py_err)?,
            None => io::Config::default(),
        };
        Ok(Config { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Config {
            inner: io::Config::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn kernel(&self) -> Kernel {
        Kernel { inner: self.inner.kernel }
    }

    #[getter]
    fn n_init(&self) -> f64 {
        self.inner.n_init
    }

    /// Schedule boundaries in seconds.
    #[getter]
    fn boundaries_s(&self) -> Vec<f64> {
        self.inner.schedule.boundaries_s()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }
}

fn config_or_default(config: Option<&Bound<'_, Config>>) -> io::Config {
    config.map(|c| c.get().inner.clone()).unwrap_or_default()
}

/// One article's share tree.
#[pyclass(module = "cascade_forecast", frozen)]
struct Cascade {
    inner: cascade_core::Cascade,
}

#[pymethods]
impl Cascade {
    /// `events` holds `(event_id, parent_id, degree, time_s)` tuples; the root
    /// has `parent_id = None`.
    #[new]
    #[pyo3(signature = (article_id, events, post_time = 0, final_size = None))]
    fn new(article_id: String, events: Vec<(u64, Option<u64>, u64, f64)>, post_time: i64, final_size: Option<u64>) -> PyResult<Self> {
        let events = events
            .into_iter()
            .map(|(event_id, parent_id, degree, time_s)| ShareEvent {
                event_id,
                parent_id,
                user_id: format!("u{event_id}"),
                degree,
                channel: if parent_id.is_some() {
                    cascade_core::Channel::GroupChat
                } else {
                    cascade_core::Channel::Other
                },
                parent_channel: parent_id.map(|_| cascade_core::Channel::Other),
                time_s,
            })
            .collect();
        let inner = cascade_core::Cascade::new(article_id, post_time, events, final_size);
        if let Some(v) = cascade_core::validate_cascade(&inner).first() {
            return Err(PyValueError::new_err(format!("{v:?}")));
        }
        Ok(Cascade { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: cascade_core::Cascade = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Cascade { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn article_id(&self) -> &str {
        &self.inner.article_id
    }

    #[getter]
    fn final_size(&self) -> Option<u64> {
        self.inner.final_size
    }

    fn reshare_count(&self, t_s: f64) -> u64 {
        self.inner.reshare_count(t_s)
    }

    fn __len__(&self) -> usize {
        self.inner.events.len()
    }

    fn __repr__(&self) -> String {
        format!("Cascade({:?}, {} events)", self.inner.article_id, self.inner.events.len())
    }
}

fn wrap(corpus: Vec<cascade_core::Cascade>) -> Vec<Cascade> {
    corpus.into_iter().map(|inner| Cascade { inner }).collect()
}

fn model_tag(name: &str) -> PyResult<ModelTag> {
    name.parse().map_err(py_err)
}

#[pyfunction]
fn load_corpus(path: PathBuf) -> PyResult<Vec<Cascade>> {
    io::load_corpus(&path).map(wrap).map_err(py_err)
}

#[pyfunction]
fn save_corpus(corpus: Vec<Bound<'_, Cascade>>, path: PathBuf) -> PyResult<()> {
    let corpus: Vec<cascade_core::Cascade> = corpus.iter().map(|c| c.get().inner.clone()).collect();
    io::save_corpus(&corpus, &path).map_err(py_err)
}

/// Synthetic corpus from the default three-pattern mixture.
#[pyfunction]
fn simulate_corpus(py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<Cascade>> {
    py.detach(|| cascade_core::simulate_corpus(n, &default_mixture(), seed))
        .map(wrap)
        .map_err(py_err)
}

/// `(R_t, N_t, N_t^e)` at `t_s`.
#[pyfunction]
#[pyo3(signature = (cascade, t_s, config = None))]
fn exposure(cascade: &Bound<'_, Cascade>, t_s: f64, config: Option<&Bound<'_, Config>>) -> (u64, f64, f64) {
    let cfg = config_or_default(config);
    let c = &cascade.get().inner;
    let ex = cascade_core::exposure(c, t_s, &cfg.kernel);
    (c.reshare_count(t_s), ex.n_t, ex.n_t_eff)
}

#[pyfunction]
#[pyo3(signature = (cascade, t_s, config = None))]
fn estimate_p(cascade: &Bound<'_, Cascade>, t_s: f64, config: Option<&Bound<'_, Config>>) -> PyResult<f64> {
    let cfg = config_or_default(config);
    cascade_core::estimate_p(&cascade.get().inner, t_s, &cfg.kernel, cfg.min_reshares).map_err(py_err)
}

/// Prediction points for `model` ("seismic", "weseer" or "speed-only") at
/// `times_s`, defaulting to the schedule boundaries.
#[pyfunction]
#[pyo3(signature = (cascade, model = "weseer", times_s = None, n_init = None, config = None))]
fn predict(
    py: Python<'_>,
    cascade: &Bound<'_, Cascade>,
    model: &str,
    times_s: Option<Vec<f64>>,
    n_init: Option<f64>,
    config: Option<&Bound<'_, Config>>,
) -> PyResult<Py<PyAny>> {
    let cfg = config_or_default(config);
    let times = times_s.unwrap_or_else(|| cfg.schedule.boundaries_s());
    let tag = model_tag(model)?;
    let points = cascade_core::predict_series(&cascade.get().inner, &times, &cfg.model_params(), tag, n_init.unwrap_or(cfg.n_init))
        .map_err(py_err)?;
    to_py(py, &points)
}

#[pyfunction]
#[pyo3(signature = (cascade, frame, t_s, n_init = None, config = None))]
fn whatif(
    py: Python<'_>,
    cascade: &Bound<'_, Cascade>,
    frame: usize,
    t_s: f64,
    n_init: Option<f64>,
    config: Option<&Bound<'_, Config>>,
) -> PyResult<Py<PyAny>> {
    let cfg = config_or_default(config);
    let report = cascade_core::whatif(
        &cascade.get().inner,
        frame,
        t_s,
        &cfg.model_params(),
        n_init.unwrap_or(cfg.n_init),
        cfg.big_node_threshold,
    )
    .map_err(py_err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (cascade, reference_size, grid = None, times_s = None, config = None))]
fn recommend(
    py: Python<'_>,
    cascade: &Bound<'_, Cascade>,
    reference_size: f64,
    grid: Option<Vec<f64>>,
    times_s: Option<Vec<f64>>,
    config: Option<&Bound<'_, Config>>,
) -> PyResult<Py<PyAny>> {
    let cfg = config_or_default(config);
    let grid = grid.unwrap_or_else(|| cfg.grid.clone());
    let times = times_s.unwrap_or_else(|| cfg.schedule.boundaries_s());
    let c = cascade.get().inner.clone();
    let rec = py
        .detach(|| cascade_core::recommend_degree(&c, &grid, reference_size, &times, &cfg.model_params()))
        .map_err(py_err)?;
    to_py(py, &rec)
}

#[pyfunction]
#[pyo3(signature = (corpus, models = None, times_s = None, top_m = None, n_init = None, config = None))]
fn evaluate(
    py: Python<'_>,
    corpus: Vec<Bound<'_, Cascade>>,
    models: Option<Vec<String>>,
    times_s: Option<Vec<f64>>,
    top_m: Option<usize>,
    n_init: Option<f64>,
    config: Option<&Bound<'_, Config>>,
) -> PyResult<Py<PyAny>> {
    let cfg = config_or_default(config);
    let models = match models {
        Some(names) => names.iter().map(|m| model_tag(m)).collect::<PyResult<Vec<_>>>()?,
        None => ModelTag::ALL.to_vec(),
    };
    let eval = EvaluationConfig {
        models,
        times_s: times_s.unwrap_or_else(|| cfg.schedule.boundaries_s()),
        top_m: top_m.unwrap_or(cfg.top_m),
        n_init: n_init.unwrap_or(cfg.n_init),
        bins: ApeBins::new(cfg.ape_edges.clone()).map_err(py_err)?,
    };
    let corpus: Vec<cascade_core::Cascade> = corpus.iter().map(|c| c.get().inner.clone()).collect();
    let report = py
        .detach(|| evaluate_corpus(&corpus, &eval, &cfg.model_params()))
        .map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule]
fn cascade_forecast(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<Config>()?;
    m.add_class::<Cascade>()?;
    m.add("InsufficientDataError", m.py().get_type::<InsufficientDataError>())?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(save_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(exposure, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_p, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(whatif, m)?)?;
    m.add_function(wrap_pyfunction!(recommend, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}

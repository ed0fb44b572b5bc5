use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use cfsample::config::RunConfig;
use cfsample::eval::recall_at_m;
use cfsample::gradcheck::{run_gradcheck, GradcheckSpec};
use cfsample::graph::{ingest_features, ingest_links, split_holdout, synth_graph, HoldoutSplit, InteractionGraph, SplitSpec, SynthSpec};
use cfsample::ledger::UnitCosts;
use cfsample::model::{load_checkpoint, save_checkpoint, EmbeddingModel};
use cfsample::sampler::{SamplingContext, Strategy};
use cfsample::trainer::{train as train_run, EvalSet};
use cfsample::Error;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Numerical(_) => PyArithmeticError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Checkpoint(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Builds a run configuration from `{"sampler.strategy": "iid", ...}`.
fn run_config(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            cfg.set(&key, &v.str()?.to_cow()?).map_err(to_py)?;
        }
    }
    Ok(cfg)
}

/// Bipartite user-item interaction graph.
#[pyclass(name = "Graph", module = "cfsample_py", frozen)]
struct PyGraph(InteractionGraph);

#[pymethods]
impl PyGraph {
    #[new]
    fn new(num_users: usize, num_items: usize, links: Vec<(u32, u32)>) -> PyResult<Self> {
        InteractionGraph::from_links(num_users, num_items, links).map(PyGraph).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (num_users, num_items, links, exponent = 1.0, seed = 0))]
    fn synth(num_users: usize, num_items: usize, links: usize, exponent: f64, seed: u64) -> PyResult<Self> {
        synth_graph(&SynthSpec::new(num_users, num_items, links, exponent, seed))
            .map(PyGraph)
            .map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (links, features = None))]
    fn from_files(links: PathBuf, features: Option<PathBuf>) -> PyResult<Self> {
        let g = ingest_links(&links, None, None).map_err(to_py)?;
        let g = match features {
            None => g,
            Some(p) => {
                let f = ingest_features(&p, g.num_items(), None).map_err(to_py)?;
                g.with_features(f).map_err(to_py)?
            }
        };
        Ok(PyGraph(g))
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.0.num_users()
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.0.num_items()
    }

    #[getter]
    fn num_links(&self) -> usize {
        self.0.num_links()
    }

    #[getter]
    fn has_features(&self) -> bool {
        self.0.features().is_some()
    }

    fn links(&self) -> Vec<(u32, u32)> {
        self.0.links().collect()
    }

    fn user_degrees(&self) -> Vec<usize> {
        self.0.user_degrees()
    }

    fn item_degrees(&self) -> Vec<usize> {
        self.0.item_degrees()
    }

    fn has_link(&self, user: u32, item: u32) -> bool {
        self.0.has_link(user, item)
    }

    /// Withholds a random fraction of items and every link into them.
    #[pyo3(signature = (fraction = 0.2, seed = 0))]
    fn split(&self, fraction: f64, seed: u64) -> PyResult<PySplit> {
        let spec = SplitSpec {
            test_item_fraction: fraction,
            seed,
        };
        split_holdout(&self.0, spec).map(PySplit).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(users={}, items={}, links={})",
            self.0.num_users(),
            self.0.num_items(),
            self.0.num_links()
        )
    }
}

/// Item-holdout split of a graph.
#[pyclass(name = "Split", module = "cfsample_py", frozen)]
struct PySplit(HoldoutSplit);

#[pymethods]
impl PySplit {
    #[getter]
    fn train(&self) -> PyGraph {
        PyGraph(self.0.train.clone())
    }

    #[getter]
    fn test_pool(&self) -> Vec<u32> {
        self.0.test_pool.clone()
    }

    #[getter]
    fn test_links(&self) -> Vec<(u32, u32)> {
        self.0.test_links.clone()
    }
}

/// Trained user and item embedding functions.
#[pyclass(name = "Model", module = "cfsample_py", frozen)]
struct PyModel(EmbeddingModel);

#[pymethods]
impl PyModel {
    #[getter]
    fn item_fn(&self) -> String {
        self.0.kind().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Score matrix `len(users) x len(items)`. Feature-based item functions
    /// need the graph carrying the item features.
    #[pyo3(signature = (users, items, graph = None))]
    fn scores(&self, users: Vec<u32>, items: Vec<u32>, graph: Option<&PyGraph>) -> PyResult<Vec<Vec<f64>>> {
        let features = graph.and_then(|g| g.0.features());
        let s = self.0.score_matrix(&users, &items, features).map_err(to_py)?;
        Ok(s.outer_iter().map(|r| r.to_vec()).collect())
    }

    /// Mean recall@m over users with held-out links.
    #[pyo3(signature = (split, m = 50))]
    fn recall(&self, split: &PySplit, m: usize) -> PyResult<f64> {
        let by_user = split.0.test_items_by_user();
        recall_at_m(&self.0, split.0.train.features(), &split.0.test_pool, &by_user, m)
            .map(|r| r.mean)
            .map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.0, &path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_checkpoint(&path).map(PyModel).map_err(to_py)
    }
}

/// Trains on `graph` with configuration overrides; returns the model and
/// one dict per evaluation point.
#[pyfunction]
#[pyo3(signature = (graph, config = None, test = None))]
fn train<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    config: Option<&Bound<'py, PyDict>>,
    test: Option<&PySplit>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg = run_config(config)?.train().map_err(to_py)?;
    let eval = test.map(|s| EvalSet::from(&s.0));
    let out = py
        .detach(|| train_run(&graph.0, eval.as_ref(), &cfg))
        .map_err(to_py)?;
    let trace = json(py, &out.trace.records)?;
    Ok((PyModel(out.model), trace))
}

/// Composition of the first `n` mini-batches drawn under `config`.
#[pyfunction]
#[pyo3(signature = (graph, config = None, n = 1))]
fn sample_batches<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    config: Option<&Bound<'py, PyDict>>,
    n: usize,
) -> PyResult<Bound<'py, PyList>> {
    let cfg = run_config(config)?;
    let family = cfg.loss().map_err(to_py)?.family();
    let ctx = SamplingContext::new(&graph.0, cfg.sampler().map_err(to_py)?, family).map_err(to_py)?;
    let mut sampler = ctx.seeded_sampler(0);
    let out = PyList::empty(py);
    while out.len() < n {
        let Some(batch) = sampler.next_batch() else { continue };
        let c = batch.composition();
        let d = PyDict::new(py);
        d.set_item("users", c.users)?;
        d.set_item("items", c.items)?;
        d.set_item("pos_links", c.pos_links)?;
        d.set_item("neg_links", c.neg_links)?;
        d.set_item("vec_interactions", c.vec_interactions)?;
        d.set_item("mat_interactions", c.mat_interactions)?;
        d.set_item("degenerate", batch.is_degenerate())?;
        out.append(d)?;
    }
    Ok(out)
}

/// Closed-form per-batch evaluation counts and cost.
#[pyfunction]
#[pyo3(signature = (strategy, b = 512, k = 11, s = 44, t_f = 1.0, t_g = 1.0, t_i = 1.0))]
fn cost_sim<'py>(
    py: Python<'py>,
    strategy: &str,
    b: u64,
    k: u64,
    s: u64,
    t_f: f64,
    t_g: f64,
    t_i: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let strategy: Strategy = strategy.parse().map_err(to_py)?;
    let p = cfsample::ledger::cost_sim(strategy, b, k, s, UnitCosts { t_f, t_g, t_i }).map_err(to_py)?;
    json(py, &p)
}

/// Finite-difference gradient check over every item function, loss and
/// strategy; one dict per combination.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let rows = run_gradcheck(&GradcheckSpec {
        seed,
        ..GradcheckSpec::default()
    })
    .map_err(to_py)?;
    json(py, &rows)
}

#[pymodule]
fn cfsample_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sample_batches, m)?)?;
    m.add_function(wrap_pyfunction!(cost_sim, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}

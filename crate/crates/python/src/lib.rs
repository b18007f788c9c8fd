//! Python bindings. Structured values cross the boundary as plain Python
//! dicts and lists, built from the same JSON the CLI writes.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use convshop::catalog::{Catalog as CoreCatalog, NormalizeConfig};
use convshop::dialogue::{GenerationOptions, PromptSet, Strategy, TemplateBackend, TrackerConfig};
use convshop::eval::{
    self, BaselineExtractor, Bm25Index as CoreIndex, Bm25Params, Query, QueryExtractor, ReferenceExtractor,
};
use convshop::pipeline::{compute_stats, sample_episode, EpisodeRecord, Pipeline, RunConfig};
use convshop::planner::{plan_dialogue, PlannerConfig};
use convshop::synthetic::{synthetic_catalog, SyntheticConfig, SyntheticSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// A normalized product catalog.
#[pyclass(module = "convshop_py", frozen)]
struct Catalog {
    inner: CoreCatalog,
}

#[pymethods]
impl Catalog {
    /// Loads a line-delimited product file.
    #[staticmethod]
    #[pyo3(signature = (path, domain=None))]
    fn load(path: PathBuf, domain: Option<String>) -> PyResult<Self> {
        let domain = domain.unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        let (inner, _) = CoreCatalog::load(&path, &domain, &NormalizeConfig::default())
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Catalog { inner })
    }

    /// A seeded synthetic catalog.
    #[staticmethod]
    #[pyo3(signature = (n=1000, seed=0, missing_rate=0.1, zipf_exponent=1.0))]
    fn synthetic(n: usize, seed: u64, missing_rate: f64, zipf_exponent: f64) -> PyResult<Self> {
        let cfg = SyntheticConfig {
            n_products: n,
            seed,
            missing_rate,
            zipf_exponent,
        };
        let inner = synthetic_catalog(&SyntheticSpec::default(), &cfg).map_err(value_err)?;
        Ok(Catalog { inner })
    }

    #[getter]
    fn domain(&self) -> &str {
        self.inner.domain()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn categories(&self) -> Vec<String> {
        self.inner.categories().map(str::to_string).collect()
    }

    fn product<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let p = self.inner.get(id).ok_or_else(|| PyValueError::new_err(format!("unknown product {id:?}")))?;
        to_py(py, p)
    }

    fn __repr__(&self) -> String {
        format!("Catalog(domain={:?}, products={})", self.inner.domain(), self.inner.len())
    }
}

fn run_config(episodes: usize, seed: u64) -> RunConfig {
    RunConfig {
        episodes,
        seed,
        ..RunConfig::default()
    }
}

/// The sampled preference for one episode of a seeded run.
#[pyfunction]
#[pyo3(signature = (catalog, episode, seed=0))]
fn sample_preference<'py>(py: Python<'py>, catalog: &Catalog, episode: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (pref, _) = sample_episode(&catalog.inner, &run_config(episode + 1, seed), episode).map_err(value_err)?;
    to_py(py, &pref)
}

/// The preference and dialogue plan for one episode of a seeded run.
#[pyfunction]
#[pyo3(signature = (catalog, episode, seed=0))]
fn plan<'py>(py: Python<'py>, catalog: &Catalog, episode: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (pref, _) = sample_episode(&catalog.inner, &run_config(episode + 1, seed), episode).map_err(value_err)?;
    let out = plan_dialogue(&catalog.inner, &pref, &PlannerConfig::default()).map_err(value_err)?;
    let value = serde_json::json!({
        "preference": pref,
        "plan_history": out.history,
        "trace": out.trace(),
        "stop": out.stop,
        "final_candidates": out.final_set.ids(&catalog.inner),
    });
    to_py(py, &value)
}

/// Generates episode records with the template backend.
#[pyfunction]
#[pyo3(signature = (catalog, episodes, seed=0, strategy="single-pass", workers=1))]
fn generate<'py>(
    py: Python<'py>,
    catalog: &Catalog,
    episodes: usize,
    seed: u64,
    strategy: &str,
    workers: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let strategy: Strategy = strategy.parse().map_err(value_err)?;
    let config = RunConfig {
        generation: GenerationOptions {
            strategy,
            ..GenerationOptions::default()
        },
        workers: workers.max(1),
        ..run_config(episodes, seed)
    };
    let prompts = PromptSet::default();
    let pipeline = Pipeline {
        catalog: &catalog.inner,
        config: &config,
        backend: &TemplateBackend,
        prompts: &prompts,
        refiner: None,
    };
    let records = py.detach(|| pipeline.run()).map_err(value_err)?;
    to_py(py, &records)
}

/// BM25 index over a catalog's products.
#[pyclass(module = "convshop_py", frozen)]
struct Bm25Index {
    inner: CoreIndex,
}

#[pymethods]
impl Bm25Index {
    #[new]
    #[pyo3(signature = (catalog, k1=1.2, b=0.75))]
    fn new(catalog: &Catalog, k1: f64, b: f64) -> PyResult<Self> {
        let inner = eval::index_products(&catalog.inner, Bm25Params { k1, b }).map_err(value_err)?;
        Ok(Bm25Index { inner })
    }

    /// Top `k` (product id, score) pairs for a free-text query.
    #[pyo3(signature = (query, k=10))]
    fn rank(&self, query: String, k: usize) -> PyResult<Vec<(String, f64)>> {
        let r = self.inner.rank(&Query::Text(query), k).map_err(value_err)?;
        Ok(r.items.into_iter().map(|it| (it.id, it.score)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Query-extraction and ranking metrics over generated records.
#[pyfunction]
#[pyo3(signature = (catalog, records, extractor="reference", ks=vec![1, 10, 100]))]
fn evaluate<'py>(
    py: Python<'py>,
    catalog: &Catalog,
    records: &Bound<'py, PyAny>,
    extractor: &str,
    ks: Vec<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<EpisodeRecord> = from_py(records)?;
    let convs: Vec<_> = records
        .into_iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| r.conversation)
        .collect();
    let index = eval::index_products(&catalog.inner, Bm25Params::default()).map_err(value_err)?;
    let reference = ReferenceExtractor::new(catalog.inner.categories(), TrackerConfig::default());
    let ex: &dyn QueryExtractor = match extractor {
        "reference" => &reference,
        "baseline" => &BaselineExtractor,
        other => return Err(PyValueError::new_err(format!("unknown extractor {other:?}"))),
    };
    let report = eval::evaluate_conversations(&convs, ex, &index, &ks).map_err(value_err)?;
    to_py(py, &report)
}

/// Per-domain statistics over generated records.
#[pyfunction]
fn stats<'py>(py: Python<'py>, records: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<EpisodeRecord> = from_py(records)?;
    to_py(py, &compute_stats(&records))
}

#[pyfunction]
fn rouge_n(pred: &str, gold: &str, n: usize) -> f64 {
    eval::rouge_n(pred, gold, n)
}

#[pyfunction]
fn rouge_l(pred: &str, gold: &str) -> f64 {
    eval::rouge_l(pred, gold)
}

#[pyfunction]
fn exact_f1(pred: &str, gold: &str) -> f64 {
    eval::exact_f1(pred, gold)
}

#[pymodule]
fn convshop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Catalog>()?;
    m.add_class::<Bm25Index>()?;
    m.add_function(wrap_pyfunction!(sample_preference, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(exact_f1, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Python bindings: triplet files, the linear BT scorer, verdict parsing and
//! the small numeric helpers.

use std::collections::BTreeMap;

use longpref::corpus::{split_dataset, SplitSpec, TaskKind};
use longpref::judge::{self, Label, Side};
use longpref::policy::{self, ClipConfig, StepSample};
use longpref::reward::{self, Featurizer, FitConfig, HashingFeaturizer, LinearBt, Scorer, ScorerParams};
use longpref::store::{self, PreferenceTriplet, Source};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(longpref, LongprefError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    LongprefError::new_err(e.to_string())
}

fn parse_task(task: Option<&str>) -> PyResult<Option<TaskKind>> {
    task.map(|t| t.parse::<TaskKind>().map_err(|e| PyValueError::new_err(e.to_string()))).transpose()
}

fn label_str(label: Label) -> &'static str {
    match label {
        Label::A => "A",
        Label::B => "B",
    }
}

/// A `(prompt, chosen, rejected)` preference record.
#[pyclass(name = "Triplet", module = "longpref", frozen, from_py_object)]
#[derive(Clone)]
struct PyTriplet(PreferenceTriplet);

#[pymethods]
impl PyTriplet {
    /// External triplet; `task` is one of "qa", "d2t", "sum" or None.
    #[new]
    #[pyo3(signature = (prompt, chosen, rejected, task=None))]
    fn new(prompt: String, chosen: String, rejected: String, task: Option<&str>) -> PyResult<Self> {
        PreferenceTriplet::new(parse_task(task)?, prompt, chosen, rejected, Source::External, None).map(Self).map_err(err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }

    #[getter]
    fn task(&self) -> Option<&'static str> {
        self.0.task.map(TaskKind::code)
    }

    #[getter]
    fn prompt(&self) -> &str {
        &self.0.prompt
    }

    #[getter]
    fn chosen(&self) -> &str {
        &self.0.chosen
    }

    #[getter]
    fn rejected(&self) -> &str {
        &self.0.rejected
    }

    #[getter]
    fn source(&self) -> &'static str {
        match self.0.source {
            Source::AiJudge => "ai_judge",
            Source::Human => "human",
            Source::External => "external",
        }
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("triplet serializes")
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let t: PreferenceTriplet = serde_json::from_str(text).map_err(err)?;
        t.validate().map_err(err)?;
        Ok(Self(t))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Triplet(id={:?}, task={:?}, source={:?})", self.0.id, self.task(), self.source())
    }
}

fn unwrap_triplets(triplets: Vec<PyTriplet>) -> Vec<PreferenceTriplet> {
    triplets.into_iter().map(|t| t.0).collect()
}

#[pyfunction]
fn read_triplets(path: std::path::PathBuf) -> PyResult<Vec<PyTriplet>> {
    Ok(store::read_triplets(path).map_err(err)?.into_iter().map(PyTriplet).collect())
}

#[pyfunction]
fn write_triplets(path: std::path::PathBuf, triplets: Vec<PyTriplet>) -> PyResult<()> {
    store::write_triplets(path, &unwrap_triplets(triplets)).map_err(err)
}

/// Hashed n-gram features plus a few dense length and overlap features.
#[pyclass(name = "HashingFeaturizer", module = "longpref", frozen)]
struct PyFeaturizer(HashingFeaturizer);

#[pymethods]
impl PyFeaturizer {
    /// `spec` is a featurizer id such as "hash-ngram-v1:d=4096:n=2-4".
    #[new]
    #[pyo3(signature = (spec=None))]
    fn new(spec: Option<&str>) -> PyResult<Self> {
        match spec {
            Some(s) => HashingFeaturizer::from_id(s).map(Self).map_err(err),
            None => Ok(Self(HashingFeaturizer::default())),
        }
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn features(&self, prompt: &str, response: &str) -> Vec<f64> {
        self.0.features(prompt, response)
    }
}

/// Linear Bradley-Terry reward model.
#[pyclass(name = "BtScorer", module = "longpref", frozen)]
struct PyBtScorer(LinearBt<HashingFeaturizer>);

#[pymethods]
impl PyBtScorer {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        LinearBt::load(path).map(Self).map_err(err)
    }

    /// Fits on triplets; returns the scorer and the per-epoch objective.
    #[staticmethod]
    #[pyo3(signature = (triplets, featurizer=None, lr=0.1, epochs=10, batch_size=64, l2=1e-4, seed=0))]
    fn fit(
        py: Python<'_>,
        triplets: Vec<PyTriplet>,
        featurizer: Option<&str>,
        lr: f64,
        epochs: usize,
        batch_size: usize,
        l2: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let f = PyFeaturizer::new(featurizer)?.0;
        let triplets = unwrap_triplets(triplets);
        let config = FitConfig { lr, epochs, batch_size, seed, l2 };
        let (params, report) = py.detach(|| reward::fit_bt(&triplets, &f, &config)).map_err(err)?;
        Ok((Self(LinearBt::new(f, params).map_err(err)?), report.epoch_losses))
    }

    fn score(&self, prompt: &str, response: &str) -> PyResult<f64> {
        self.0.score(prompt, response).map_err(err)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.params().save(path).map_err(err)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.params().weights.clone()
    }

    #[getter]
    fn featurizer_id(&self) -> String {
        self.0.params().featurizer_id.clone()
    }

    /// `(overall, n, {task: (accuracy, n)})`.
    fn pairwise_accuracy(
        &self,
        py: Python<'_>,
        triplets: Vec<PyTriplet>,
    ) -> PyResult<(f64, usize, BTreeMap<String, (f64, usize)>)> {
        let triplets = unwrap_triplets(triplets);
        let report = py.detach(|| reward::pairwise_accuracy(&self.0, &triplets)).map_err(err)?;
        let per_task = report.per_task.into_iter().map(|(k, v)| (k, (v.accuracy, v.n))).collect();
        Ok((report.overall, report.n, per_task))
    }
}

/// Scorer over raw weights, for callers that fit elsewhere.
#[pyfunction]
fn bt_scorer_from_weights(featurizer: &str, weights: Vec<f64>) -> PyResult<PyBtScorer> {
    let f = HashingFeaturizer::from_id(featurizer).map_err(err)?;
    LinearBt::new(f, ScorerParams::new(featurizer, weights)).map(PyBtScorer).map_err(err)
}

/// `(overall, {metric: label})` with labels "A"/"B"; overall is None when unparseable.
#[pyfunction]
fn parse_verdict(raw: &str) -> (Option<&'static str>, BTreeMap<String, &'static str>) {
    let overall = judge::parse_overall(raw).label().map(label_str);
    let metrics = judge::parse_metrics(raw).into_iter().map(|(m, l)| (m.to_string(), label_str(l))).collect();
    (overall, metrics)
}

/// Majority over "first"/"second"/None votes; None when no side has a strict majority.
#[pyfunction]
fn majority(votes: Vec<Option<String>>) -> PyResult<Option<&'static str>> {
    let sides = votes
        .iter()
        .map(|v| match v.as_deref() {
            None => Ok(None),
            Some("first") => Ok(Some(Side::First)),
            Some("second") => Ok(Some(Side::Second)),
            Some(other) => Err(PyValueError::new_err(format!("vote must be 'first', 'second' or None, got {other:?}"))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    let (winner, _) = judge::tally_votes(&sides).map_err(err)?;
    Ok(winner.map(|s| match s {
        Side::First => "first",
        Side::Second => "second",
    }))
}

#[pyfunction]
fn wilson_interval(successes: f64, n: usize) -> (f64, f64) {
    longpref::eval::wilson_interval(successes, n)
}

/// Seeded shuffle-and-cut into `(train, dev, test)`.
#[pyfunction]
fn split(items: Vec<String>, train_n: usize, dev_n: usize, test_n: usize, seed: u64) -> PyResult<(Vec<String>, Vec<String>, Vec<String>)> {
    let s = split_dataset(&items, SplitSpec { train_n, dev_n, test_n, seed }).map_err(err)?;
    Ok((s.train, s.dev, s.test))
}

fn step_samples(logp_old: &[f64], logp_new: &[f64], advantages: &[f64]) -> PyResult<Vec<StepSample>> {
    if logp_old.len() != logp_new.len() || logp_old.len() != advantages.len() {
        return Err(PyValueError::new_err("logp_old, logp_new and advantages must have equal length"));
    }
    Ok((0..logp_old.len())
        .map(|i| StepSample { state_id: 0, action_id: i, logp_old: logp_old[i], logp_new: logp_new[i], advantage: advantages[i] })
        .collect())
}

/// Clipped surrogate and its gradient with respect to each `logp_new`.
#[pyfunction]
#[pyo3(signature = (logp_old, logp_new, advantages, eps_low=0.2, eps_high=0.2))]
fn clipped_objective(
    logp_old: Vec<f64>,
    logp_new: Vec<f64>,
    advantages: Vec<f64>,
    eps_low: f64,
    eps_high: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let samples = step_samples(&logp_old, &logp_new, &advantages)?;
    let cfg = ClipConfig { eps_low, eps_high };
    let value = policy::clipped_objective(&samples, &cfg).map_err(err)?;
    let grad = policy::clipped_objective_grad(&samples, &cfg).map_err(err)?;
    Ok((value, grad))
}

#[pyfunction]
fn bt_pair_loss(delta: f64) -> f64 {
    reward::pair_loss(delta)
}

#[pyfunction]
fn derive_seed(seed: u64, labels: Vec<String>) -> u64 {
    let labels: Vec<longpref::rng::Label<'_>> = labels.iter().map(|l| l.as_str().into()).collect();
    longpref::rng::derive_seed(seed, &labels)
}

#[pymodule]
#[pyo3(name = "longpref")]
fn longpref_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LongprefError", m.py().get_type::<LongprefError>())?;
    m.add_class::<PyTriplet>()?;
    m.add_class::<PyFeaturizer>()?;
    m.add_class::<PyBtScorer>()?;
    m.add_function(wrap_pyfunction!(read_triplets, m)?)?;
    m.add_function(wrap_pyfunction!(write_triplets, m)?)?;
    m.add_function(wrap_pyfunction!(bt_scorer_from_weights, m)?)?;
    m.add_function(wrap_pyfunction!(parse_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(majority, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_objective, m)?)?;
    m.add_function(wrap_pyfunction!(bt_pair_loss, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}

//! Python bindings for the curation pipeline: the pure classification and
//! parsing operations, the catalog/profile types, and the stage runners.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stat_core::backends;
use stat_core::corpus;
use stat_core::curation_synth;
use stat_core::pipeline;
use stat_core::reward_filter;
use stat_core::skill_profile;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Split a response into steps at blank-line boundaries.
#[pyfunction]
fn segment_steps(response_text: &str) -> PyResult<Vec<String>> {
    corpus::segment_steps(response_text).map_err(value_err)
}

/// Contents of the last `\boxed{...}` marker, whitespace-normalized.
#[pyfunction]
fn extract_final_answer(solution_text: &str) -> Option<String> {
    corpus::extract_final_answer(solution_text)
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    corpus::normalize_answer(text)
}

#[pyfunction]
fn canonical_skill(text: &str) -> String {
    corpus::canonical_skill(text)
}

fn prm_config(tau1: f64, tau2: f64) -> reward_filter::FilterConfig {
    reward_filter::FilterConfig {
        mode: reward_filter::FilterMode::PrmThreshold,
        tau1,
        tau2,
        ..reward_filter::FilterConfig::default()
    }
}

/// Step-reward difficulty predicate. Returns true when the trace is
/// classified difficult.
#[pyfunction]
#[pyo3(signature = (step_rewards, tau1=0.85, tau2=0.7))]
fn classify_trace(step_rewards: Vec<f64>, tau1: f64, tau2: f64) -> PyResult<bool> {
    reward_filter::classify_trace(&step_rewards, &prm_config(tau1, tau2))
        .map(|label| label.is_difficult())
        .map_err(value_err)
}

/// Outcome-reward variant: only the final step's score is consulted.
#[pyfunction]
#[pyo3(signature = (step_rewards, orm_tau=0.9))]
fn classify_orm(step_rewards: Vec<f64>, orm_tau: f64) -> PyResult<bool> {
    let config = reward_filter::FilterConfig {
        mode: reward_filter::FilterMode::OrmThreshold,
        orm_tau,
        ..reward_filter::FilterConfig::default()
    };
    reward_filter::classify_orm(&step_rewards, &config)
        .map(|label| label.is_difficult())
        .map_err(value_err)
}

/// Consistency heuristic over sampled final answers (None allowed).
#[pyfunction]
#[pyo3(signature = (final_answers, min_count=2))]
fn classify_consistency(final_answers: Vec<Option<String>>, min_count: usize) -> PyResult<bool> {
    let config = reward_filter::FilterConfig {
        mode: reward_filter::FilterMode::ConsistencyHeuristic,
        consistency_min_count: min_count,
        consistency_samples: final_answers.len(),
        ..reward_filter::FilterConfig::default()
    };
    reward_filter::classify_consistency(&final_answers, &config)
        .map(|label| label.is_difficult())
        .map_err(value_err)
}

/// Confusion-matrix metrics with difficult as the positive class.
#[pyfunction]
fn classification_metrics(
    predicted_difficult: Vec<String>,
    ground_truth_incorrect: Vec<String>,
    universe: Vec<String>,
) -> PyResult<BTreeMap<String, f64>> {
    let predicted: BTreeSet<String> = predicted_difficult.into_iter().collect();
    let truth: BTreeSet<String> = ground_truth_incorrect.into_iter().collect();
    let universe: BTreeSet<String> = universe.into_iter().collect();
    let m = reward_filter::classification_metrics(&predicted, &truth, &universe)
        .map_err(value_err)?;
    Ok(BTreeMap::from([
        ("accuracy".to_string(), m.accuracy),
        ("precision".to_string(), m.precision),
        ("recall".to_string(), m.recall),
        ("f1".to_string(), m.f1),
        ("tp".to_string(), m.confusion.true_positives as f64),
        ("fp".to_string(), m.confusion.false_positives as f64),
        ("fn".to_string(), m.confusion.false_negatives as f64),
        ("tn".to_string(), m.confusion.true_negatives as f64),
    ]))
}

/// Majority-agreement score over candidate solutions:
/// (score, majority_answer, kept_indices).
#[pyfunction]
fn score_consistency(solutions: Vec<String>) -> (usize, Option<String>, Vec<usize>) {
    let result = curation_synth::score_consistency(&solutions);
    (result.score, result.majority_answer, result.kept_indices)
}

/// Extract `<tag>...</tag>` contents for every expected tag.
#[pyfunction]
fn parse_tagged(raw: &str, expected_tags: Vec<String>) -> PyResult<BTreeMap<String, Vec<String>>> {
    let tags: Vec<&str> = expected_tags.iter().map(|s| s.as_str()).collect();
    backends::parse_tagged(raw, &tags)
        .map(|out| out.tags)
        .map_err(value_err)
}

/// The fixed per-subject skill catalog.
#[pyclass(name = "SkillCatalog")]
struct PySkillCatalog {
    inner: skill_profile::SkillCatalog,
}

#[pymethods]
impl PySkillCatalog {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySkillCatalog {
            inner: skill_profile::SkillCatalog::load(&path).map_err(value_err)?,
        })
    }

    fn skills_for(&self, subject: &str) -> PyResult<Vec<String>> {
        let subject = parse_subject(subject)?;
        Ok(self
            .inner
            .skills_for(subject)
            .map(|s| s.to_vec())
            .unwrap_or_default())
    }

    fn contains(&self, subject: &str, skill: &str) -> PyResult<bool> {
        Ok(self.inner.contains(parse_subject(subject)?, skill))
    }

    fn total(&self) -> usize {
        self.inner.total()
    }
}

fn parse_subject(name: &str) -> PyResult<corpus::Subject> {
    corpus::Subject::ALL
        .into_iter()
        .find(|s| s.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown subject {name:?}")))
}

/// Per-student mapping from difficult question id to missing skills.
#[pyclass(name = "MissingSkillProfile")]
struct PyMissingSkillProfile {
    inner: corpus::MissingSkillProfile,
}

#[pymethods]
impl PyMissingSkillProfile {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMissingSkillProfile {
            inner: corpus::MissingSkillProfile::load(&path).map_err(value_err)?,
        })
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.model_id.clone()
    }

    fn question_ids(&self) -> Vec<String> {
        self.inner.question_ids().into_iter().collect()
    }

    fn skills(&self, question_id: &str) -> Option<Vec<String>> {
        self.inner.get(question_id).cloned()
    }

    fn top_k(&self, k: usize) -> Vec<(String, usize)> {
        skill_profile::top_k_missing(&self.inner, k)
    }

    /// Average fraction of this profile's skills the other also predicts.
    fn agreement(&self, other: &PyMissingSkillProfile) -> PyResult<f64> {
        skill_profile::profile_agreement(&self.inner, &other.inner).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Run Stage 1 for a pipeline config file; returns summary counts.
#[pyfunction]
fn run_stage1(config_path: PathBuf) -> PyResult<BTreeMap<String, usize>> {
    let config = pipeline::PipelineConfig::load(&config_path).map_err(runtime_err)?;
    let partition = pipeline::run_stage1(&config).map_err(runtime_err)?;
    Ok(BTreeMap::from([
        ("difficult_val".to_string(), partition.difficult_val.len()),
        ("difficult_test".to_string(), partition.difficult_test.len()),
        ("easy".to_string(), partition.easy.len()),
    ]))
}

/// Run Stage 2 against the persisted Stage 1 partition; returns the number
/// of profile entries.
#[pyfunction]
fn run_stage2(config_path: PathBuf) -> PyResult<usize> {
    let config = pipeline::PipelineConfig::load(&config_path).map_err(runtime_err)?;
    let partition_path = config.run.output_dir.join("partition.json");
    let partition = reward_filter::DifficultPartition::load(&partition_path)
        .map_err(|_| PyRuntimeError::new_err("partition.json missing; run stage1 first"))?;
    let profile = pipeline::run_stage2(&config, &partition).map_err(runtime_err)?;
    Ok(profile.len())
}

/// Run Stage 3 with the given constructor; returns manifest-style counts.
#[pyfunction]
fn run_stage3(config_path: PathBuf, method: &str) -> PyResult<BTreeMap<String, u64>> {
    let config = pipeline::PipelineConfig::load(&config_path).map_err(runtime_err)?;
    let method = corpus::SourceMethod::parse(method)
        .ok_or_else(|| PyValueError::new_err(format!("unknown method {method:?}")))?;
    let (_, manifest) = pipeline::run_stage3(&config, method).map_err(runtime_err)?;
    Ok(manifest.counts)
}

#[pymodule]
fn stat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(segment_steps, m)?)?;
    m.add_function(wrap_pyfunction!(extract_final_answer, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_skill, m)?)?;
    m.add_function(wrap_pyfunction!(classify_trace, m)?)?;
    m.add_function(wrap_pyfunction!(classify_orm, m)?)?;
    m.add_function(wrap_pyfunction!(classify_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(score_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(parse_tagged, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage1, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage2, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage3, m)?)?;
    m.add_class::<PySkillCatalog>()?;
    m.add_class::<PyMissingSkillProfile>()?;
    Ok(())
}

//! Difficulty classification from step-level reward traces, with outcome,
//! consistency, and length alternatives, plus classification-quality metrics
//! and the threshold ablation grid.
//!
//! The step-reward predicate marks a question difficult when the final step
//! has low reward, the mean reward across all steps is low, or any earlier
//! step has low reward. Comparisons are `<=` against the thresholds; a
//! threshold of zero removes its clause entirely, so strictly positive
//! rewards never trigger it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_answer, Corpus, Split, Subject, TraceSet};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("empty reward list")]
    EmptyRewards,
    #[error("reward {0} outside [0,1]")]
    RewardOutOfRange(f64),
    #[error("expected {expected} sampled answers, got {got}")]
    WrongSampleCount { expected: usize, got: usize },
    #[error("no traces supplied")]
    EmptyTraces,
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("questions missing required inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),
    #[error("questions missing gold answers: {}", .0.join(", "))]
    MissingGroundTruth(Vec<String>),
    #[error("{0} is not a subset of the universe")]
    NotSubset(String),
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("no shared questions between profiles")]
    NoSharedQuestions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    PrmThreshold,
    OrmThreshold,
    ConsistencyHeuristic,
    LengthHeuristic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub tau1: f64,
    pub tau2: f64,
    pub orm_tau: f64,
    pub consistency_min_count: usize,
    pub consistency_samples: usize,
    pub length_threshold_words: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            mode: FilterMode::PrmThreshold,
            tau1: 0.85,
            tau2: 0.7,
            orm_tau: 0.9,
            consistency_min_count: 2,
            consistency_samples: 5,
            length_threshold_words: 800,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, value) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("orm_tau", self.orm_tau),
        ] {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(FilterError::InvalidConfig(format!(
                    "{name}={value} outside [0,1]"
                )));
            }
        }
        if self.consistency_min_count == 0 || self.consistency_samples == 0 {
            return Err(FilterError::InvalidConfig(
                "consistency counts must be positive".into(),
            ));
        }
        if self.consistency_min_count > self.consistency_samples {
            return Err(FilterError::InvalidConfig(
                "consistency_min_count exceeds consistency_samples".into(),
            ));
        }
        if self.length_threshold_words == 0 {
            return Err(FilterError::InvalidConfig(
                "length_threshold_words must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Difficult,
    NotDifficult,
}

impl Label {
    pub fn is_difficult(self) -> bool {
        self == Label::Difficult
    }
}

fn check_rewards(step_rewards: &[f64]) -> Result<(), FilterError> {
    if step_rewards.is_empty() {
        return Err(FilterError::EmptyRewards);
    }
    for &r in step_rewards {
        if !(0.0..=1.0).contains(&r) || !r.is_finite() {
            return Err(FilterError::RewardOutOfRange(r));
        }
    }
    Ok(())
}

/// Step-reward difficulty predicate: difficult when the final reward or the
/// mean reward is at most `tau1`, or any non-final reward is at most `tau2`.
/// A zero threshold removes the corresponding clause.
pub fn classify_trace(step_rewards: &[f64], config: &FilterConfig) -> Result<Label, FilterError> {
    check_rewards(step_rewards)?;
    let t = step_rewards.len();
    let last = step_rewards[t - 1];
    let mean = step_rewards.iter().sum::<f64>() / t as f64;
    let low_final = config.tau1 > 0.0 && last <= config.tau1;
    let low_mean = config.tau1 > 0.0 && mean <= config.tau1;
    let low_step = config.tau2 > 0.0
        && step_rewards[..t - 1].iter().any(|&r| r <= config.tau2);
    Ok(if low_final || low_mean || low_step {
        Label::Difficult
    } else {
        Label::NotDifficult
    })
}

/// Outcome-reward variant: only the final step's score is consulted.
pub fn classify_orm(step_rewards: &[f64], config: &FilterConfig) -> Result<Label, FilterError> {
    check_rewards(step_rewards)?;
    let last = step_rewards[step_rewards.len() - 1];
    Ok(if config.orm_tau > 0.0 && last <= config.orm_tau {
        Label::Difficult
    } else {
        Label::NotDifficult
    })
}

/// Consistency heuristic: difficult when the modal final answer across the
/// sampled generations appears fewer than `consistency_min_count` times.
/// Absent answers never match each other.
pub fn classify_consistency(
    final_answers: &[Option<String>],
    config: &FilterConfig,
) -> Result<Label, FilterError> {
    if final_answers.len() != config.consistency_samples {
        return Err(FilterError::WrongSampleCount {
            expected: config.consistency_samples,
            got: final_answers.len(),
        });
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for answer in final_answers.iter().flatten() {
        *counts.entry(normalize_answer(answer)).or_default() += 1;
    }
    let mode_count = counts.values().copied().max().unwrap_or(0);
    Ok(if mode_count < config.consistency_min_count {
        Label::Difficult
    } else {
        Label::NotDifficult
    })
}

/// Length heuristic: difficult when the mean whitespace-delimited word count
/// across the question's traces is at least the threshold.
pub fn classify_length(
    traces: &[&crate::corpus::ResponseTrace],
    config: &FilterConfig,
) -> Result<Label, FilterError> {
    if traces.is_empty() {
        return Err(FilterError::EmptyTraces);
    }
    let mean = traces.iter().map(|t| t.length_words() as f64).sum::<f64>() / traces.len() as f64;
    Ok(if mean >= config.length_threshold_words as f64 {
        Label::Difficult
    } else {
        Label::NotDifficult
    })
}

/// The outcome of Stage 1: difficult/easy membership per split plus the
/// per-subject difficult proportion over val and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultPartition {
    pub difficult_val: BTreeSet<String>,
    pub difficult_test: BTreeSet<String>,
    pub easy: BTreeSet<String>,
    pub per_subject_proportion: BTreeMap<Subject, f64>,
}

impl DifficultPartition {
    pub fn difficult(&self) -> BTreeSet<String> {
        self.difficult_val
            .union(&self.difficult_test)
            .cloned()
            .collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::corpus::CorpusError> {
        let body = serde_json::to_string_pretty(self).expect("partition serialization");
        crate::corpus::write_atomic(path, format!("{body}\n").as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::corpus::CorpusError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| crate::corpus::CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
        serde_json::from_str(&text).map_err(|source| crate::corpus::CorpusError::MalformedLine {
            path: path.display().to_string(),
            line: 0,
            source,
        })
    }
}

/// Classify every val/test question with the configured mode and intersect
/// the difficult set with the splits.
pub fn partition(
    corpus: &Corpus,
    traces: &TraceSet,
    config: &FilterConfig,
) -> Result<DifficultPartition, FilterError> {
    config.validate()?;
    let mut eligible: Vec<&crate::corpus::Question> = corpus
        .iter()
        .filter(|q| q.split == Split::Val || q.split == Split::Test)
        .collect();
    eligible.sort_by(|a, b| a.id.cmp(&b.id));

    let mut missing = Vec::new();
    let mut labels: BTreeMap<&str, Label> = BTreeMap::new();
    for q in &eligible {
        let qt = traces.for_question(&q.id);
        let label = match config.mode {
            FilterMode::PrmThreshold | FilterMode::OrmThreshold => {
                match qt.first().and_then(|t| t.step_rewards.as_deref()) {
                    Some(rewards) => {
                        if config.mode == FilterMode::PrmThreshold {
                            classify_trace(rewards, config)?
                        } else {
                            classify_orm(rewards, config)?
                        }
                    }
                    None => {
                        missing.push(q.id.clone());
                        continue;
                    }
                }
            }
            FilterMode::ConsistencyHeuristic => {
                if qt.len() < config.consistency_samples {
                    missing.push(q.id.clone());
                    continue;
                }
                let answers: Vec<Option<String>> = qt[..config.consistency_samples]
                    .iter()
                    .map(|t| t.effective_final_answer())
                    .collect();
                classify_consistency(&answers, config)?
            }
            FilterMode::LengthHeuristic => {
                if qt.is_empty() {
                    missing.push(q.id.clone());
                    continue;
                }
                classify_length(&qt, config)?
            }
        };
        labels.insert(&q.id, label);
    }
    if !missing.is_empty() {
        return Err(FilterError::MissingInputs(missing));
    }

    let mut result = DifficultPartition {
        difficult_val: BTreeSet::new(),
        difficult_test: BTreeSet::new(),
        easy: BTreeSet::new(),
        per_subject_proportion: BTreeMap::new(),
    };
    let mut subject_totals: BTreeMap<Subject, (usize, usize)> = BTreeMap::new();
    for q in &eligible {
        let difficult = labels[q.id.as_str()].is_difficult();
        let entry = subject_totals.entry(q.subject).or_default();
        entry.0 += 1;
        if difficult {
            entry.1 += 1;
            match q.split {
                Split::Val => result.difficult_val.insert(q.id.clone()),
                _ => result.difficult_test.insert(q.id.clone()),
            };
        } else {
            result.easy.insert(q.id.clone());
        }
    }
    for (subject, (total, difficult)) in subject_totals {
        result
            .per_subject_proportion
            .insert(subject, difficult as f64 / total as f64);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Standard confusion-matrix metrics with difficult as the positive class.
/// Precision and recall are zero when their denominators are zero.
pub fn classification_metrics(
    predicted_difficult: &BTreeSet<String>,
    ground_truth_incorrect: &BTreeSet<String>,
    universe: &BTreeSet<String>,
) -> Result<ClassificationMetrics, FilterError> {
    if !predicted_difficult.is_subset(universe) {
        return Err(FilterError::NotSubset("predicted set".into()));
    }
    if !ground_truth_incorrect.is_subset(universe) {
        return Err(FilterError::NotSubset("ground truth set".into()));
    }
    let mut confusion = Confusion::default();
    for id in universe {
        match (
            predicted_difficult.contains(id),
            ground_truth_incorrect.contains(id),
        ) {
            (true, true) => confusion.true_positives += 1,
            (true, false) => confusion.false_positives += 1,
            (false, true) => confusion.false_negatives += 1,
            (false, false) => confusion.true_negatives += 1,
        }
    }
    let n = universe.len() as f64;
    let tp = confusion.true_positives as f64;
    let fp = confusion.false_positives as f64;
    let fn_ = confusion.false_negatives as f64;
    let tn = confusion.true_negatives as f64;
    let accuracy = if n > 0.0 { (tp + tn) / n } else { 0.0 };
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
        confusion,
    })
}

/// Questions in val/test whose normalized final answer disagrees with the
/// gold answer (or that have no extractable answer). Questions lacking a
/// gold answer or a trace are an error.
pub fn ground_truth_incorrect(
    corpus: &Corpus,
    traces: &TraceSet,
) -> Result<BTreeSet<String>, FilterError> {
    let mut incorrect = BTreeSet::new();
    let mut missing = Vec::new();
    for q in corpus.iter() {
        if q.split == Split::Train {
            continue;
        }
        let gold = match &q.gold_answer {
            Some(g) => normalize_answer(g),
            None => {
                missing.push(q.id.clone());
                continue;
            }
        };
        let answer = match traces.primary(&q.id) {
            Some(t) => t.effective_final_answer(),
            None => {
                missing.push(q.id.clone());
                continue;
            }
        };
        if answer.as_deref() != Some(gold.as_str()) {
            incorrect.insert(q.id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(FilterError::MissingGroundTruth(missing));
    }
    Ok(incorrect)
}

#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub tau1: f64,
    pub tau2: f64,
    pub metrics: ClassificationMetrics,
    pub n_difficult: usize,
}

/// Evaluate the step-reward classifier over every (tau1, tau2) combination.
pub fn threshold_grid(
    corpus: &Corpus,
    traces: &TraceSet,
    truth: &BTreeSet<String>,
    tau1_values: &[f64],
    tau2_values: &[f64],
) -> Result<Vec<GridCell>, FilterError> {
    if tau1_values.is_empty() || tau2_values.is_empty() {
        return Err(FilterError::EmptyGrid);
    }
    let universe: BTreeSet<String> = corpus
        .iter()
        .filter(|q| q.split != Split::Train)
        .map(|q| q.id.clone())
        .collect();
    let mut cells = Vec::with_capacity(tau1_values.len() * tau2_values.len());
    for &tau1 in tau1_values {
        for &tau2 in tau2_values {
            let config = FilterConfig {
                mode: FilterMode::PrmThreshold,
                tau1,
                tau2,
                ..FilterConfig::default()
            };
            let part = partition(corpus, traces, &config)?;
            let predicted = part.difficult();
            let metrics = classification_metrics(&predicted, truth, &universe)?;
            cells.push(GridCell {
                tau1,
                tau2,
                metrics,
                n_difficult: predicted.len(),
            });
        }
    }
    Ok(cells)
}

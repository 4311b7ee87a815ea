//! Canonical data model for questions, response traces, skills, and curated
//! datasets, plus line-delimited (JSONL) ingestion and emission.
//!
//! Every record file is UTF-8 with one JSON object per line. Emission is
//! deterministic: equal in-memory values serialize to byte-identical files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at {path}:{line}: {source}")]
    MalformedLine {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("empty question text for id {0}")]
    EmptyText(String),
    #[error("level {level} out of range for id {id}")]
    LevelOutOfRange { id: String, level: i64 },
    #[error("empty response text")]
    EmptyResponse,
    #[error("trace for {question_id}: steps must be non-empty")]
    EmptySteps { question_id: String },
    #[error("trace for {question_id}: {rewards} step rewards for {steps} steps")]
    RewardLengthMismatch {
        question_id: String,
        rewards: usize,
        steps: usize,
    },
    #[error("trace for {question_id}: step reward {value} outside [0,1]")]
    RewardOutOfRange { question_id: String, value: f64 },
    #[error("unknown question id {0}")]
    UnknownQuestion(String),
    #[error("dataset contains duplicate pair for question text {0:?}")]
    DuplicatePair(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// The seven MATH subjects, plus a catch-all for anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Algebra,
    CountingAndProbability,
    Geometry,
    IntermediateAlgebra,
    NumberTheory,
    Prealgebra,
    Precalculus,
    Other,
}

impl Subject {
    pub const ALL: [Subject; 8] = [
        Subject::Algebra,
        Subject::CountingAndProbability,
        Subject::Geometry,
        Subject::IntermediateAlgebra,
        Subject::NumberTheory,
        Subject::Prealgebra,
        Subject::Precalculus,
        Subject::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Subject::Algebra => "algebra",
            Subject::CountingAndProbability => "counting_and_probability",
            Subject::Geometry => "geometry",
            Subject::IntermediateAlgebra => "intermediate_algebra",
            Subject::NumberTheory => "number_theory",
            Subject::Prealgebra => "prealgebra",
            Subject::Precalculus => "precalculus",
            Subject::Other => "other",
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A task instance: one problem with its metadata and optional gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub subject: Subject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

/// Raw on-disk question record; `split` may be absent and is then assigned
/// by the seeded val/test partition at load time.
#[derive(Debug, Deserialize)]
struct QuestionRecord {
    id: String,
    text: String,
    subject: Subject,
    #[serde(default)]
    level: Option<i64>,
    #[serde(default)]
    split: Option<Split>,
    #[serde(default)]
    gold_answer: Option<String>,
}

/// How unassigned questions are partitioned into val/test.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

/// An in-memory set of questions indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    questions: Vec<Question>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(questions: Vec<Question>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if q.text.is_empty() {
                return Err(CorpusError::EmptyText(q.id.clone()));
            }
            if let Some(level) = q.level {
                if !(1..=5).contains(&level) {
                    return Err(CorpusError::LevelOutOfRange {
                        id: q.id.clone(),
                        level: level as i64,
                    });
                }
            }
            if by_id.insert(q.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(q.id.clone()));
            }
        }
        Ok(Corpus { questions, by_id })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.by_id.get(id).map(|&i| &self.questions[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Question> {
        self.questions.iter()
    }

    /// Questions in a split, ordered by id.
    pub fn in_split(&self, split: Split) -> Vec<&Question> {
        let mut qs: Vec<&Question> = self.questions.iter().filter(|q| q.split == split).collect();
        qs.sort_by(|a, b| a.id.cmp(&b.id));
        qs
    }

    pub fn ids_in_split(&self, split: Split) -> BTreeSet<String> {
        self.questions
            .iter()
            .filter(|q| q.split == split)
            .map(|q| q.id.clone())
            .collect()
    }
}

/// Load a question corpus from a JSONL file, assigning val/test membership
/// to records without an explicit split via a seeded shuffle of their ids.
pub fn load_corpus(path: &Path, split: &SplitConfig) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                source,
            })?;
        records.push(record);
    }

    // Unassigned records form the test pool; a seeded shuffle carves out val.
    let mut pool_ids: Vec<String> = records
        .iter()
        .filter(|r| r.split.is_none())
        .map(|r| r.id.clone())
        .collect();
    pool_ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    pool_ids.shuffle(&mut rng);
    let n_val = (pool_ids.len() as f64 * split.val_fraction).round() as usize;
    let val_ids: BTreeSet<&String> = pool_ids.iter().take(n_val).collect();

    let mut questions = Vec::with_capacity(records.len());
    for record in &records {
        let level = match record.level {
            Some(l) if (1..=5).contains(&l) => Some(l as u8),
            Some(l) => {
                return Err(CorpusError::LevelOutOfRange {
                    id: record.id.clone(),
                    level: l,
                })
            }
            None => None,
        };
        let split = record.split.unwrap_or(if val_ids.contains(&record.id) {
            Split::Val
        } else {
            Split::Test
        });
        questions.push(Question {
            id: record.id.clone(),
            text: record.text.clone(),
            subject: record.subject,
            level,
            split,
            gold_answer: record.gold_answer.as_deref().map(normalize_answer),
        });
    }
    Corpus::new(questions)
}

/// Write a corpus as JSONL with splits resolved. Byte-stable given equal
/// input; questions keep their load order.
pub fn emit_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for q in corpus.iter() {
        serde_json::to_writer(&mut buf, q).expect("question serialization cannot fail");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// A student model's stepwise answer to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub question_id: String,
    pub model_id: String,
    pub steps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_rewards: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
}

impl ResponseTrace {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.steps.is_empty() || self.steps.iter().any(|s| s.trim().is_empty()) {
            return Err(CorpusError::EmptySteps {
                question_id: self.question_id.clone(),
            });
        }
        if let Some(rewards) = &self.step_rewards {
            if rewards.len() != self.steps.len() {
                return Err(CorpusError::RewardLengthMismatch {
                    question_id: self.question_id.clone(),
                    rewards: rewards.len(),
                    steps: self.steps.len(),
                });
            }
            for &r in rewards {
                if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                    return Err(CorpusError::RewardOutOfRange {
                        question_id: self.question_id.clone(),
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }

    /// Full response body: steps joined with the step delimiter.
    pub fn full_text(&self) -> String {
        self.steps.join("\n\n")
    }

    /// Whitespace-delimited word count of the full response.
    pub fn length_words(&self) -> usize {
        self.steps.iter().map(|s| s.split_whitespace().count()).sum()
    }

    /// The stored final answer, or one extracted from the response body.
    pub fn effective_final_answer(&self) -> Option<String> {
        match &self.final_answer {
            Some(a) => Some(normalize_answer(a)),
            None => extract_final_answer(&self.full_text()),
        }
    }
}

/// Raw on-disk trace record; `response_text` may substitute for pre-segmented
/// steps, in which case the blank-line splitter applies.
#[derive(Debug, Deserialize)]
struct TraceRecord {
    question_id: String,
    model_id: String,
    #[serde(default)]
    steps: Option<Vec<String>>,
    #[serde(default)]
    response_text: Option<String>,
    #[serde(default)]
    step_rewards: Option<Vec<f64>>,
    #[serde(default)]
    final_answer: Option<String>,
}

/// Traces grouped per question, in stable (model_id, file order) order.
#[derive(Debug, Clone, Default)]
pub struct TraceSet {
    traces: Vec<ResponseTrace>,
    by_question: HashMap<String, Vec<usize>>,
}

impl TraceSet {
    pub fn new(traces: Vec<ResponseTrace>) -> Result<Self, CorpusError> {
        for t in &traces {
            t.validate()?;
        }
        let mut order: Vec<usize> = (0..traces.len()).collect();
        // Content-based ordering keeps per-question trace selection invariant
        // to the input ordering of the trace file.
        order.sort_by(|&a, &b| {
            (&traces[a].question_id, &traces[a].model_id, &traces[a].steps).cmp(&(
                &traces[b].question_id,
                &traces[b].model_id,
                &traces[b].steps,
            ))
        });
        let mut by_question: HashMap<String, Vec<usize>> = HashMap::new();
        for idx in order {
            by_question
                .entry(traces[idx].question_id.clone())
                .or_default()
                .push(idx);
        }
        Ok(TraceSet { traces, by_question })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// All traces for a question in stable order.
    pub fn for_question(&self, id: &str) -> Vec<&ResponseTrace> {
        self.by_question
            .get(id)
            .map(|idxs| idxs.iter().map(|&i| &self.traces[i]).collect())
            .unwrap_or_default()
    }

    /// The question's first trace by stable (model_id, file order) ordering.
    pub fn primary(&self, id: &str) -> Option<&ResponseTrace> {
        self.by_question.get(id).map(|idxs| &self.traces[idxs[0]])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResponseTrace> {
        self.traces.iter()
    }
}

pub fn load_traces(path: &Path) -> Result<TraceSet, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut traces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                source,
            })?;
        let steps = match (record.steps, record.response_text) {
            (Some(steps), _) => steps,
            (None, Some(text)) => segment_steps(&text)?,
            (None, None) => {
                return Err(CorpusError::EmptySteps {
                    question_id: record.question_id,
                })
            }
        };
        traces.push(ResponseTrace {
            question_id: record.question_id,
            model_id: record.model_id,
            steps,
            step_rewards: record.step_rewards,
            final_answer: record.final_answer,
        });
    }
    TraceSet::new(traces)
}

/// Split a response into steps at blank-line boundaries. A text with no
/// blank line is a single step; joining the steps with `"\n\n"` reproduces
/// the input modulo trailing whitespace.
pub fn segment_steps(response_text: &str) -> Result<Vec<String>, CorpusError> {
    let trimmed = response_text.trim_end();
    if trimmed.trim().is_empty() {
        return Err(CorpusError::EmptyResponse);
    }
    let steps: Vec<String> = trimmed
        .split("\n\n")
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.to_string())
        .collect();
    Ok(steps)
}

/// Trim outer whitespace and collapse internal whitespace runs to one space.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical skill-name form: lowercase, whitespace and hyphens mapped to
/// single underscores.
pub fn canonical_skill(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut prev_sep = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() || ch == '-' || ch == '_' {
            if !prev_sep && !out.is_empty() {
                out.push('_');
            }
            prev_sep = true;
        } else {
            out.push(ch);
            prev_sep = false;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

/// Extract the contents of the last `\boxed{...}` marker with balanced-brace
/// matching, whitespace-normalized. Returns `None` when the marker is absent
/// or its braces never balance.
pub fn extract_final_answer(solution_text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let start = solution_text.rfind(MARKER)?;
    let body = &solution_text[start + MARKER.len()..];
    let mut depth = 1usize;
    let mut escaped = false;
    for (i, ch) in body.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match ch {
            '\\' => escaped = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(normalize_answer(&body[..i]));
                }
            }
            _ => {}
        }
    }
    None
}

/// Where a curated pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented,
    Selected,
    Synthetic,
}

/// Which construction recipe produced a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMethod {
    MathTrain,
    MathAugment,
    MathHard,
    EmbedSel,
    EmbedSyn,
    StatSel,
    StatSyn,
}

impl SourceMethod {
    pub const ALL: [SourceMethod; 7] = [
        SourceMethod::MathTrain,
        SourceMethod::MathAugment,
        SourceMethod::MathHard,
        SourceMethod::EmbedSel,
        SourceMethod::EmbedSyn,
        SourceMethod::StatSel,
        SourceMethod::StatSyn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceMethod::MathTrain => "math_train",
            SourceMethod::MathAugment => "math_augment",
            SourceMethod::MathHard => "math_hard",
            SourceMethod::EmbedSel => "embed_sel",
            SourceMethod::EmbedSyn => "embed_syn",
            SourceMethod::StatSel => "stat_sel",
            SourceMethod::StatSyn => "stat_syn",
        }
    }

    pub fn parse(s: &str) -> Option<SourceMethod> {
        SourceMethod::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for SourceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One question–answer training pair with provenance and skill tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question_text: String,
    pub answer_text: String,
    pub provenance: Provenance,
    pub skills: Vec<String>,
    pub source_method: SourceMethod,
}

/// An ordered collection of training pairs, free of duplicate
/// (question_text, answer_text) combinations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurationDataset {
    pub pairs: Vec<QaPair>,
}

impl CurationDataset {
    pub fn new(pairs: Vec<QaPair>) -> Result<Self, CorpusError> {
        let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
        for p in &pairs {
            if !seen.insert((p.question_text.as_str(), p.answer_text.as_str())) {
                return Err(CorpusError::DuplicatePair(preview(&p.question_text)));
            }
        }
        Ok(CurationDataset { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn unique_question_count(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| p.question_text.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

fn preview(s: &str) -> String {
    let mut out: String = s.chars().take(40).collect();
    if s.chars().count() > 40 {
        out.push('…');
    }
    out
}

/// Write a dataset as JSONL, one pair per line. Byte-stable given equal input.
pub fn emit_dataset(dataset: &CurationDataset, path: &Path) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for pair in &dataset.pairs {
        serde_json::to_writer(&mut buf, pair).expect("pair serialization cannot fail");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<CurationDataset, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QaPair =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                source,
            })?;
        pairs.push(pair);
    }
    CurationDataset::new(pairs)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    let mut file = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Inverse index from skill name to the train-question ids requiring it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillMap {
    entries: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SkillMapRecord {
    skill: String,
    question_ids: Vec<String>,
}

impl SkillMap {
    pub fn new() -> Self {
        SkillMap::default()
    }

    pub fn insert(&mut self, skill: &str, question_id: &str) {
        self.entries
            .entry(canonical_skill(skill))
            .or_default()
            .insert(question_id.to_string());
    }

    pub fn questions_for(&self, skill: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(skill)
    }

    /// Skills annotated on a given question (forward lookup).
    pub fn skills_of(&self, question_id: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, ids)| ids.contains(question_id))
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn skills(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut buf = Vec::new();
        for (skill, ids) in &self.entries {
            let record = SkillMapRecord {
                skill: skill.clone(),
                question_ids: ids.iter().cloned().collect(),
            };
            serde_json::to_writer(&mut buf, &record).expect("record serialization cannot fail");
            buf.push(b'\n');
        }
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<SkillMap, CorpusError> {
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut map = SkillMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SkillMapRecord =
                serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    source,
                })?;
            for id in record.question_ids {
                map.insert(&record.skill, &id);
            }
        }
        Ok(map)
    }
}

/// Per-student mapping from difficult validation-question id to the skills
/// missing from the student's response.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingSkillProfile {
    pub model_id: String,
    entries: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRecord {
    question_id: String,
    model_id: String,
    skills: Vec<String>,
}

impl MissingSkillProfile {
    pub fn new(model_id: &str) -> Self {
        MissingSkillProfile {
            model_id: model_id.to_string(),
            entries: BTreeMap::new(),
        }
    }

    /// Record a question's missing skills; empty skill lists are dropped.
    pub fn insert(&mut self, question_id: &str, skills: Vec<String>) {
        if !skills.is_empty() {
            self.entries.insert(question_id.to_string(), skills);
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.entries.iter()
    }

    pub fn get(&self, question_id: &str) -> Option<&Vec<String>> {
        self.entries.get(question_id)
    }

    pub fn question_ids(&self) -> BTreeSet<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of (question, skill) occurrences.
    pub fn skill_occurrences(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut buf = Vec::new();
        for (question_id, skills) in &self.entries {
            let record = ProfileRecord {
                question_id: question_id.clone(),
                model_id: self.model_id.clone(),
                skills: skills.clone(),
            };
            serde_json::to_writer(&mut buf, &record).expect("record serialization cannot fail");
            buf.push(b'\n');
        }
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<MissingSkillProfile, CorpusError> {
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut model_id = String::new();
        let mut entries = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ProfileRecord =
                serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    source,
                })?;
            if model_id.is_empty() {
                model_id = record.model_id.clone();
            }
            entries.insert(record.question_id, record.skills);
        }
        Ok(MissingSkillProfile { model_id, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_valid_file() {
        let f = write_lines(&[
            r#"{"id":"q1","text":"What is 1+1?","subject":"algebra","level":1,"split":"train"}"#,
            r#"{"id":"q2","text":"What is 2+2?","subject":"prealgebra","split":"val"}"#,
            r#"{"id":"q3","text":"What is 3+3?","subject":"other","split":"test","gold_answer":"6"}"#,
        ]);
        let corpus = load_corpus(f.path(), &SplitConfig::default()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.get("q3").unwrap().gold_answer.as_deref(), Some("6"));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let f = write_lines(&[
            r#"{"id":"q1","text":"a","subject":"algebra","split":"train"}"#,
            r#"{"id":"q1","text":"b","subject":"algebra","split":"train"}"#,
        ]);
        let err = load_corpus(f.path(), &SplitConfig::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate id q1"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[
            r#"{"id":"q1","text":"a","subject":"algebra","split":"train"}"#,
            r#"{"id":"q2","text":"#,
        ]);
        let err = load_corpus(f.path(), &SplitConfig::default()).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn seeded_split_partitions_test_pool() {
        let lines: Vec<String> = (0..5000)
            .map(|i| {
                format!(r#"{{"id":"q{i:04}","text":"question {i}","subject":"algebra"}}"#)
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let f = write_lines(&refs);
        let cfg = SplitConfig {
            seed: 0,
            val_fraction: 0.2,
        };
        let corpus = load_corpus(f.path(), &cfg).unwrap();
        let val = corpus.ids_in_split(Split::Val);
        let test = corpus.ids_in_split(Split::Test);
        assert_eq!(val.len(), 1000);
        assert_eq!(test.len(), 4000);
        assert!(val.is_disjoint(&test));

        // Same seed reproduces the same assignment.
        let again = load_corpus(f.path(), &cfg).unwrap();
        assert_eq!(again.ids_in_split(Split::Val), val);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let f = write_lines(&[
            r#"{"id":"a","text":"t","subject":"algebra","split":"train"}"#,
            r#"{"id":"b","text":"t","subject":"algebra"}"#,
            r#"{"id":"c","text":"t","subject":"algebra"}"#,
        ]);
        let corpus = load_corpus(f.path(), &SplitConfig::default()).unwrap();
        let total = corpus.ids_in_split(Split::Train).len()
            + corpus.ids_in_split(Split::Val).len()
            + corpus.ids_in_split(Split::Test).len();
        assert_eq!(total, corpus.len());
    }

    #[test]
    fn segments_on_blank_lines() {
        assert_eq!(
            segment_steps("a\n\nb\n\nc").unwrap(),
            vec!["a".to_string(), "b".to_string(), "c".to_string()]
        );
        assert_eq!(
            segment_steps("single paragraph").unwrap(),
            vec!["single paragraph".to_string()]
        );
        assert!(segment_steps("   \n  ").is_err());
    }

    proptest! {
        #[test]
        fn segment_join_round_trip(parts in prop::collection::vec("[a-z][a-z ]{0,12}[a-z]", 1..8)) {
            let text = parts.join("\n\n");
            let steps = segment_steps(&text).unwrap();
            prop_assert_eq!(steps.join("\n\n"), text.trim_end().to_string());
        }
    }

    #[test]
    fn extracts_last_boxed_answer() {
        assert_eq!(
            extract_final_answer("so a/c = 5/-1 = \\boxed{-5}.").as_deref(),
            Some("-5")
        );
        assert_eq!(
            extract_final_answer("Solving for b, we get b=\\boxed{-38}.").as_deref(),
            Some("-38")
        );
        assert_eq!(extract_final_answer("no boxed answer here"), None);
        // Nested braces balance; the last marker wins.
        assert_eq!(
            extract_final_answer("\\boxed{1} then \\boxed{\\frac{a}{b}}").as_deref(),
            Some("\\frac{a}{b}")
        );
        // Unbalanced braces after the marker are treated as absent.
        assert_eq!(extract_final_answer("\\boxed{5"), None);
    }

    #[test]
    fn extraction_is_idempotent_on_rewrapped_output() {
        for text in ["x = \\boxed{ 12   y }", "\\boxed{\\text{(E)},}"] {
            let first = extract_final_answer(text).unwrap();
            let rewrapped = format!("\\boxed{{{first}}}");
            assert_eq!(extract_final_answer(&rewrapped).unwrap(), first);
        }
    }

    #[test]
    fn normalizes_answers() {
        assert_eq!(normalize_answer("  a   b\t c \n"), "a b c");
        assert_eq!(normalize_answer("5"), "5");
    }

    #[test]
    fn canonicalizes_skills() {
        assert_eq!(canonical_skill("Modular Arithmetic"), "modular_arithmetic");
        assert_eq!(canonical_skill("  solving--equations "), "solving_equations");
        assert_eq!(canonical_skill("number_theory"), "number_theory");
    }

    fn sample_pair(i: usize) -> QaPair {
        QaPair {
            id: format!("p{i}"),
            question_text: format!("question {i}"),
            answer_text: format!("answer {i}"),
            provenance: Provenance::Original,
            skills: vec!["solving_equations".into()],
            source_method: SourceMethod::MathTrain,
        }
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let dataset = CurationDataset::new((0..3).map(sample_pair).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        emit_dataset(&dataset, &p1).unwrap();
        emit_dataset(&dataset, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let loaded = load_dataset(&p1).unwrap();
        assert_eq!(loaded, dataset);
        let text = fs::read_to_string(&p1).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn empty_dataset_emits_empty_file() {
        let dataset = CurationDataset::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        emit_dataset(&dataset, &path).unwrap();
        assert!(fs::read(&path).unwrap().is_empty());
    }

    #[test]
    fn duplicate_pairs_are_rejected() {
        let mut pairs = vec![sample_pair(0), sample_pair(1)];
        pairs.push(pairs[0].clone());
        assert!(CurationDataset::new(pairs).is_err());
    }

    #[test]
    fn trace_validation() {
        let mut trace = ResponseTrace {
            question_id: "q1".into(),
            model_id: "m".into(),
            steps: vec!["step one".into(), "step two".into()],
            step_rewards: Some(vec![0.9, 0.8]),
            final_answer: None,
        };
        trace.validate().unwrap();
        trace.step_rewards = Some(vec![0.9]);
        assert!(trace.validate().is_err());
        trace.step_rewards = Some(vec![0.9, 1.2]);
        assert!(trace.validate().is_err());
    }

    #[test]
    fn trace_word_count_and_answer() {
        let trace = ResponseTrace {
            question_id: "q1".into(),
            model_id: "m".into(),
            steps: vec!["two words".into(), "ends with \\boxed{7}".into()],
            step_rewards: None,
            final_answer: None,
        };
        assert_eq!(trace.length_words(), 5);
        assert_eq!(trace.effective_final_answer().as_deref(), Some("7"));
    }

    #[test]
    fn skill_map_round_trip() {
        let mut map = SkillMap::new();
        map.insert("solving_equations", "p2");
        map.insert("Solving Equations", "p1");
        map.insert("factorization", "p1");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.jsonl");
        map.save(&path).unwrap();
        let loaded = SkillMap::load(&path).unwrap();
        assert_eq!(loaded, map);
        assert_eq!(
            loaded.questions_for("solving_equations").unwrap().len(),
            2
        );
        assert_eq!(loaded.skills_of("p1"), vec!["factorization", "solving_equations"]);
    }

    #[test]
    fn profile_round_trip() {
        let mut profile = MissingSkillProfile::new("student-a");
        profile.insert("q1", vec!["a".into(), "b".into()]);
        profile.insert("q2", vec![]);
        assert_eq!(profile.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.jsonl");
        profile.save(&path).unwrap();
        let loaded = MissingSkillProfile::load(&path).unwrap();
        assert_eq!(loaded, profile);
        assert_eq!(loaded.model_id, "student-a");
    }
}

//! Dataset constructors that select existing training questions: the
//! skill-targeted selector plus the four non-synthetic baselines, with the
//! shared answer bank and seeded subsampling machinery.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::BufRead as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{cosine, embed, BackendError, EmbeddingBackend};
use crate::corpus::{
    Corpus, CorpusError, CurationDataset, MissingSkillProfile, Provenance, QaPair, Question,
    SkillMap, SourceMethod, Split,
};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("missing-skill profile is empty")]
    EmptyProfile,
    #[error("question {0} has no answers in the bank")]
    MissingAnswer(String),
    #[error("questions with fewer than {required} answers: {}", .ids.join(", "))]
    InsufficientAnswers { required: usize, ids: Vec<String> },
    #[error("no level-4/5 questions in the train split")]
    NoHardQuestions,
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("question {0} is not in the corpus")]
    UnknownQuestion(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("expected {expected} reference questions, got {got}")]
    WrongRefCount { expected: usize, got: usize },
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub samples_per_skill: usize,
    pub answers_per_question: usize,
    pub target_pairs: usize,
    pub embed_top_k: usize,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            samples_per_skill: 5,
            answers_per_question: 3,
            target_pairs: 9500,
            embed_top_k: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerOrigin {
    Original,
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub origin: AnswerOrigin,
}

/// Per-question answers: the original solution first, teacher rewrites after.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerBank {
    entries: BTreeMap<String, Vec<Answer>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnswerRecord {
    question_id: String,
    answers: Vec<Answer>,
}

impl AnswerBank {
    pub fn new() -> Self {
        AnswerBank::default()
    }

    pub fn insert(&mut self, question_id: &str, answer: Answer) {
        self.entries
            .entry(question_id.to_string())
            .or_default()
            .push(answer);
    }

    pub fn original(&self, question_id: &str) -> Option<&Answer> {
        self.entries
            .get(question_id)
            .and_then(|answers| answers.iter().find(|a| a.origin == AnswerOrigin::Original))
    }

    /// The first `n` answers in bank order (original first).
    pub fn first_n(&self, question_id: &str, n: usize) -> &[Answer] {
        self.entries
            .get(question_id)
            .map(|answers| &answers[..n.min(answers.len())])
            .unwrap_or(&[])
    }

    pub fn answers(&self, question_id: &str) -> &[Answer] {
        self.entries
            .get(question_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut buf = Vec::new();
        for (question_id, answers) in &self.entries {
            let record = AnswerRecord {
                question_id: question_id.clone(),
                answers: answers.clone(),
            };
            serde_json::to_writer(&mut buf, &record).expect("record serialization cannot fail");
            buf.push(b'\n');
        }
        crate::corpus::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = std::io::BufReader::new(file);
        let mut bank = AnswerBank::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: AnswerRecord =
                serde_json::from_str(&line).map_err(|source| CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    source,
                })?;
            for answer in record.answers {
                bank.insert(&record.question_id, answer);
            }
        }
        Ok(bank)
    }
}

/// Construction statistics emitted alongside every dataset.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SelectStats {
    /// Question draws per skill before deduplication.
    pub pre_dedup_draws: BTreeMap<String, usize>,
    /// Pair pool size before deduplication.
    pub raw_pool: usize,
    /// Pair pool size after deduplication, before subsampling.
    pub pool_size: usize,
    pub dedup_removed: usize,
    pub warnings: Vec<String>,
}

/// Uniform without-replacement subsample of `min(target, len)` elements,
/// order-stable under a seeded shuffle.
pub fn subsample_pairs<T>(mut pool: Vec<T>, target: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(target);
    pool
}

pub(crate) struct Draft {
    pub(crate) question_id: String,
    pub(crate) question_text: String,
    pub(crate) answer_text: String,
    pub(crate) provenance: Provenance,
    pub(crate) skills: BTreeSet<String>,
    pub(crate) source_method: SourceMethod,
}

/// Deduplicate on (question_text, answer_text), keeping first-occurrence
/// order. With `merge_skills`, collapsed duplicates contribute their skill
/// tags to the survivor; otherwise the first occurrence's tags stand.
fn dedup_drafts(drafts: Vec<Draft>, merge_skills: bool) -> (Vec<Draft>, usize) {
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut kept: Vec<Draft> = Vec::new();
    let mut removed = 0usize;
    for draft in drafts {
        let key = (draft.question_text.clone(), draft.answer_text.clone());
        match index.get(&key) {
            Some(&i) => {
                removed += 1;
                if merge_skills {
                    let skills = draft.skills;
                    kept[i].skills.extend(skills);
                }
            }
            None => {
                index.insert(key, kept.len());
                kept.push(draft);
            }
        }
    }
    (kept, removed)
}

pub(crate) fn finish(
    drafts: Vec<Draft>,
    target_pairs: usize,
    seed: u64,
    merge_skills: bool,
    stats: &mut SelectStats,
) -> Result<CurationDataset, CurationError> {
    stats.raw_pool = drafts.len();
    let (deduped, removed) = dedup_drafts(drafts, merge_skills);
    stats.dedup_removed = removed;
    stats.pool_size = deduped.len();
    if deduped.is_empty() {
        return Err(CurationError::EmptyPool);
    }
    if target_pairs > deduped.len() {
        stats.warnings.push(format!(
            "target {target_pairs} exceeds pool {}; emitting whole pool",
            deduped.len()
        ));
    }
    let sampled = subsample_pairs(deduped, target_pairs, seed);
    let pairs = sampled
        .into_iter()
        .map(|d| QaPair {
            id: d.question_id,
            question_text: d.question_text,
            answer_text: d.answer_text,
            provenance: d.provenance,
            skills: d.skills.into_iter().collect(),
            source_method: d.source_method,
        })
        .collect();
    Ok(CurationDataset::new(pairs)?)
}

fn answer_drafts(
    question: &Question,
    answers: &[Answer],
    provenance: Option<Provenance>,
    skills: BTreeSet<String>,
    source_method: SourceMethod,
) -> Vec<Draft> {
    answers
        .iter()
        .map(|answer| Draft {
            question_id: question.id.clone(),
            question_text: question.text.clone(),
            answer_text: answer.text.clone(),
            provenance: provenance.unwrap_or(match answer.origin {
                AnswerOrigin::Original => Provenance::Original,
                AnswerOrigin::Rewrite => Provenance::Augmented,
            }),
            skills: skills.clone(),
            source_method,
        })
        .collect()
}

/// Skill-targeted selection: for every (difficult question, missing skill)
/// pair, draw `samples_per_skill` training questions mapped to that skill,
/// attach answers, deduplicate, and subsample to the target size. Skill
/// draw frequency stays proportional to profile frequency by construction.
pub fn stat_sel(
    profile: &MissingSkillProfile,
    skill_map: &SkillMap,
    corpus: &Corpus,
    answers: &AnswerBank,
    config: &SelectConfig,
) -> Result<(CurationDataset, SelectStats), CurationError> {
    if profile.is_empty() {
        return Err(CurationError::EmptyProfile);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = SelectStats::default();
    let mut drafts = Vec::new();
    for (_difficult_id, skills) in profile.entries() {
        for skill in skills {
            let Some(pool) = skill_map.questions_for(skill).filter(|p| !p.is_empty()) else {
                stats
                    .warnings
                    .push(format!("skill {skill} has no mapped training questions"));
                continue;
            };
            let pool: Vec<&String> = pool.iter().collect();
            let k = config.samples_per_skill.min(pool.len());
            let chosen = rand::seq::index::sample(&mut rng, pool.len(), k);
            *stats.pre_dedup_draws.entry(skill.clone()).or_default() += k;
            for idx in chosen.iter() {
                let qid = pool[idx];
                let question = corpus
                    .get(qid)
                    .ok_or_else(|| CurationError::UnknownQuestion(qid.clone()))?;
                let qa = answers.first_n(qid, config.answers_per_question);
                if qa.is_empty() {
                    return Err(CurationError::MissingAnswer(qid.clone()));
                }
                drafts.extend(answer_drafts(
                    question,
                    qa,
                    Some(Provenance::Selected),
                    BTreeSet::from([skill.clone()]),
                    SourceMethod::StatSel,
                ));
            }
        }
    }
    stats.warnings.sort();
    stats.warnings.dedup();
    let dataset = finish(drafts, config.target_pairs, config.seed, true, &mut stats)?;
    Ok((dataset, stats))
}

/// The unmodified training set: one pair per train question with its
/// original answer.
pub fn baseline_math_train(
    corpus: &Corpus,
    answers: &AnswerBank,
) -> Result<(CurationDataset, SelectStats), CurationError> {
    let train = corpus.in_split(Split::Train);
    if train.is_empty() {
        return Err(CurationError::EmptyTrainSplit);
    }
    let mut pairs = Vec::with_capacity(train.len());
    for question in train {
        let answer = answers
            .original(&question.id)
            .ok_or_else(|| CurationError::MissingAnswer(question.id.clone()))?;
        pairs.push(QaPair {
            id: question.id.clone(),
            question_text: question.text.clone(),
            answer_text: answer.text.clone(),
            provenance: Provenance::Original,
            skills: Vec::new(),
            source_method: SourceMethod::MathTrain,
        });
    }
    let stats = SelectStats {
        raw_pool: pairs.len(),
        pool_size: pairs.len(),
        ..SelectStats::default()
    };
    Ok((CurationDataset::new(pairs)?, stats))
}

fn cross_with_answers(
    questions: &[&Question],
    answers: &AnswerBank,
    config: &SelectConfig,
    source_method: SourceMethod,
) -> Result<Vec<Draft>, CurationError> {
    let mut short: Vec<String> = Vec::new();
    for q in questions {
        if answers.answers(&q.id).len() < config.answers_per_question {
            short.push(q.id.clone());
        }
    }
    if !short.is_empty() {
        return Err(CurationError::InsufficientAnswers {
            required: config.answers_per_question,
            ids: short,
        });
    }
    let mut drafts = Vec::new();
    for q in questions {
        let qa = answers.first_n(&q.id, config.answers_per_question);
        drafts.extend(answer_drafts(q, qa, None, BTreeSet::new(), source_method));
    }
    Ok(drafts)
}

/// Full cross product of train questions with the first
/// `answers_per_question` answers, subsampled to the target size.
pub fn baseline_math_augment(
    corpus: &Corpus,
    answers: &AnswerBank,
    config: &SelectConfig,
) -> Result<(CurationDataset, SelectStats), CurationError> {
    let train = corpus.in_split(Split::Train);
    if train.is_empty() {
        return Err(CurationError::EmptyTrainSplit);
    }
    let drafts = cross_with_answers(&train, answers, config, SourceMethod::MathAugment)?;
    let mut stats = SelectStats::default();
    let dataset = finish(drafts, config.target_pairs, config.seed, true, &mut stats)?;
    Ok((dataset, stats))
}

/// Same cross product restricted to level-4/5 train questions.
pub fn baseline_math_hard(
    corpus: &Corpus,
    answers: &AnswerBank,
    config: &SelectConfig,
) -> Result<(CurationDataset, SelectStats), CurationError> {
    let hard: Vec<&Question> = corpus
        .in_split(Split::Train)
        .into_iter()
        .filter(|q| matches!(q.level, Some(4) | Some(5)))
        .collect();
    if hard.is_empty() {
        return Err(CurationError::NoHardQuestions);
    }
    let drafts = cross_with_answers(&hard, answers, config, SourceMethod::MathHard)?;
    let mut stats = SelectStats::default();
    let dataset = finish(drafts, config.target_pairs, config.seed, true, &mut stats)?;
    Ok((dataset, stats))
}

/// Nearest training questions per difficult question by cosine similarity,
/// excluding exact text self-matches; ties break by ascending question id.
pub fn embed_top_k(
    difficult_ids: &BTreeSet<String>,
    corpus: &Corpus,
    backend: &dyn EmbeddingBackend,
    top_k: usize,
) -> Result<BTreeMap<String, Vec<String>>, CurationError> {
    let train = corpus.in_split(Split::Train);
    if train.is_empty() {
        return Err(CurationError::EmptyTrainSplit);
    }
    let mut difficult: Vec<&Question> = Vec::with_capacity(difficult_ids.len());
    for id in difficult_ids {
        difficult.push(
            corpus
                .get(id)
                .ok_or_else(|| CurationError::UnknownQuestion(id.clone()))?,
        );
    }
    let texts: Vec<String> = difficult
        .iter()
        .chain(train.iter())
        .map(|q| q.text.clone())
        .collect();
    let vectors = embed(&texts, backend)?;
    let (difficult_vs, train_vs) = vectors.split_at(difficult.len());

    let mut selected = BTreeMap::new();
    for (dq, dv) in difficult.iter().zip(difficult_vs) {
        let mut scored: Vec<(f64, &str)> = train
            .iter()
            .zip(train_vs)
            .filter(|(tq, _)| tq.text != dq.text)
            .map(|(tq, tv)| (cosine(dv, tv), tq.id.as_str()))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.1.cmp(b.1))
        });
        selected.insert(
            dq.id.clone(),
            scored
                .into_iter()
                .take(top_k)
                .map(|(_, id)| id.to_string())
                .collect(),
        );
    }
    Ok(selected)
}

/// Embedding-similarity selection: the nearest `embed_top_k` training
/// questions per difficult question, crossed with answers, deduplicated,
/// and subsampled to the target size.
pub fn embed_sel(
    difficult: &BTreeSet<String>,
    corpus: &Corpus,
    answers: &AnswerBank,
    backend: &dyn EmbeddingBackend,
    config: &SelectConfig,
) -> Result<(CurationDataset, SelectStats), CurationError> {
    let neighbors = embed_top_k(difficult, corpus, backend, config.embed_top_k)?;
    let mut drafts = Vec::new();
    for train_ids in neighbors.values() {
        for qid in train_ids {
            let question = corpus
                .get(qid)
                .ok_or_else(|| CurationError::UnknownQuestion(qid.clone()))?;
            let qa = answers.first_n(qid, config.answers_per_question);
            if qa.is_empty() {
                return Err(CurationError::MissingAnswer(qid.clone()));
            }
            drafts.extend(answer_drafts(
                question,
                qa,
                Some(Provenance::Selected),
                BTreeSet::new(),
                SourceMethod::EmbedSel,
            ));
        }
    }
    let mut stats = SelectStats::default();
    let dataset = finish(drafts, config.target_pairs, config.seed, true, &mut stats)?;
    Ok((dataset, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedEmbedding;
    use crate::corpus::Subject;

    fn question(id: &str, split: Split, level: Option<u8>) -> Question {
        Question {
            id: id.into(),
            text: format!("question text {id}"),
            subject: Subject::Algebra,
            level,
            split,
            gold_answer: None,
        }
    }

    /// `n` train questions with `n_answers` answers each (original first).
    fn train_fixture(n: usize, n_answers: usize) -> (Corpus, AnswerBank) {
        let questions: Vec<Question> = (0..n)
            .map(|i| {
                question(
                    &format!("p{i:04}"),
                    Split::Train,
                    Some((i % 5 + 1) as u8),
                )
            })
            .collect();
        let mut bank = AnswerBank::new();
        for q in &questions {
            for a in 0..n_answers {
                bank.insert(
                    &q.id,
                    Answer {
                        text: format!("answer {a} to {}", q.id),
                        origin: if a == 0 {
                            AnswerOrigin::Original
                        } else {
                            AnswerOrigin::Rewrite
                        },
                    },
                );
            }
        }
        (Corpus::new(questions).unwrap(), bank)
    }

    fn single_skill_map(skill: &str, ids: impl Iterator<Item = String>) -> SkillMap {
        let mut map = SkillMap::new();
        for id in ids {
            map.insert(skill, &id);
        }
        map
    }

    #[test]
    fn stat_sel_single_skill() {
        let (corpus, bank) = train_fixture(10, 1);
        let map = single_skill_map("a", (0..10).map(|i| format!("p{i:04}")));
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("q1", vec!["a".into()]);
        let config = SelectConfig {
            samples_per_skill: 5,
            answers_per_question: 1,
            target_pairs: 5,
            seed: 7,
            ..SelectConfig::default()
        };
        let (dataset, stats) = stat_sel(&profile, &map, &corpus, &bank, &config).unwrap();
        assert_eq!(dataset.len(), 5);
        assert_eq!(stats.pre_dedup_draws["a"], 5);
        for pair in &dataset.pairs {
            assert_eq!(pair.skills, vec!["a"]);
            assert_eq!(pair.provenance, Provenance::Selected);
            assert_eq!(pair.source_method, SourceMethod::StatSel);
        }
        assert_eq!(dataset.unique_question_count(), 5);
    }

    #[test]
    fn stat_sel_empty_profile_is_an_error() {
        let (corpus, bank) = train_fixture(5, 1);
        let map = single_skill_map("a", (0..5).map(|i| format!("p{i:04}")));
        let profile = MissingSkillProfile::new("m");
        assert!(matches!(
            stat_sel(&profile, &map, &corpus, &bank, &SelectConfig::default()),
            Err(CurationError::EmptyProfile)
        ));
    }

    #[test]
    fn stat_sel_skips_unmapped_skills_with_warning() {
        let (corpus, bank) = train_fixture(10, 1);
        let map = single_skill_map("a", (0..10).map(|i| format!("p{i:04}")));
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("q1", vec!["a".into(), "ghost".into()]);
        let config = SelectConfig {
            samples_per_skill: 3,
            answers_per_question: 1,
            target_pairs: 3,
            ..SelectConfig::default()
        };
        let (dataset, stats) = stat_sel(&profile, &map, &corpus, &bank, &config).unwrap();
        assert_eq!(dataset.len(), 3);
        assert_eq!(stats.warnings.len(), 1);
        assert!(stats.warnings[0].contains("ghost"));
    }

    #[test]
    fn stat_sel_draw_counts_follow_profile_frequency() {
        // Skill a appears twice in the profile, skill b once; the pre-dedup
        // draw ratio must be 2.0 within 5% over many seeds.
        let (corpus, bank) = train_fixture(60, 1);
        let mut map = SkillMap::new();
        for i in 0..30 {
            map.insert("a", &format!("p{i:04}"));
        }
        for i in 30..60 {
            map.insert("b", &format!("p{i:04}"));
        }
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("q1", vec!["a".into()]);
        profile.insert("q2", vec!["a".into(), "b".into()]);
        let mut draws_a = 0usize;
        let mut draws_b = 0usize;
        for seed in 0..1000 {
            let config = SelectConfig {
                samples_per_skill: 5,
                answers_per_question: 1,
                target_pairs: 15,
                seed,
                ..SelectConfig::default()
            };
            let (_, stats) = stat_sel(&profile, &map, &corpus, &bank, &config).unwrap();
            draws_a += stats.pre_dedup_draws["a"];
            draws_b += stats.pre_dedup_draws["b"];
        }
        let ratio = draws_a as f64 / draws_b as f64;
        assert!((ratio - 2.0).abs() / 2.0 < 0.05, "ratio {ratio}");
    }

    /// Paper-scale plant: 60 skills over 7.5k train questions (one skill
    /// each, pools of 125), a 500-question profile with 2–3 skills each.
    fn paper_scale_plant() -> (Corpus, AnswerBank, SkillMap, MissingSkillProfile) {
        let (corpus, bank) = train_fixture(7500, 3);
        let mut map = SkillMap::new();
        for i in 0..7500 {
            map.insert(&format!("skill_{:02}", i % 60), &format!("p{i:04}"));
        }
        let mut profile = MissingSkillProfile::new("m");
        for i in 0..500 {
            let mut skills = vec![
                format!("skill_{:02}", i % 60),
                format!("skill_{:02}", (i + 17) % 60),
            ];
            if i % 2 == 0 {
                skills.push(format!("skill_{:02}", (i + 31) % 60));
            }
            profile.insert(&format!("d{i:03}"), skills);
        }
        (corpus, bank, map, profile)
    }

    #[test]
    fn stat_sel_paper_scale_counts() {
        let (corpus, bank, map, profile) = paper_scale_plant();
        let config = SelectConfig {
            seed: 0,
            ..SelectConfig::default()
        };
        let (dataset, stats) = stat_sel(&profile, &map, &corpus, &bank, &config).unwrap();
        assert_eq!(dataset.len(), 9500);
        assert!(stats.pool_size >= 9500);
        // Unique-question count lands near 4k.
        let unique = dataset.unique_question_count() as f64;
        assert!(
            (unique - 4000.0).abs() / 4000.0 < 0.15,
            "unique questions {unique}"
        );
        // Every pair carries at least one profile skill.
        let profile_skills: BTreeSet<&String> =
            profile.entries().flat_map(|(_, s)| s.iter()).collect();
        for pair in &dataset.pairs {
            assert!(pair.skills.iter().any(|s| profile_skills.contains(s)));
        }
    }

    #[test]
    fn math_train_is_a_bijection_over_train() {
        let (corpus, bank) = train_fixture(3, 1);
        let (dataset, _) = baseline_math_train(&corpus, &bank).unwrap();
        assert_eq!(dataset.len(), 3);
        let ids: BTreeSet<&str> = dataset.pairs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 3);
        for pair in &dataset.pairs {
            assert_eq!(pair.provenance, Provenance::Original);
        }
    }

    #[test]
    fn math_train_requires_answers() {
        let (corpus, _) = train_fixture(3, 1);
        let empty = AnswerBank::new();
        assert!(matches!(
            baseline_math_train(&corpus, &empty),
            Err(CurationError::MissingAnswer(_))
        ));
    }

    #[test]
    fn math_augment_pool_and_subsample() {
        let (corpus, bank) = train_fixture(10, 3);
        let config = SelectConfig {
            target_pairs: 9,
            seed: 3,
            ..SelectConfig::default()
        };
        let (dataset, stats) = baseline_math_augment(&corpus, &bank, &config).unwrap();
        assert_eq!(stats.pool_size, 30);
        assert_eq!(dataset.len(), 9);

        // Same seed, same output.
        let (again, _) = baseline_math_augment(&corpus, &bank, &config).unwrap();
        assert_eq!(dataset, again);

        // Target above the pool saturates with a warning.
        let big = SelectConfig {
            target_pairs: 50,
            ..config
        };
        let (all, stats) = baseline_math_augment(&corpus, &bank, &big).unwrap();
        assert_eq!(all.len(), 30);
        assert!(!stats.warnings.is_empty());
    }

    #[test]
    fn math_augment_rejects_short_banks() {
        let (corpus, bank) = train_fixture(4, 2);
        let err =
            baseline_math_augment(&corpus, &bank, &SelectConfig::default()).unwrap_err();
        match err {
            CurationError::InsufficientAnswers { required, ids } => {
                assert_eq!(required, 3);
                assert_eq!(ids.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn math_hard_filters_levels() {
        let (corpus, bank) = train_fixture(20, 3);
        let config = SelectConfig {
            target_pairs: 10,
            ..SelectConfig::default()
        };
        let (dataset, _) = baseline_math_hard(&corpus, &bank, &config).unwrap();
        assert_eq!(dataset.len(), 10);
        for pair in &dataset.pairs {
            let level = corpus.get(&pair.id).unwrap().level.unwrap();
            assert!(level == 4 || level == 5);
        }

        // Only easy levels: construction fails.
        let easy: Vec<Question> = (0..5)
            .map(|i| question(&format!("e{i}"), Split::Train, Some(1)))
            .collect();
        let easy_corpus = Corpus::new(easy).unwrap();
        assert!(matches!(
            baseline_math_hard(&easy_corpus, &bank, &config),
            Err(CurationError::NoHardQuestions)
        ));
    }

    fn embedding_fixture() -> (Corpus, AnswerBank, ScriptedEmbedding) {
        let mut questions = vec![question("d1", Split::Val, None)];
        questions.extend((0..4).map(|i| question(&format!("p{i}"), Split::Train, None)));
        // p0 matches d1's direction exactly; p1..p3 progressively diverge.
        let mut table = HashMap::new();
        table.insert("question text d1".to_string(), vec![1.0, 0.0]);
        table.insert("question text p0".to_string(), vec![2.0, 0.0]);
        table.insert("question text p1".to_string(), vec![1.0, 1.0]);
        table.insert("question text p2".to_string(), vec![0.0, 1.0]);
        table.insert("question text p3".to_string(), vec![-1.0, 0.5]);
        let mut bank = AnswerBank::new();
        for i in 0..4 {
            bank.insert(
                &format!("p{i}"),
                Answer {
                    text: format!("solution {i}"),
                    origin: AnswerOrigin::Original,
                },
            );
        }
        (
            Corpus::new(questions).unwrap(),
            bank,
            ScriptedEmbedding::new("s", table),
        )
    }

    #[test]
    fn embed_sel_ranks_by_cosine() {
        let (corpus, bank, backend) = embedding_fixture();
        let difficult: BTreeSet<String> = ["d1".to_string()].into();
        let neighbors = embed_top_k(&difficult, &corpus, &backend, 2).unwrap();
        assert_eq!(neighbors["d1"], vec!["p0", "p1"]);

        let config = SelectConfig {
            answers_per_question: 1,
            target_pairs: 2,
            embed_top_k: 2,
            ..SelectConfig::default()
        };
        let (dataset, _) = embed_sel(&difficult, &corpus, &bank, &backend, &config).unwrap();
        assert_eq!(dataset.len(), 2);
        for pair in &dataset.pairs {
            assert!(pair.skills.is_empty());
            assert_eq!(pair.source_method, SourceMethod::EmbedSel);
        }
    }

    #[test]
    fn embed_sel_excludes_exact_text_self_match() {
        // A train question with identical text must not select itself, but
        // an identical-direction distinct text ranks first.
        let questions = vec![
            question("d1", Split::Val, None),
            Question {
                id: "twin".into(),
                text: "question text d1".into(),
                subject: Subject::Algebra,
                level: None,
                split: Split::Train,
                gold_answer: None,
            },
            question("p0", Split::Train, None),
        ];
        let table = HashMap::from([
            ("question text d1".to_string(), vec![1.0, 0.0]),
            ("question text p0".to_string(), vec![1.0, 0.0]),
        ]);
        let corpus = Corpus::new(questions).unwrap();
        let backend = ScriptedEmbedding::new("s", table);
        let neighbors =
            embed_top_k(&["d1".to_string()].into(), &corpus, &backend, 2).unwrap();
        assert_eq!(neighbors["d1"], vec!["p0"]);
    }

    #[test]
    fn embed_sel_breaks_ties_by_id() {
        let questions = vec![
            question("d1", Split::Val, None),
            question("p2", Split::Train, None),
            question("p1", Split::Train, None),
            question("p3", Split::Train, None),
        ];
        // All train vectors orthogonal to the query: every cosine is zero.
        let table = HashMap::from([
            ("question text d1".to_string(), vec![1.0, 0.0]),
            ("question text p1".to_string(), vec![0.0, 1.0]),
            ("question text p2".to_string(), vec![0.0, 1.0]),
            ("question text p3".to_string(), vec![0.0, -1.0]),
        ]);
        let corpus = Corpus::new(questions).unwrap();
        let backend = ScriptedEmbedding::new("s", table);
        let neighbors =
            embed_top_k(&["d1".to_string()].into(), &corpus, &backend, 2).unwrap();
        assert_eq!(neighbors["d1"], vec!["p1", "p2"]);
    }

    #[test]
    fn embed_top_k_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(13);
        let mut questions = vec![question("d1", Split::Val, None)];
        let mut table = HashMap::new();
        table.insert("question text d1".to_string(), vec![0.3, -0.2, 0.9]);
        for i in 0..20 {
            let q = question(&format!("p{i:02}"), Split::Train, None);
            table.insert(
                q.text.clone(),
                (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            );
            questions.push(q);
        }
        let corpus = Corpus::new(questions).unwrap();
        let backend = ScriptedEmbedding::new("s", table.clone());
        let neighbors =
            embed_top_k(&["d1".to_string()].into(), &corpus, &backend, 5).unwrap();

        // Exhaustive oracle: normalize, score, sort, take five.
        let norm = |v: &[f64]| -> Vec<f64> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        };
        let qv = norm(&table["question text d1"]);
        let mut scored: Vec<(f64, String)> = (0..20)
            .map(|i| {
                let id = format!("p{i:02}");
                let tv = norm(&table[&format!("question text {id}")]);
                (cosine(&qv, &tv), id)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1))
        });
        let expected: Vec<String> = scored.into_iter().take(5).map(|(_, id)| id).collect();
        assert_eq!(neighbors["d1"], expected);
    }

    #[test]
    fn stat_sel_distribution_tracks_profile_frequencies() {
        // Skill a appears twice in the profile, skill b once. With pools
        // large enough that duplicate draws are rare, the emitted skill
        // histogram approaches the 2:1 profile-frequency expectation.
        let (corpus, bank) = train_fixture(400, 1);
        let mut map = SkillMap::new();
        for i in 0..200 {
            map.insert("a", &format!("p{i:04}"));
        }
        for i in 200..400 {
            map.insert("b", &format!("p{i:04}"));
        }
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("q1", vec!["a".into()]);
        profile.insert("q2", vec!["a".into(), "b".into()]);
        let mut mean_a = 0.0;
        let runs = 200;
        for seed in 0..runs {
            let config = SelectConfig {
                samples_per_skill: 5,
                answers_per_question: 1,
                target_pairs: 1000,
                seed,
                ..SelectConfig::default()
            };
            let (dataset, _) = stat_sel(&profile, &map, &corpus, &bank, &config).unwrap();
            let dist = crate::skill_profile::skill_distribution(&dataset, &map);
            mean_a += dist["a"];
        }
        mean_a /= runs as f64;
        assert!(
            (mean_a - 2.0 / 3.0).abs() / (2.0 / 3.0) < 0.02,
            "mean fraction for skill a: {mean_a}"
        );
    }

    #[test]
    fn subsample_contracts() {
        let pool: Vec<u32> = (0..10).collect();
        let same = subsample_pairs(pool.clone(), 10, 1);
        assert_eq!(
            same.iter().copied().collect::<BTreeSet<_>>(),
            pool.iter().copied().collect::<BTreeSet<_>>()
        );
        let sampled = subsample_pairs((0..22_500u32).collect(), 9500, 0);
        assert_eq!(sampled.len(), 9500);
        assert_eq!(sampled.iter().collect::<BTreeSet<_>>().len(), 9500);
    }

    #[test]
    fn subsample_inclusion_is_uniform() {
        // Element 0 of a 20-element pool, sampled at target 5 over 2000
        // seeds: inclusion count is Binomial(2000, 0.25); anchor on 3σ.
        let mut included = 0usize;
        for seed in 0..2000 {
            let sample = subsample_pairs((0..20u32).collect(), 5, seed);
            if sample.contains(&0) {
                included += 1;
            }
        }
        let expected = 2000.0 * 0.25;
        let sigma = (2000.0_f64 * 0.25 * 0.75).sqrt();
        assert!(
            (included as f64 - expected).abs() < 3.0 * sigma,
            "included {included}"
        );
    }

    #[test]
    fn answer_bank_round_trip() {
        let (_, bank) = train_fixture(3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("answers.jsonl");
        bank.save(&path).unwrap();
        let loaded = AnswerBank::load(&path).unwrap();
        assert_eq!(loaded, bank);
        assert_eq!(
            loaded.original("p0000").unwrap().origin,
            AnswerOrigin::Original
        );
        assert_eq!(loaded.first_n("p0000", 5).len(), 2);
    }
}

//! Dataset constructors that synthesize new questions: teacher-generated
//! questions and solutions with majority-consistency filtering, targeted
//! either at missing skills or at embedding neighborhoods.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{
    fan_out, parse_tagged, EmbeddingBackend, Purpose, Teacher, TeacherRequest,
};
use crate::corpus::{
    extract_final_answer, Corpus, CurationDataset, MissingSkillProfile, Provenance, SkillMap,
    SourceMethod,
};
use crate::curation_select::{
    embed_top_k, finish, AnswerBank, CurationError, Draft, SelectStats,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub refs_per_request: usize,
    pub questions_per_request: usize,
    pub solutions_per_question: usize,
    pub consistency_min: usize,
    pub target_pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            refs_per_request: 3,
            questions_per_request: 2,
            solutions_per_question: 3,
            consistency_min: 2,
            target_pairs: 9500,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Embedding-neighborhood synthesis proposes five questions per
    /// difficult question instead of two per missing skill.
    pub fn embed_defaults() -> Self {
        SynthConfig {
            questions_per_request: 5,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        if self.refs_per_request == 0
            || self.questions_per_request == 0
            || self.solutions_per_question == 0
            || self.consistency_min == 0
            || self.target_pairs == 0
        {
            return Err(CurationError::InvalidConfig(
                "all synthesis counts must be positive".into(),
            ));
        }
        if self.consistency_min > self.solutions_per_question {
            return Err(CurationError::InvalidConfig(
                "consistency_min exceeds solutions_per_question".into(),
            ));
        }
        Ok(())
    }
}

/// A reference training example shown to the teacher in a proposal prompt.
#[derive(Debug, Clone)]
pub struct RefExample {
    pub question_id: String,
    pub question_text: String,
    pub solution: String,
}

fn count_word(n: usize) -> String {
    match n {
        2 => "two".into(),
        3 => "three".into(),
        4 => "four".into(),
        5 => "five".into(),
        other => other.to_string(),
    }
}

fn render_refs(refs: &[RefExample]) -> String {
    refs.iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "[QUESTION {n}]\n{q}\n\nSolution: {s}\n",
                n = i + 1,
                q = r.question_text,
                s = r.solution
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Render the skill-targeted question-proposal prompt over exactly
/// `refs_per_request` reference examples.
pub fn build_proposal_prompt(
    refs: &[RefExample],
    skill: &str,
    config: &SynthConfig,
) -> Result<String, CurationError> {
    if refs.len() != config.refs_per_request {
        return Err(CurationError::WrongRefCount {
            expected: config.refs_per_request,
            got: refs.len(),
        });
    }
    Ok(format!(
        "[TASK]\n\
         You'll be given {count} math questions (e.g., [QUESTION 1]), with their solutions for reference. Your task is to output a new, novel math question that emphasizes the use of [SKILL].\n\
         Important Note: the new question should not be very similar to any of the given questions (e.g., naive adaptions like altering variable names or values from a given question is strictly prohibitted). Meanwhile, the new question should have similar difficulty with the given questions.\n\
         Output format:\n\
         (1) <reason> reason here how the given questions relates to the [SKILL] </reason>\n\
         (2) <draft> reason here how to design a new, novel question while emphasizing the [SKILL] </draft>\n\
         (3) <question> your newly constructed math question </question>\n\
         \n\
         {refs}\n\
         [SKILL]\n\
         {skill}\n",
        count = count_word(refs.len()),
        refs = render_refs(refs),
        skill = skill
    ))
}

/// Proposal prompt for the embedding-neighborhood variant: same output
/// protocol, no skill emphasis.
pub fn build_similarity_proposal_prompt(
    refs: &[RefExample],
    config: &SynthConfig,
) -> Result<String, CurationError> {
    if refs.len() != config.refs_per_request {
        return Err(CurationError::WrongRefCount {
            expected: config.refs_per_request,
            got: refs.len(),
        });
    }
    Ok(format!(
        "[TASK]\n\
         You'll be given {count} math questions (e.g., [QUESTION 1]), with their solutions for reference. Your task is to output a new, novel math question of similar style and difficulty.\n\
         Important Note: the new question should not be very similar to any of the given questions (e.g., naive adaptions like altering variable names or values from a given question is strictly prohibitted). Meanwhile, the new question should have similar difficulty with the given questions.\n\
         Output format:\n\
         (1) <reason> reason here what the given questions have in common </reason>\n\
         (2) <draft> reason here how to design a new, novel question </draft>\n\
         (3) <question> your newly constructed math question </question>\n\
         \n\
         {refs}",
        count = count_word(refs.len()),
        refs = render_refs(refs),
    ))
}

/// Prompt asking the teacher to solve one synthesized question.
pub fn build_solution_prompt(question_text: &str) -> String {
    format!(
        "Solve the following math question step by step. Conclude with the final answer in \\boxed{{}}.\n\
         \n\
         [QUESTION]\n\
         {question_text}\n"
    )
}

/// Sample `questions_per_request` proposals from one prompt and keep the
/// parseable, non-empty ones that do not echo a reference text.
pub fn propose_questions(
    refs: &[RefExample],
    skill: &str,
    teacher: &Teacher,
    config: &SynthConfig,
) -> Result<Vec<String>, CurationError> {
    let prompt = build_proposal_prompt(refs, skill, config)?;
    propose_from_prompt(prompt, refs, teacher, config.questions_per_request)
}

fn propose_from_prompt(
    prompt: String,
    refs: &[RefExample],
    teacher: &Teacher,
    n: usize,
) -> Result<Vec<String>, CurationError> {
    let request = TeacherRequest::new(prompt, Purpose::Propose).with_samples(n as u32);
    let samples = teacher.complete(&request)?;
    let mut questions = Vec::new();
    for raw in &samples {
        match parse_tagged(raw, &["question"]) {
            Ok(tagged) => {
                let text = tagged.first("question").unwrap_or("").to_string();
                if text.is_empty() {
                    log::warn!("proposal produced an empty question");
                    continue;
                }
                if refs.iter().any(|r| r.question_text == text) {
                    log::warn!("proposal echoed a reference question; dropped");
                    continue;
                }
                questions.push(text);
            }
            Err(e) => log::warn!("unparseable proposal: {e}"),
        }
    }
    if questions.is_empty() {
        log::warn!("all proposals failed to parse");
    }
    Ok(questions)
}

/// Consistency of one candidate's sampled solutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// Size of the largest final-answer agreement class.
    pub score: usize,
    /// The agreeing answer; ties break to the lexicographically smallest.
    pub majority_answer: Option<String>,
    /// Indices of the solutions in the majority class, in order.
    pub kept_indices: Vec<usize>,
}

/// Group solutions by extracted final answer and report the largest class.
/// Solutions without an extractable answer join no group.
pub fn score_consistency(solutions: &[String]) -> ConsistencyResult {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, solution) in solutions.iter().enumerate() {
        if let Some(answer) = extract_final_answer(solution) {
            groups.entry(answer).or_default().push(i);
        }
    }
    let score = groups.values().map(|v| v.len()).max().unwrap_or(0);
    if score == 0 {
        return ConsistencyResult {
            score,
            majority_answer: None,
            kept_indices: Vec::new(),
        };
    }
    // BTreeMap iteration order makes the tie-break lexicographic.
    let (answer, kept) = groups
        .into_iter()
        .find(|(_, members)| members.len() == score)
        .expect("a maximal group exists");
    ConsistencyResult {
        score,
        majority_answer: Some(answer),
        kept_indices: kept,
    }
}

/// One synthesized question with its sampled solutions and filter outcome,
/// sufficient to re-verify the consistency filter offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthAuditRecord {
    pub difficult_id: String,
    pub target_skill: Option<String>,
    pub reference_ids: Vec<String>,
    pub question_text: String,
    pub solutions: Vec<String>,
    pub consistency_score: usize,
    pub majority_answer: Option<String>,
    pub kept_indices: Vec<usize>,
    pub accepted: bool,
}

pub fn save_audit_log(records: &[SynthAuditRecord], path: &Path) -> Result<(), CurationError> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record).expect("audit serialization cannot fail");
        buf.push(b'\n');
    }
    crate::corpus::write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_audit_log(path: &Path) -> Result<Vec<SynthAuditRecord>, CurationError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        CurationError::Corpus(crate::corpus::CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    })?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SynthAuditRecord = serde_json::from_str(line).map_err(|source| {
            CurationError::Corpus(crate::corpus::CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                source,
            })
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SynthStats {
    pub candidates: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub select: SelectStats,
}

/// Deterministic id for a synthesized question.
fn synthetic_id(question_text: &str) -> String {
    let digest = Sha256::digest(question_text.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("syn-{hex}")
}

struct SynthTask {
    difficult_id: String,
    target_skill: Option<String>,
    refs: Vec<RefExample>,
    prompt: String,
    questions_per_request: usize,
}

fn resolve_ref(
    corpus: &Corpus,
    answers: &AnswerBank,
    qid: &str,
) -> Result<RefExample, CurationError> {
    let question = corpus
        .get(qid)
        .ok_or_else(|| CurationError::UnknownQuestion(qid.to_string()))?;
    let solution = answers
        .original(qid)
        .or_else(|| answers.answers(qid).first())
        .ok_or_else(|| CurationError::MissingAnswer(qid.to_string()))?;
    Ok(RefExample {
        question_id: question.id.clone(),
        question_text: question.text.clone(),
        solution: solution.text.clone(),
    })
}

/// Run the proposal/solve/filter loop for prepared tasks and assemble the
/// dataset plus the audit log.
fn run_synthesis(
    tasks: Vec<SynthTask>,
    teacher: &Teacher,
    config: &SynthConfig,
    source_method: SourceMethod,
    mut stats: SynthStats,
) -> Result<(CurationDataset, Vec<SynthAuditRecord>, SynthStats), CurationError> {
    type TaskOutput = Result<Vec<(String, Vec<String>)>, CurationError>;
    let outputs: Vec<TaskOutput> = fan_out(&tasks, teacher.max_in_flight, |task| {
        let questions = propose_from_prompt(
            task.prompt.clone(),
            &task.refs,
            teacher,
            task.questions_per_request,
        )?;
        let mut out = Vec::with_capacity(questions.len());
        for question_text in questions {
            let request =
                TeacherRequest::new(build_solution_prompt(&question_text), Purpose::Solve)
                    .with_samples(config.solutions_per_question as u32);
            let solutions = teacher.complete(&request)?;
            out.push((question_text, solutions));
        }
        Ok(out)
    });

    let mut audit = Vec::new();
    let mut drafts = Vec::new();
    for (task, output) in tasks.iter().zip(outputs) {
        for (question_text, solutions) in output? {
            let consistency = score_consistency(&solutions);
            let accepted = consistency.score >= config.consistency_min;
            stats.candidates += 1;
            if accepted {
                stats.accepted += 1;
                for &i in &consistency.kept_indices {
                    drafts.push(Draft {
                        question_id: synthetic_id(&question_text),
                        question_text: question_text.clone(),
                        answer_text: solutions[i].clone(),
                        provenance: Provenance::Synthetic,
                        skills: task.target_skill.iter().cloned().collect(),
                        source_method,
                    });
                }
            } else {
                stats.rejected += 1;
            }
            audit.push(SynthAuditRecord {
                difficult_id: task.difficult_id.clone(),
                target_skill: task.target_skill.clone(),
                reference_ids: task.refs.iter().map(|r| r.question_id.clone()).collect(),
                question_text,
                solutions,
                consistency_score: consistency.score,
                majority_answer: consistency.majority_answer,
                kept_indices: consistency.kept_indices,
                accepted,
            });
        }
    }
    let dataset = finish(drafts, config.target_pairs, config.seed, false, &mut stats.select)?;
    Ok((dataset, audit, stats))
}

/// Skill-targeted synthesis: per (difficult question, missing skill) pair,
/// show the teacher reference questions mapped to the skill, sample new
/// questions and solutions, and keep only consistency-filtered pairs.
pub fn stat_syn(
    profile: &MissingSkillProfile,
    skill_map: &SkillMap,
    corpus: &Corpus,
    answers: &AnswerBank,
    teacher: &Teacher,
    config: &SynthConfig,
) -> Result<(CurationDataset, Vec<SynthAuditRecord>, SynthStats), CurationError> {
    config.validate()?;
    if profile.is_empty() {
        return Err(CurationError::EmptyProfile);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = SynthStats::default();
    let mut tasks = Vec::new();
    for (difficult_id, skills) in profile.entries() {
        for skill in skills {
            let Some(pool) = skill_map.questions_for(skill).filter(|p| !p.is_empty()) else {
                stats
                    .select
                    .warnings
                    .push(format!("skill {skill} has no mapped training questions"));
                continue;
            };
            let pool: Vec<&String> = pool.iter().collect();
            let ref_ids: Vec<String> = if pool.len() >= config.refs_per_request {
                rand::seq::index::sample(&mut rng, pool.len(), config.refs_per_request)
                    .iter()
                    .map(|i| pool[i].clone())
                    .collect()
            } else {
                log::warn!(
                    "skill {skill} maps only {} questions; sampling references with replacement",
                    pool.len()
                );
                (0..config.refs_per_request)
                    .map(|_| pool[rng.random_range(0..pool.len())].clone())
                    .collect()
            };
            let refs: Vec<RefExample> = ref_ids
                .iter()
                .map(|qid| resolve_ref(corpus, answers, qid))
                .collect::<Result<_, _>>()?;
            let prompt = build_proposal_prompt(&refs, skill, config)?;
            tasks.push(SynthTask {
                difficult_id: difficult_id.clone(),
                target_skill: Some(skill.clone()),
                refs,
                prompt,
                questions_per_request: config.questions_per_request,
            });
        }
    }
    stats.select.warnings.sort();
    stats.select.warnings.dedup();
    run_synthesis(tasks, teacher, config, SourceMethod::StatSyn, stats)
}

/// Embedding-neighborhood synthesis: per difficult question, retrieve the
/// five nearest training pairs, propose questions conditioned on sliding
/// groups of three, and apply the same consistency filter. No skill tags.
pub fn embed_syn(
    difficult: &BTreeSet<String>,
    corpus: &Corpus,
    answers: &AnswerBank,
    embedding: &dyn EmbeddingBackend,
    teacher: &Teacher,
    config: &SynthConfig,
) -> Result<(CurationDataset, Vec<SynthAuditRecord>, SynthStats), CurationError> {
    config.validate()?;
    if difficult.is_empty() {
        return Err(CurationError::EmptyProfile);
    }
    const RETRIEVED: usize = 5;
    let neighbors = embed_top_k(difficult, corpus, embedding, RETRIEVED)?;
    let mut stats = SynthStats::default();
    let mut tasks = Vec::new();
    for (difficult_id, retrieved) in &neighbors {
        if retrieved.is_empty() {
            stats
                .select
                .warnings
                .push(format!("no retrievable neighbors for {difficult_id}"));
            continue;
        }
        let refs: Vec<RefExample> = retrieved
            .iter()
            .map(|qid| resolve_ref(corpus, answers, qid))
            .collect::<Result<_, _>>()?;
        // Sliding cyclic groups keep the reference triples as disjoint as
        // the retrieved set allows.
        for start in 0..config.questions_per_request {
            let group: Vec<RefExample> = (0..config.refs_per_request)
                .map(|offset| refs[(start + offset) % refs.len()].clone())
                .collect();
            let prompt = build_similarity_proposal_prompt(&group, config)?;
            tasks.push(SynthTask {
                difficult_id: difficult_id.clone(),
                target_skill: None,
                refs: group,
                prompt,
                questions_per_request: 1,
            });
        }
    }
    run_synthesis(tasks, teacher, config, SourceMethod::EmbedSyn, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedTeacher;
    use crate::corpus::{Question, Split, Subject};
    use crate::curation_select::{Answer, AnswerOrigin};
    use std::sync::Arc;

    fn question(id: &str, split: Split) -> Question {
        Question {
            id: id.into(),
            text: format!("question text {id}"),
            subject: Subject::Algebra,
            level: None,
            split,
            gold_answer: None,
        }
    }

    fn refs(n: usize) -> Vec<RefExample> {
        (0..n)
            .map(|i| RefExample {
                question_id: format!("p{i}"),
                question_text: format!("reference question {i}"),
                solution: format!("reference solution {i} \\boxed{{{i}}}"),
            })
            .collect()
    }

    fn teacher_of(script: ScriptedTeacher) -> Teacher {
        Teacher::new(Arc::new(script))
    }

    #[test]
    fn proposal_prompt_sections() {
        let config = SynthConfig::default();
        let prompt = build_proposal_prompt(&refs(3), "solving_equations", &config).unwrap();
        assert!(prompt.contains("[SKILL]\nsolving_equations"));
        assert!(prompt.contains("[QUESTION 1]"));
        assert!(prompt.contains("[QUESTION 3]"));
        assert!(prompt.contains("reference question 2"));
        assert!(prompt.contains("reference solution 2"));
        assert!(prompt.contains("strictly prohibitted"));
        // Purity.
        assert_eq!(
            prompt,
            build_proposal_prompt(&refs(3), "solving_equations", &config).unwrap()
        );
    }

    #[test]
    fn proposal_prompt_rejects_wrong_ref_count() {
        let config = SynthConfig::default();
        assert!(matches!(
            build_proposal_prompt(&refs(2), "s", &config),
            Err(CurationError::WrongRefCount {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn proposals_parse_and_filter() {
        let config = SynthConfig::default();
        let r = refs(3);
        let teacher = teacher_of(ScriptedTeacher::new("t").contains(
            "[SKILL]",
            "<reason>r</reason><draft>d</draft><question>Solve for x>0: 1/sqrt(x+4)=2</question>",
        ));
        let qs = propose_questions(&r, "solving_equations", &teacher, &config).unwrap();
        assert_eq!(qs, vec!["Solve for x>0: 1/sqrt(x+4)=2", "Solve for x>0: 1/sqrt(x+4)=2"]);
    }

    #[test]
    fn proposals_drop_reference_echoes() {
        let config = SynthConfig::default();
        let r = refs(3);
        let teacher = teacher_of(ScriptedTeacher::new("t").contains_many(
            "[SKILL]",
            vec![
                format!("<question>{}</question>", r[0].question_text),
                "<question>a genuinely new question</question>".into(),
            ],
        ));
        let qs = propose_questions(&r, "s", &teacher, &config).unwrap();
        assert_eq!(qs, vec!["a genuinely new question"]);
    }

    #[test]
    fn unparseable_proposals_are_skipped() {
        let config = SynthConfig::default();
        let r = refs(3);
        let teacher = teacher_of(ScriptedTeacher::new("t").contains_many(
            "[SKILL]",
            vec![
                "no tags".into(),
                "<question>kept one</question>".into(),
            ],
        ));
        let qs = propose_questions(&r, "s", &teacher, &config).unwrap();
        assert_eq!(qs, vec!["kept one"]);
    }

    fn solutions(answers: &[&str]) -> Vec<String> {
        answers
            .iter()
            .map(|a| format!("working … \\boxed{{{a}}}"))
            .collect()
    }

    #[test]
    fn consistency_scoring() {
        let r = score_consistency(&solutions(&["5", "5", "7"]));
        assert_eq!(r.score, 2);
        assert_eq!(r.majority_answer.as_deref(), Some("5"));
        assert_eq!(r.kept_indices, vec![0, 1]);

        let r = score_consistency(&solutions(&["1", "2", "3"]));
        assert_eq!(r.score, 1);

        let r = score_consistency(&solutions(&["4", "4", "4"]));
        assert_eq!(r.score, 3);
        assert_eq!(r.kept_indices, vec![0, 1, 2]);
    }

    #[test]
    fn consistency_ignores_unextractable_answers() {
        let mut sols = solutions(&["9", "9"]);
        sols.push("no boxed answer at all".into());
        let r = score_consistency(&sols);
        assert_eq!(r.score, 2);
        assert_eq!(r.kept_indices, vec![0, 1]);

        let r = score_consistency(&["nothing".to_string(), "here".to_string()]);
        assert_eq!(r.score, 0);
        assert!(r.majority_answer.is_none());
    }

    #[test]
    fn consistency_ties_break_lexicographically() {
        let r = score_consistency(&solutions(&["b", "a", "b", "a"]));
        assert_eq!(r.score, 2);
        assert_eq!(r.majority_answer.as_deref(), Some("a"));
        assert_eq!(r.kept_indices, vec![1, 3]);
    }

    /// Corpus + bank + skill map where each skill holds enough questions.
    fn synth_fixture(
        n_train: usize,
        skills: &[&str],
    ) -> (Corpus, AnswerBank, SkillMap) {
        let questions: Vec<Question> = (0..n_train)
            .map(|i| question(&format!("p{i:03}"), Split::Train))
            .collect();
        let mut bank = AnswerBank::new();
        let mut map = SkillMap::new();
        for (i, q) in questions.iter().enumerate() {
            bank.insert(
                &q.id,
                Answer {
                    text: format!("known solution {} \\boxed{{{}}}", q.id, i),
                    origin: AnswerOrigin::Original,
                },
            );
            map.insert(skills[i % skills.len()], &q.id);
        }
        (Corpus::new(questions).unwrap(), bank, map)
    }

    /// Teacher that proposes one deterministic question per prompt and
    /// solves every proposal with three agreeing solutions.
    fn consistent_teacher() -> Teacher {
        let script = ScriptedTeacher::new("t")
            .contains("Solve the following math question", "steps … \\boxed{42}")
            .contains_many(
                "[SKILL]",
                vec![
                    "<question>synthesized question A</question>".into(),
                    "<question>synthesized question B</question>".into(),
                ],
            );
        teacher_of(script)
    }

    #[test]
    fn stat_syn_planted_arithmetic() {
        let (corpus, bank, map) = synth_fixture(30, &["a", "b"]);
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("d1", vec!["a".into()]);
        profile.insert("d2", vec!["a".into(), "b".into()]);
        let config = SynthConfig {
            target_pairs: 1000,
            ..SynthConfig::default()
        };
        let (dataset, audit, stats) =
            stat_syn(&profile, &map, &corpus, &bank, &consistent_teacher(), &config).unwrap();
        // 3 (difficult, skill) pairs × 2 proposals = 6 candidates, all kept,
        // each contributing 3 agreeing solutions — but identical question
        // texts collapse at the (question, solution) level.
        assert_eq!(stats.candidates, 6);
        assert_eq!(stats.accepted, 6);
        assert_eq!(audit.len(), 6);
        // Scripted teacher emits two distinct texts and one solution string:
        // 2 unique (question, solution) pairs survive deduplication.
        assert_eq!(dataset.len(), 2);
        for pair in &dataset.pairs {
            assert_eq!(pair.provenance, Provenance::Synthetic);
            assert_eq!(pair.source_method, SourceMethod::StatSyn);
            assert!(pair.id.starts_with("syn-"));
            assert_eq!(pair.skills.len(), 1);
        }
    }

    #[test]
    fn stat_syn_rejects_when_all_disagree() {
        let (corpus, bank, map) = synth_fixture(12, &["a"]);
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("d1", vec!["a".into()]);
        let script = ScriptedTeacher::new("t")
            .contains("[SKILL]", "<question>new question</question>")
            .contains_many(
                "Solve the following math question",
                vec![
                    "\\boxed{1}".into(),
                    "\\boxed{2}".into(),
                    "\\boxed{3}".into(),
                ],
            );
        let err = stat_syn(
            &profile,
            &map,
            &corpus,
            &bank,
            &teacher_of(script),
            &SynthConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CurationError::EmptyPool));
    }

    #[test]
    fn stat_syn_audit_supports_reverification() {
        let (corpus, bank, map) = synth_fixture(30, &["a", "b", "c"]);
        let mut profile = MissingSkillProfile::new("m");
        for i in 0..6 {
            profile.insert(&format!("d{i}"), vec!["a".into(), "c".into()]);
        }
        // Per-question solutions: two agree, one differs.
        let script = ScriptedTeacher::new("t")
            .contains_many(
                "[SKILL]",
                vec![
                    "<question>alpha question</question>".into(),
                    "<question>beta question</question>".into(),
                ],
            )
            .contains_many(
                "Solve the following math question",
                vec![
                    "\\boxed{7}".into(),
                    "\\boxed{7}".into(),
                    "\\boxed{8}".into(),
                ],
            );
        let config = SynthConfig {
            target_pairs: 100,
            ..SynthConfig::default()
        };
        let (dataset, audit, _) =
            stat_syn(&profile, &map, &corpus, &bank, &teacher_of(script), &config).unwrap();
        for record in &audit {
            let recheck = score_consistency(&record.solutions);
            assert_eq!(recheck.score, record.consistency_score);
            assert_eq!(recheck.kept_indices, record.kept_indices);
            assert_eq!(record.accepted, record.consistency_score >= 2);
        }
        // Every emitted solution is a kept solution of its audit record.
        for pair in &dataset.pairs {
            let record = audit
                .iter()
                .find(|r| r.question_text == pair.question_text)
                .unwrap();
            assert!(record
                .kept_indices
                .iter()
                .any(|&i| record.solutions[i] == pair.answer_text));
        }
    }

    #[test]
    fn stat_syn_small_pools_sample_with_replacement() {
        let (corpus, bank, map) = synth_fixture(2, &["a"]);
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("d1", vec!["a".into()]);
        let config = SynthConfig {
            target_pairs: 10,
            ..SynthConfig::default()
        };
        let (dataset, audit, _) =
            stat_syn(&profile, &map, &corpus, &bank, &consistent_teacher(), &config).unwrap();
        assert!(!dataset.is_empty());
        assert_eq!(audit[0].reference_ids.len(), 3);
    }

    #[test]
    fn stat_syn_is_deterministic() {
        let (corpus, bank, map) = synth_fixture(30, &["a", "b"]);
        let mut profile = MissingSkillProfile::new("m");
        profile.insert("d1", vec!["a".into(), "b".into()]);
        let config = SynthConfig {
            target_pairs: 50,
            seed: 9,
            ..SynthConfig::default()
        };
        let run = || {
            stat_syn(&profile, &map, &corpus, &bank, &consistent_teacher(), &config)
                .unwrap()
                .0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn embed_syn_candidate_bound_and_recheck() {
        use crate::backends::HashedEmbedding;
        let mut questions = vec![question("d1", Split::Val)];
        questions.extend((0..8).map(|i| question(&format!("p{i:03}"), Split::Train)));
        let mut bank = AnswerBank::new();
        for i in 0..8 {
            bank.insert(
                &format!("p{i:03}"),
                Answer {
                    text: format!("sol \\boxed{{{i}}}"),
                    origin: AnswerOrigin::Original,
                },
            );
        }
        let corpus = Corpus::new(questions).unwrap();
        let teacher = teacher_of(
            ScriptedTeacher::new("t")
                .contains_many(
                    "[QUESTION 1]",
                    vec![
                        "<question>synth via neighbors one</question>".into(),
                        "<question>synth via neighbors two</question>".into(),
                        "<question>synth via neighbors three</question>".into(),
                        "<question>synth via neighbors four</question>".into(),
                        "<question>synth via neighbors five</question>".into(),
                    ],
                )
                .contains("Solve the following math question", "\\boxed{11}"),
        );
        let config = SynthConfig {
            target_pairs: 100,
            ..SynthConfig::embed_defaults()
        };
        let backend = HashedEmbedding::new(8);
        let (dataset, audit, _) = embed_syn(
            &["d1".to_string()].into(),
            &corpus,
            &bank,
            &backend,
            &teacher,
            &config,
        )
        .unwrap();
        // One difficult question: at most 5 proposals × 3 solutions.
        assert!(audit.len() <= 5);
        assert!(dataset.len() <= 15);
        for pair in &dataset.pairs {
            assert!(pair.skills.is_empty());
            assert_eq!(pair.source_method, SourceMethod::EmbedSyn);
        }
        // Kept pairs re-verify at or above the consistency floor.
        for record in &audit {
            if record.accepted {
                assert!(score_consistency(&record.solutions).score >= 2);
            }
        }
    }

    #[test]
    fn audit_log_round_trip() {
        let record = SynthAuditRecord {
            difficult_id: "d1".into(),
            target_skill: Some("a".into()),
            reference_ids: vec!["p1".into()],
            question_text: "q".into(),
            solutions: vec!["\\boxed{1}".into()],
            consistency_score: 1,
            majority_answer: Some("1".into()),
            kept_indices: vec![0],
            accepted: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        save_audit_log(std::slice::from_ref(&record), &path).unwrap();
        let loaded = load_audit_log(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].question_text, record.question_text);
        assert_eq!(loaded[0].accepted, record.accepted);
    }
}

//! Teacher-driven skill annotation and missing-skill diagnosis: builds the
//! skill → training-questions index, diagnoses difficult responses into a
//! per-student missing-skill profile, and computes profile analytics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

use crate::backends::{fan_out, parse_tagged, BackendError, Purpose, Teacher, TeacherRequest};
use crate::corpus::{
    canonical_skill, CurationDataset, MissingSkillProfile, Question, SkillMap, Subject, TraceSet,
};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed skill catalog {path}: {message}")]
    MalformedCatalog { path: String, message: String },
    #[error("no skill catalog entry for subject {0}")]
    UnknownSubject(Subject),
    #[error("skill catalog entry for subject {0} is empty")]
    EmptyCatalog(Subject),
    #[error("trace for question {trace} paired with question {question}")]
    TraceMismatch { trace: String, question: String },
    #[error("difficult questions without a trace: {}", .0.join(", "))]
    MissingTraces(Vec<String>),
    #[error("difficult questions not present in the corpus: {}", .0.join(", "))]
    MissingQuestions(Vec<String>),
    #[error("profiles share no questions")]
    NoSharedQuestions,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// The fixed catalog of admissible skills, grouped by subject. Loaded from
/// a data file; the pipeline never invents skill names.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillCatalog {
    subjects: BTreeMap<Subject, Vec<String>>,
}

impl SkillCatalog {
    pub fn new(subjects: BTreeMap<Subject, Vec<String>>) -> Self {
        let subjects = subjects
            .into_iter()
            .map(|(subject, skills)| {
                let mut seen = BTreeSet::new();
                let canon: Vec<String> = skills
                    .iter()
                    .map(|s| canonical_skill(s))
                    .filter(|s| seen.insert(s.clone()))
                    .collect();
                (subject, canon)
            })
            .collect();
        SkillCatalog { subjects }
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| ProfileError::MalformedCatalog {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let mut subjects = BTreeMap::new();
        for (name, skills) in raw {
            let subject = Subject::ALL
                .into_iter()
                .find(|s| s.as_str() == name)
                .ok_or_else(|| ProfileError::MalformedCatalog {
                    path: path.display().to_string(),
                    message: format!("unknown subject {name:?}"),
                })?;
            subjects.insert(subject, skills);
        }
        Ok(SkillCatalog::new(subjects))
    }

    pub fn skills_for(&self, subject: Subject) -> Option<&[String]> {
        self.subjects.get(&subject).map(|v| v.as_slice())
    }

    pub fn contains(&self, subject: Subject, skill: &str) -> bool {
        self.skills_for(subject)
            .map(|skills| skills.iter().any(|s| s == skill))
            .unwrap_or(false)
    }

    /// Union of all per-subject skill names.
    pub fn all_skills(&self) -> BTreeSet<String> {
        self.subjects.values().flatten().cloned().collect()
    }

    /// Total number of per-subject skill entries.
    pub fn total(&self) -> usize {
        self.subjects.values().map(|v| v.len()).sum()
    }

    pub fn subjects(&self) -> impl Iterator<Item = (&Subject, &Vec<String>)> {
        self.subjects.iter()
    }
}

fn render_skill_list(skills: &[String]) -> String {
    let body: Vec<String> = skills.iter().map(|s| format!("  \"{s}\"")).collect();
    format!("[\n{}\n]", body.join(",\n"))
}

/// Render the skill-annotation prompt for one question. The output contains
/// every catalog skill for the question's subject verbatim.
pub fn build_annotation_prompt(
    question: &Question,
    catalog: &SkillCatalog,
) -> Result<String, ProfileError> {
    let skills = catalog
        .skills_for(question.subject)
        .ok_or(ProfileError::UnknownSubject(question.subject))?;
    if skills.is_empty() {
        return Err(ProfileError::EmptyCatalog(question.subject));
    }
    Ok(format!(
        "[TASK]\n\
         You'll be given a math question. Your task is to output:\n\
         (1) <skill> list here up to five skill(s) that are required to solve this problem, seperated by commas </skill>.\n\
         (2) <reason> reason here why these skills are needed </reason>.\n\
         \n\
         [SKILL LIST]\n\
         You should only choose the skills from this list:\n\
         {}\n\
         \n\
         [QUESTION]\n\
         {}\n\
         \n\
         [REASON AND SKILL(S)]\n",
        render_skill_list(skills),
        question.text
    ))
}

/// Render the missing-skill identification prompt for one question and the
/// student's step-by-step solution.
pub fn build_diagnosis_prompt(
    question: &Question,
    solution: &str,
    catalog: &SkillCatalog,
) -> Result<String, ProfileError> {
    let skills = catalog
        .skills_for(question.subject)
        .ok_or(ProfileError::UnknownSubject(question.subject))?;
    if skills.is_empty() {
        return Err(ProfileError::EmptyCatalog(question.subject));
    }
    Ok(format!(
        "[TASK]\n\
         You'll be given a math question and a step-by-step solution written by a Small Language Model. Your task is to output:\n\
         (1) <judge> judge here whether the solution is correct or incorrect </judge>\n\
         (2) <reason> if it's incorrect, reason here why the solution is incorrect </reason>,\n\
         (3) <skill> list here what skill(s) should the SLM enhance in order to answer correctly, seperated by commas </skill>.\n\
         \n\
         [SKILL LIST]\n\
         You should only choose the skills from this list:\n\
         {}\n\
         \n\
         [QUESTION]\n\
         {}\n\
         \n\
         [MODEL_SOLUTION]\n\
         {}\n\
         \n\
         [YOUR REASON AND SKILL(S)]\n",
        render_skill_list(skills),
        question.text,
        solution
    ))
}

/// Split a comma-separated skill tag, canonicalize, and keep only names in
/// the subject's catalog, preserving order and dropping repeats.
fn filter_skills(raw: &str, subject: Subject, catalog: &SkillCatalog) -> Vec<String> {
    let mut seen = BTreeSet::new();
    raw.split(',')
        .map(canonical_skill)
        .filter(|s| !s.is_empty())
        .filter(|s| catalog.contains(subject, s))
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

const ANNOTATION_CAP: usize = 5;

/// Ask the teacher which catalog skills a question requires. Unparseable
/// output after the retry budget yields an empty annotation.
pub fn annotate_question(
    question: &Question,
    catalog: &SkillCatalog,
    teacher: &Teacher,
) -> Result<Vec<String>, ProfileError> {
    let prompt = build_annotation_prompt(question, catalog)?;
    let mut request = TeacherRequest::new(prompt, Purpose::Annotate);
    request.temperature = 0.0;
    for attempt in 0..=teacher.parse_retries {
        let raw = teacher.complete_sample(&request, attempt)?;
        match parse_tagged(&raw, &["skill"]) {
            Ok(tagged) => {
                let mut skills = filter_skills(
                    tagged.first("skill").unwrap_or(""),
                    question.subject,
                    catalog,
                );
                skills.truncate(ANNOTATION_CAP);
                return Ok(skills);
            }
            Err(e) => {
                log::warn!(
                    "annotation parse failure for {} (attempt {attempt}): {e}",
                    question.id
                );
            }
        }
    }
    Ok(Vec::new())
}

/// Annotate every training question and invert the result into a skill map.
/// Per-question parse failures are logged and skipped; backend failures
/// abort the build.
pub fn build_skill_map(
    train_questions: &[&Question],
    catalog: &SkillCatalog,
    teacher: &Teacher,
) -> Result<(SkillMap, Vec<String>), ProfileError> {
    let results = fan_out(train_questions, teacher.max_in_flight, |q| {
        annotate_question(q, catalog, teacher).map(|skills| (q.id.clone(), skills))
    });
    let mut map = SkillMap::new();
    let mut warnings = Vec::new();
    for result in results {
        let (id, skills) = result?;
        if skills.is_empty() {
            warnings.push(format!("no usable annotation for question {id}"));
            continue;
        }
        for skill in skills {
            map.insert(&skill, &id);
        }
    }
    Ok((map, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    Correct,
    Incorrect,
    Unparseable,
}

/// One teacher verdict over a student's response.
#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Diagnosis {
    pub question_id: String,
    pub judge: Judge,
    pub reason: String,
    pub missing_skills: Vec<String>,
}

fn parse_judge(raw: &str) -> Option<Judge> {
    let token = raw.trim().trim_end_matches('.').to_lowercase();
    match token.as_str() {
        "correct" => Some(Judge::Correct),
        "incorrect" => Some(Judge::Incorrect),
        _ => None,
    }
}

/// Ask the teacher to judge a response and list the skills the student
/// failed to apply. Judged-correct responses carry no missing skills.
pub fn diagnose_response(
    question: &Question,
    trace: &crate::corpus::ResponseTrace,
    catalog: &SkillCatalog,
    teacher: &Teacher,
) -> Result<Diagnosis, ProfileError> {
    if trace.question_id != question.id {
        return Err(ProfileError::TraceMismatch {
            trace: trace.question_id.clone(),
            question: question.id.clone(),
        });
    }
    let prompt = build_diagnosis_prompt(question, &trace.full_text(), catalog)?;
    let mut request = TeacherRequest::new(prompt, Purpose::Diagnose);
    request.temperature = 0.0;
    for attempt in 0..=teacher.parse_retries {
        let raw = teacher.complete_sample(&request, attempt)?;
        let tagged = match parse_tagged(&raw, &["judge"]) {
            Ok(t) => t,
            Err(e) => {
                log::warn!(
                    "diagnosis parse failure for {} (attempt {attempt}): {e}",
                    question.id
                );
                continue;
            }
        };
        let judge = match tagged.first("judge").and_then(parse_judge) {
            Some(j) => j,
            None => {
                log::warn!(
                    "unrecognized judge value for {} (attempt {attempt})",
                    question.id
                );
                continue;
            }
        };
        let reason = parse_tagged(&raw, &["reason"])
            .ok()
            .and_then(|t| t.first("reason").map(|s| s.to_string()))
            .unwrap_or_default();
        let missing_skills = if judge == Judge::Correct {
            Vec::new()
        } else {
            parse_tagged(&raw, &["skill"])
                .ok()
                .map(|t| filter_skills(t.first("skill").unwrap_or(""), question.subject, catalog))
                .unwrap_or_default()
        };
        return Ok(Diagnosis {
            question_id: question.id.clone(),
            judge,
            reason,
            missing_skills,
        });
    }
    Ok(Diagnosis {
        question_id: question.id.clone(),
        judge: Judge::Unparseable,
        reason: String::new(),
        missing_skills: Vec::new(),
    })
}

/// Diagnose every difficult validation question and keep the entries with
/// non-empty missing skills.
pub fn build_missing_skill_profile(
    difficult_val: &BTreeSet<String>,
    corpus: &crate::corpus::Corpus,
    traces: &TraceSet,
    catalog: &SkillCatalog,
    teacher: &Teacher,
) -> Result<(MissingSkillProfile, Vec<String>), ProfileError> {
    let mut missing_traces = Vec::new();
    let mut missing_questions = Vec::new();
    let mut work: Vec<(&Question, &crate::corpus::ResponseTrace)> = Vec::new();
    for id in difficult_val {
        let question = match corpus.get(id) {
            Some(q) => q,
            None => {
                missing_questions.push(id.clone());
                continue;
            }
        };
        match traces.primary(id) {
            Some(trace) => work.push((question, trace)),
            None => missing_traces.push(id.clone()),
        }
    }
    if !missing_questions.is_empty() {
        return Err(ProfileError::MissingQuestions(missing_questions));
    }
    if !missing_traces.is_empty() {
        return Err(ProfileError::MissingTraces(missing_traces));
    }

    let model_id = work
        .first()
        .map(|(_, t)| t.model_id.clone())
        .unwrap_or_else(|| "unknown".to_string());
    let warnings = Mutex::new(Vec::new());
    let results = fan_out(&work, teacher.max_in_flight, |(question, trace)| {
        diagnose_response(question, trace, catalog, teacher).inspect(|d| {
            if d.judge == Judge::Unparseable {
                warnings
                    .lock()
                    .unwrap()
                    .push(format!("unparseable diagnosis for {}", question.id));
            }
        })
    });
    let mut profile = MissingSkillProfile::new(&model_id);
    for result in results {
        let diagnosis = result?;
        profile.insert(&diagnosis.question_id, diagnosis.missing_skills);
    }
    let mut warnings = warnings.into_inner().unwrap();
    warnings.sort();
    Ok((profile, warnings))
}

/// Skills ranked by descending frequency over all profile entries, ties
/// broken lexicographically.
pub fn top_k_missing(profile: &MissingSkillProfile, k: usize) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, skills) in profile.entries() {
        for skill in skills {
            *counts.entry(skill).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(s, c)| (s.to_string(), c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Normalized histogram over the skills associated with a dataset's pairs.
/// Pairs without skill tags fall back to the skill map's annotations for
/// their question id; pairs with no skills at all land in `untagged`.
pub fn skill_distribution(
    dataset: &CurationDataset,
    skill_map: &SkillMap,
) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for pair in &dataset.pairs {
        let skills = if pair.skills.is_empty() {
            skill_map.skills_of(&pair.id)
        } else {
            pair.skills.clone()
        };
        if skills.is_empty() {
            *counts.entry("untagged".to_string()).or_default() += 1;
            total += 1;
        } else {
            for skill in skills {
                *counts.entry(skill).or_default() += 1;
                total += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(skill, count)| (skill, count as f64 / total.max(1) as f64))
        .collect()
}

/// Average fraction of the reference profile's skills that the other profile
/// also predicts, over shared questions. Asymmetric: `reference` is the
/// denominator side.
pub fn profile_agreement(
    reference: &MissingSkillProfile,
    other: &MissingSkillProfile,
) -> Result<f64, ProfileError> {
    let mut shared = 0usize;
    let mut sum = 0.0;
    for (question_id, ref_skills) in reference.entries() {
        let Some(other_skills) = other.get(question_id) else {
            continue;
        };
        let ref_set: BTreeSet<&String> = ref_skills.iter().collect();
        let other_set: BTreeSet<&String> = other_skills.iter().collect();
        if ref_set.is_empty() {
            continue;
        }
        shared += 1;
        sum += ref_set.intersection(&other_set).count() as f64 / ref_set.len() as f64;
    }
    if shared == 0 {
        return Err(ProfileError::NoSharedQuestions);
    }
    Ok(sum / shared as f64)
}

//! Stage orchestration. Stages communicate only through persisted files, so
//! any stage can be rerun or swapped without re-running the others. All
//! emitted artifacts are deterministic functions of (inputs, config, seed,
//! cache); wall-clock timings go to the log, never into artifacts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, CacheMode, CacheStats, CachedTeacher, EmbeddingBackend, HashedEmbedding,
    PassThroughRewards, RemoteRewards, RemoteTeacher, RewardBackend, ScriptedEmbedding,
    ScriptedRewards, ScriptedTeacher, Teacher, TeacherBackend,
};
use crate::corpus::{
    emit_dataset, load_corpus, load_traces, Corpus, CorpusError, CurationDataset,
    MissingSkillProfile, ResponseTrace, SkillMap, SourceMethod, Split, SplitConfig, TraceSet,
};
use crate::curation_select::{
    baseline_math_augment, baseline_math_hard, baseline_math_train, embed_sel, stat_sel,
    AnswerBank, CurationError, SelectConfig, SelectStats,
};
use crate::curation_synth::{
    embed_syn, save_audit_log, stat_syn, SynthConfig, SynthStats,
};
use crate::reward_filter::{
    classification_metrics, ground_truth_incorrect, partition, threshold_grid,
    DifficultPartition, FilterConfig, FilterError, FilterMode,
};
use crate::skill_profile::{
    build_missing_skill_profile, build_skill_map, profile_agreement, skill_distribution,
    top_k_missing, ProfileError, SkillCatalog,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {path}; {hint}")]
    MissingArtifact { path: String, hint: String },
}

impl PipelineError {
    /// Stable kind tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Filter(_) => "filter",
            PipelineError::Profile(_) => "profile",
            PipelineError::Curation(_) => "curation",
            PipelineError::Backend(_) => "backend",
            PipelineError::Io { .. } => "io",
            PipelineError::Config(_) => "config",
            PipelineError::MissingArtifact { .. } => "missing_artifact",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub questions: PathBuf,
    pub traces: PathBuf,
    #[serde(default)]
    pub answers: Option<PathBuf>,
    pub skill_catalog: PathBuf,
    #[serde(default)]
    pub skill_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherKind {
    Scripted { script: PathBuf },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
    },
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retries() -> u32 {
    3
}

fn default_mode() -> CacheMode {
    CacheMode::Live
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherConfig {
    #[serde(flatten)]
    pub kind: TeacherKind,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub mode: CacheMode,
}

fn default_dim() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    /// Deterministic digest-derived vectors.
    Hashed {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Fixed text → vector table from a JSON file.
    Scripted { table: PathBuf },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashed { dim: 16 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardConfig {
    /// Use the step rewards embedded in the trace file.
    #[default]
    PassThrough,
    /// Fixed step-text → score table from a JSON file.
    Scripted {
        table: PathBuf,
        #[serde(default)]
        default_score: Option<f64>,
    },
    /// Remote scorer endpoint.
    Remote {
        endpoint: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_method() -> SourceMethod {
    SourceMethod::StatSel
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: SourceMethod,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: default_method(),
            output_dir: default_output_dir(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: CorpusPaths,
    #[serde(default)]
    pub split: SplitConfig,
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut required: Vec<&Path> = vec![
            &self.paths.questions,
            &self.paths.traces,
            &self.paths.skill_catalog,
        ];
        if let Some(answers) = &self.paths.answers {
            required.push(answers);
        }
        if let Some(map) = &self.paths.skill_map {
            required.push(map);
        }
        if let TeacherKind::Scripted { script } = &self.teacher.kind {
            required.push(script);
        }
        for path in required {
            if !path.exists() {
                return Err(PipelineError::Config(format!(
                    "referenced path does not exist: {}",
                    path.display()
                )));
            }
        }
        self.filter.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    fn output(&self, name: &str) -> PathBuf {
        self.run.output_dir.join(name)
    }
}

/// Everything a run emits besides the dataset itself. Deterministic given
/// (inputs, config, seed, cache); contains no wall-clock data.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub method: String,
    pub continual: bool,
    pub prior_dataset_tag: Option<String>,
    pub seed: u64,
    pub counts: BTreeMap<String, u64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub warnings: Vec<String>,
    /// Full config snapshot for provenance. Secrets never enter the config:
    /// auth fields name environment variables, not token values.
    pub config: PipelineConfig,
}

impl RunManifest {
    fn new(config: &PipelineConfig, method: SourceMethod) -> Self {
        RunManifest {
            method: method.as_str().to_string(),
            continual: false,
            prior_dataset_tag: None,
            seed: config.run.seed,
            counts: BTreeMap::new(),
            cache_hits: 0,
            cache_misses: 0,
            warnings: Vec::new(),
            config: config.clone(),
        }
    }

    fn count(&mut self, key: &str, value: u64) {
        self.counts.insert(key.to_string(), value);
    }

    fn absorb_select_stats(&mut self, stats: &SelectStats) {
        self.count("raw_pool", stats.raw_pool as u64);
        self.count("pool_size", stats.pool_size as u64);
        self.count("dedup_removed", stats.dedup_removed as u64);
        self.warnings.extend(stats.warnings.iter().cloned());
    }

    fn absorb_synth_stats(&mut self, stats: &SynthStats) {
        self.absorb_select_stats(&stats.select);
        self.count("candidates", stats.candidates as u64);
        self.count("accepted", stats.accepted as u64);
        self.count("rejected", stats.rejected as u64);
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let body = serde_json::to_string_pretty(self).expect("manifest serialization");
        crate::corpus::write_atomic(path, format!("{body}\n").as_bytes())?;
        Ok(())
    }
}

/// Handles to the configured backends, built once per run.
pub struct Backends {
    pub teacher: Teacher,
    cached: Option<Arc<CachedTeacher>>,
    pub embedding: Box<dyn EmbeddingBackend>,
    pub reward: Box<dyn RewardBackend>,
}

impl Backends {
    pub fn build(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let inner: Arc<dyn TeacherBackend> = match &config.teacher.kind {
            TeacherKind::Scripted { script } => {
                Arc::new(ScriptedTeacher::from_file("scripted", script)?)
            }
            TeacherKind::Remote {
                endpoint,
                model,
                auth_env,
            } => Arc::new(RemoteTeacher::new(
                endpoint.clone(),
                model.clone(),
                auth_env.as_deref(),
                config.teacher.retries,
            )),
        };
        let mut cached = None;
        let backend: Arc<dyn TeacherBackend> = match (&config.teacher.cache_dir, config.teacher.mode)
        {
            (Some(dir), mode) if mode != CacheMode::Live => {
                let wrapper = Arc::new(CachedTeacher::new(inner, dir.clone(), mode));
                cached = Some(wrapper.clone());
                wrapper
            }
            (None, mode) if mode != CacheMode::Live => {
                return Err(PipelineError::Config(
                    "cache mode set but teacher.cache_dir is missing".into(),
                ));
            }
            _ => inner,
        };
        let teacher = Teacher::new(backend).with_max_in_flight(config.teacher.max_in_flight);

        let embedding: Box<dyn EmbeddingBackend> = match &config.embedding {
            EmbeddingConfig::Hashed { dim } => Box::new(HashedEmbedding::new(*dim)),
            EmbeddingConfig::Scripted { table } => {
                let text = std::fs::read_to_string(table).map_err(|source| PipelineError::Io {
                    path: table.display().to_string(),
                    source,
                })?;
                let table_map: HashMap<String, Vec<f64>> = serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Config(format!("embedding table: {e}")))?;
                Box::new(ScriptedEmbedding::new("scripted", table_map))
            }
        };

        let reward: Box<dyn RewardBackend> = match &config.reward {
            RewardConfig::PassThrough => Box::new(PassThroughRewards),
            RewardConfig::Scripted {
                table,
                default_score,
            } => {
                let text = std::fs::read_to_string(table).map_err(|source| PipelineError::Io {
                    path: table.display().to_string(),
                    source,
                })?;
                let table_map: HashMap<String, f64> = serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Config(format!("reward table: {e}")))?;
                let mut backend = ScriptedRewards::new(table_map);
                if let Some(score) = default_score {
                    backend = backend.with_default(*score);
                }
                Box::new(backend)
            }
            RewardConfig::Remote {
                endpoint,
                auth_env,
                retries,
            } => Box::new(RemoteRewards::new(
                endpoint.clone(),
                auth_env.as_deref(),
                *retries,
            )),
        };

        Ok(Backends {
            teacher,
            cached,
            embedding,
            reward,
        })
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cached
            .as_ref()
            .map(|c| c.stats())
            .unwrap_or_default()
    }
}

struct LoadedInputs {
    corpus: Corpus,
    traces: TraceSet,
    catalog: SkillCatalog,
    answers: AnswerBank,
}

fn load_inputs(config: &PipelineConfig) -> Result<LoadedInputs, PipelineError> {
    let corpus = load_corpus(&config.paths.questions, &config.split)?;
    let traces = load_traces(&config.paths.traces)?;
    let catalog = SkillCatalog::load(&config.paths.skill_catalog)?;
    let answers = match &config.paths.answers {
        Some(path) => AnswerBank::load(path)?,
        None => AnswerBank::new(),
    };
    Ok(LoadedInputs {
        corpus,
        traces,
        catalog,
        answers,
    })
}

/// Fill in step rewards on val/test traces from the reward backend when the
/// filter mode needs them and the trace file does not carry them.
fn materialize_rewards(
    corpus: &Corpus,
    traces: TraceSet,
    config: &PipelineConfig,
    reward: &dyn RewardBackend,
) -> Result<TraceSet, PipelineError> {
    let needs_rewards = matches!(
        config.filter.mode,
        FilterMode::PrmThreshold | FilterMode::OrmThreshold
    );
    if !needs_rewards || matches!(config.reward, RewardConfig::PassThrough) {
        return Ok(traces);
    }
    let mut updated: Vec<ResponseTrace> = traces.iter().cloned().collect();
    for trace in &mut updated {
        let in_eval_split = corpus
            .get(&trace.question_id)
            .map(|q| q.split != Split::Train)
            .unwrap_or(false);
        if in_eval_split && trace.step_rewards.is_none() {
            let scores = crate::backends::fetch_step_rewards(trace, reward)?;
            trace.step_rewards = Some(scores);
        }
    }
    Ok(TraceSet::new(updated)?)
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), PipelineError> {
    let mut body = String::with_capacity(rows.len() * 32 + header.len() + 1);
    body.push_str(header);
    body.push('\n');
    for row in rows {
        body.push_str(row);
        body.push('\n');
    }
    crate::corpus::write_atomic(path, body.as_bytes())?;
    Ok(())
}

/// Stage 1: classify difficulty, persist the partition and the per-subject
/// proportion report.
pub fn run_stage1(config: &PipelineConfig) -> Result<DifficultPartition, PipelineError> {
    run_stage1_tagged(config, "")
}

fn run_stage1_tagged(
    config: &PipelineConfig,
    prefix: &str,
) -> Result<DifficultPartition, PipelineError> {
    let started = Instant::now();
    let inputs = load_inputs(config)?;
    let backends = Backends::build(config)?;
    let traces = materialize_rewards(
        &inputs.corpus,
        inputs.traces,
        config,
        backends.reward.as_ref(),
    )?;
    let result = partition(&inputs.corpus, &traces, &config.filter)?;
    result.save(&config.output(&format!("{prefix}partition.json")))?;

    let mut totals: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for q in inputs.corpus.iter().filter(|q| q.split != Split::Train) {
        let entry = totals.entry(q.subject.as_str()).or_default();
        entry.0 += 1;
        if result.difficult_val.contains(&q.id) || result.difficult_test.contains(&q.id) {
            entry.1 += 1;
        }
    }
    let rows: Vec<String> = totals
        .iter()
        .map(|(subject, (total, difficult))| {
            format!(
                "{subject},{total},{difficult},{}",
                *difficult as f64 / (*total).max(1) as f64
            )
        })
        .collect();
    write_csv(
        &config.output(&format!("{prefix}subject_report.csv")),
        "subject,n_total,n_difficult,proportion",
        &rows,
    )?;
    log::info!(
        "stage1: {} difficult val, {} difficult test in {:?}",
        result.difficult_val.len(),
        result.difficult_test.len(),
        started.elapsed()
    );
    Ok(result)
}

/// Stage 2: diagnose difficult validation questions into a profile, persist
/// it with the top-10 missing-skill report.
pub fn run_stage2(
    config: &PipelineConfig,
    partition: &DifficultPartition,
) -> Result<MissingSkillProfile, PipelineError> {
    run_stage2_tagged(config, partition, "")
}

fn run_stage2_tagged(
    config: &PipelineConfig,
    partition: &DifficultPartition,
    prefix: &str,
) -> Result<MissingSkillProfile, PipelineError> {
    let started = Instant::now();
    let inputs = load_inputs(config)?;
    let backends = Backends::build(config)?;
    let (profile, warnings) = build_missing_skill_profile(
        &partition.difficult_val,
        &inputs.corpus,
        &inputs.traces,
        &inputs.catalog,
        &backends.teacher,
    )?;
    if partition.difficult_val.is_empty() {
        log::warn!("stage2: empty difficult validation set; profile is empty");
    }
    for warning in &warnings {
        log::warn!("stage2: {warning}");
    }
    profile.save(&config.output(&format!("{prefix}profile.jsonl")))?;
    let rows: Vec<String> = top_k_missing(&profile, 10)
        .into_iter()
        .enumerate()
        .map(|(i, (skill, count))| format!("{},{skill},{count}", i + 1))
        .collect();
    write_csv(
        &config.output(&format!("{prefix}top_skills.csv")),
        "rank,skill,count",
        &rows,
    )?;
    log::info!(
        "stage2: profiled {} of {} difficult questions in {:?}",
        profile.len(),
        partition.difficult_val.len(),
        started.elapsed()
    );
    Ok(profile)
}

fn load_or_build_skill_map(
    config: &PipelineConfig,
    inputs: &LoadedInputs,
    teacher: &Teacher,
    manifest: &mut RunManifest,
    prefix: &str,
) -> Result<SkillMap, PipelineError> {
    if let Some(path) = &config.paths.skill_map {
        return Ok(SkillMap::load(path)?);
    }
    let train = inputs.corpus.in_split(Split::Train);
    let (map, warnings) = build_skill_map(&train, &inputs.catalog, teacher)?;
    manifest.warnings.extend(warnings);
    map.save(&config.output(&format!("{prefix}skill_map.jsonl")))?;
    Ok(map)
}

/// Stage 3: build the configured dataset, persist it with its manifest and
/// skill-distribution report (plus the synthesis audit log for synthetic
/// methods).
pub fn run_stage3(
    config: &PipelineConfig,
    method: SourceMethod,
) -> Result<(CurationDataset, RunManifest), PipelineError> {
    run_stage3_tagged(config, method, "", None)
}

fn artifact_or_hint<T>(
    loaded: Result<T, CorpusError>,
    path: &Path,
    hint: &str,
) -> Result<T, PipelineError> {
    loaded.map_err(|e| match e {
        CorpusError::Io { .. } => PipelineError::MissingArtifact {
            path: path.display().to_string(),
            hint: hint.to_string(),
        },
        other => PipelineError::Corpus(other),
    })
}

fn run_stage3_tagged(
    config: &PipelineConfig,
    method: SourceMethod,
    prefix: &str,
    continual_tag: Option<&str>,
) -> Result<(CurationDataset, RunManifest), PipelineError> {
    let started = Instant::now();
    let inputs = load_inputs(config)?;
    let backends = Backends::build(config)?;
    let mut manifest = RunManifest::new(config, method);
    if let Some(tag) = continual_tag {
        manifest.continual = true;
        manifest.prior_dataset_tag = Some(tag.to_string());
    }

    let profile_path = config.output(&format!("{prefix}profile.jsonl"));
    let partition_path = config.output(&format!("{prefix}partition.json"));

    let (dataset, skill_map) = match method {
        SourceMethod::MathTrain => {
            let (dataset, stats) = baseline_math_train(&inputs.corpus, &inputs.answers)?;
            manifest.absorb_select_stats(&stats);
            (dataset, SkillMap::new())
        }
        SourceMethod::MathAugment => {
            let (dataset, stats) =
                baseline_math_augment(&inputs.corpus, &inputs.answers, &config.select)?;
            manifest.absorb_select_stats(&stats);
            (dataset, SkillMap::new())
        }
        SourceMethod::MathHard => {
            let (dataset, stats) =
                baseline_math_hard(&inputs.corpus, &inputs.answers, &config.select)?;
            manifest.absorb_select_stats(&stats);
            (dataset, SkillMap::new())
        }
        SourceMethod::EmbedSel => {
            let partition = artifact_or_hint(
                DifficultPartition::load(&partition_path),
                &partition_path,
                "run stage1 first",
            )?;
            let (dataset, stats) = embed_sel(
                &partition.difficult_val,
                &inputs.corpus,
                &inputs.answers,
                backends.embedding.as_ref(),
                &config.select,
            )?;
            manifest.count("difficult_val", partition.difficult_val.len() as u64);
            manifest.absorb_select_stats(&stats);
            (dataset, SkillMap::new())
        }
        SourceMethod::EmbedSyn => {
            let partition = artifact_or_hint(
                DifficultPartition::load(&partition_path),
                &partition_path,
                "run stage1 first",
            )?;
            let (dataset, audit, stats) = embed_syn(
                &partition.difficult_val,
                &inputs.corpus,
                &inputs.answers,
                backends.embedding.as_ref(),
                &backends.teacher,
                &config.synth,
            )?;
            save_audit_log(&audit, &config.output(&format!("{prefix}audit_{method}.jsonl")))?;
            manifest.count("difficult_val", partition.difficult_val.len() as u64);
            manifest.absorb_synth_stats(&stats);
            (dataset, SkillMap::new())
        }
        SourceMethod::StatSel => {
            let profile = artifact_or_hint(
                MissingSkillProfile::load(&profile_path),
                &profile_path,
                "run stage2 first",
            )?;
            let skill_map = load_or_build_skill_map(
                config,
                &inputs,
                &backends.teacher,
                &mut manifest,
                prefix,
            )?;
            let (dataset, stats) = stat_sel(
                &profile,
                &skill_map,
                &inputs.corpus,
                &inputs.answers,
                &config.select,
            )?;
            manifest.count("profile_entries", profile.len() as u64);
            manifest.absorb_select_stats(&stats);
            (dataset, skill_map)
        }
        SourceMethod::StatSyn => {
            let profile = artifact_or_hint(
                MissingSkillProfile::load(&profile_path),
                &profile_path,
                "run stage2 first",
            )?;
            let skill_map = load_or_build_skill_map(
                config,
                &inputs,
                &backends.teacher,
                &mut manifest,
                prefix,
            )?;
            let (dataset, audit, stats) = stat_syn(
                &profile,
                &skill_map,
                &inputs.corpus,
                &inputs.answers,
                &backends.teacher,
                &config.synth,
            )?;
            save_audit_log(&audit, &config.output(&format!("{prefix}audit_{method}.jsonl")))?;
            manifest.count("profile_entries", profile.len() as u64);
            manifest.absorb_synth_stats(&stats);
            (dataset, skill_map)
        }
    };

    let dataset_path = config.output(&format!("{prefix}dataset_{method}.jsonl"));
    emit_dataset(&dataset, &dataset_path)?;

    manifest.count("emitted_pairs", dataset.len() as u64);
    manifest.count("unique_questions", dataset.unique_question_count() as u64);
    let stats = backends.cache_stats();
    manifest.cache_hits = stats.hits as u64;
    manifest.cache_misses = stats.misses as u64;
    manifest.warnings.sort();
    manifest.warnings.dedup();
    manifest.save(&config.output(&format!("{prefix}manifest_{method}.json")))?;

    let distribution = skill_distribution(&dataset, &skill_map);
    let rows: Vec<String> = distribution
        .iter()
        .map(|(skill, fraction)| format!("{skill},{fraction}"))
        .collect();
    write_csv(
        &config.output(&format!("{prefix}distribution_{method}.csv")),
        "skill,fraction",
        &rows,
    )?;

    log::info!(
        "stage3 [{method}]: emitted {} pairs in {:?}",
        dataset.len(),
        started.elapsed()
    );
    Ok((dataset, manifest))
}

/// Re-profile on a new validation corpus while still drawing training
/// examples from the original train split. Outputs carry a `continual_`
/// prefix; the degenerate case (new val equal to the old one) reproduces a
/// plain run byte-for-byte.
pub fn run_continual(
    config: &PipelineConfig,
    new_questions: &Path,
    new_traces: &Path,
    prior_dataset_tag: &str,
) -> Result<(CurationDataset, RunManifest), PipelineError> {
    // The new corpus supplies validation questions only: unassigned records
    // all land in val.
    let continual_split = SplitConfig {
        seed: config.split.seed,
        val_fraction: 1.0,
    };
    let stage12_config = PipelineConfig {
        paths: CorpusPaths {
            questions: new_questions.to_path_buf(),
            traces: new_traces.to_path_buf(),
            ..config.paths.clone()
        },
        split: continual_split,
        ..config.clone()
    };
    let partition = run_stage1_tagged(&stage12_config, "continual_")?;
    run_stage2_tagged(&stage12_config, &partition, "continual_")?;

    // Stage 3 reads the continual profile/partition but selects from the
    // original training corpus.
    let method = config.run.method;
    if matches!(method, SourceMethod::EmbedSel | SourceMethod::EmbedSyn) {
        // Embedding methods retrieve neighbors of the new difficult set from
        // the original train split; merge the new val questions into the
        // original corpus view by pointing stage 3 at the new corpus for
        // difficult ids while keeping train questions from the original.
        return Err(PipelineError::Config(
            "continual runs support stat_sel and stat_syn methods".into(),
        ));
    }
    run_stage3_tagged(config, method, "continual_", Some(prior_dataset_tag))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutcome {
    pub grid_path: PathBuf,
    pub best_tau1: f64,
    pub best_tau2: f64,
    pub best_f1: f64,
}

/// Threshold ablation: metrics per (tau1, tau2) cell against gold-answer
/// ground truth, plus the heuristic-classifier comparison when requested.
pub fn run_ablation(
    config: &PipelineConfig,
    tau1_values: &[f64],
    tau2_values: &[f64],
    include_heuristics: bool,
) -> Result<AblationOutcome, PipelineError> {
    let inputs = load_inputs(config)?;
    let backends = Backends::build(config)?;
    let traces = materialize_rewards(
        &inputs.corpus,
        inputs.traces,
        config,
        backends.reward.as_ref(),
    )?;
    let truth = ground_truth_incorrect(&inputs.corpus, &traces)?;
    let cells = threshold_grid(&inputs.corpus, &traces, &truth, tau1_values, tau2_values)?;

    let mut rows: Vec<String> = cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{},{}",
                c.tau1,
                c.tau2,
                c.metrics.accuracy,
                c.metrics.precision,
                c.metrics.recall,
                c.metrics.f1,
                c.n_difficult
            )
        })
        .collect();
    let best = cells
        .iter()
        .max_by(|a, b| {
            (a.metrics.f1, a.tau1, a.tau2)
                .partial_cmp(&(b.metrics.f1, b.tau1, b.tau2))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("grid is non-empty");
    rows.push(format!(
        "# best,tau1={},tau2={},f1={}",
        best.tau1, best.tau2, best.metrics.f1
    ));
    let grid_path = config.output("ablation_grid.csv");
    write_csv(
        &grid_path,
        "tau1,tau2,accuracy,precision,recall,f1,n_difficult",
        &rows,
    )?;

    if include_heuristics {
        let universe: BTreeSet<String> = inputs
            .corpus
            .iter()
            .filter(|q| q.split != Split::Train)
            .map(|q| q.id.clone())
            .collect();
        let mut heuristic_rows = Vec::new();
        for (label, mode) in [
            ("consistency_heuristic", FilterMode::ConsistencyHeuristic),
            ("length_heuristic", FilterMode::LengthHeuristic),
            ("reward_filtering", FilterMode::PrmThreshold),
        ] {
            let mode_config = FilterConfig {
                mode,
                ..config.filter.clone()
            };
            let part = partition(&inputs.corpus, &traces, &mode_config)?;
            let metrics = classification_metrics(&part.difficult(), &truth, &universe)?;
            heuristic_rows.push(format!("{label},{}", metrics.accuracy));
        }
        write_csv(
            &config.output("ablation_heuristics.csv"),
            "method,accuracy",
            &heuristic_rows,
        )?;
    }

    Ok(AblationOutcome {
        grid_path,
        best_tau1: best.tau1,
        best_tau2: best.tau2,
        best_f1: best.metrics.f1,
    })
}

/// Jensen–Shannon divergence between two skill distributions (base-2 logs,
/// in [0, 1]); absent skills count as zero mass.
pub fn js_divergence(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let mut total = 0.0;
    for key in keys {
        let pa = a.get(key).copied().unwrap_or(0.0);
        let pb = b.get(key).copied().unwrap_or(0.0);
        let m = 0.5 * (pa + pb);
        if pa > 0.0 {
            total += 0.5 * pa * (pa / m).log2();
        }
        if pb > 0.0 {
            total += 0.5 * pb * (pb / m).log2();
        }
    }
    total
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub profile: Option<PathBuf>,
    pub profile_b: Option<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub skill_map: Option<PathBuf>,
    pub top_k: usize,
}

/// Emit the analytics report: top-k missing skills, per-dataset skill
/// distributions, pairwise distribution divergences, and profile agreement.
pub fn write_report(inputs: &ReportInputs, out: &Path) -> Result<(), PipelineError> {
    let mut sections: Vec<String> = Vec::new();
    let skill_map = match &inputs.skill_map {
        Some(path) => SkillMap::load(path)?,
        None => SkillMap::new(),
    };

    if let Some(path) = &inputs.profile {
        let profile = MissingSkillProfile::load(path)?;
        let mut lines = vec![
            "# top_missing_skills".to_string(),
            "rank,skill,count".to_string(),
        ];
        for (i, (skill, count)) in top_k_missing(&profile, inputs.top_k.max(1))
            .into_iter()
            .enumerate()
        {
            lines.push(format!("{},{skill},{count}", i + 1));
        }
        sections.push(lines.join("\n"));

        if let Some(other_path) = &inputs.profile_b {
            let other = MissingSkillProfile::load(other_path)?;
            let forward = profile_agreement(&profile, &other)?;
            let backward = profile_agreement(&other, &profile)?;
            sections.push(format!(
                "# profile_agreement\nreference,other,agreement\n{},{},{forward}\n{},{},{backward}",
                profile.model_id, other.model_id, other.model_id, profile.model_id
            ));
        }
    }

    if !inputs.datasets.is_empty() {
        let mut named: Vec<(String, BTreeMap<String, f64>)> = Vec::new();
        for path in &inputs.datasets {
            let dataset = crate::corpus::load_dataset(path)?;
            let name = dataset
                .pairs
                .first()
                .map(|p| p.source_method.as_str().to_string())
                .unwrap_or_else(|| path.display().to_string());
            named.push((name, skill_distribution(&dataset, &skill_map)));
        }
        let mut lines = vec![
            "# skill_distribution".to_string(),
            "dataset,skill,fraction".to_string(),
        ];
        for (name, dist) in &named {
            for (skill, fraction) in dist {
                lines.push(format!("{name},{skill},{fraction}"));
            }
        }
        sections.push(lines.join("\n"));

        if named.len() > 1 {
            let mut lines = vec![
                "# distribution_divergence".to_string(),
                "dataset_a,dataset_b,js_divergence".to_string(),
            ];
            for i in 0..named.len() {
                for j in (i + 1)..named.len() {
                    lines.push(format!(
                        "{},{},{}",
                        named[i].0,
                        named[j].0,
                        js_divergence(&named[i].1, &named[j].1)
                    ));
                }
            }
            sections.push(lines.join("\n"));
        }
    }

    let body = sections.join("\n\n") + "\n";
    crate::corpus::write_atomic(out, body.as_bytes())?;
    Ok(())
}

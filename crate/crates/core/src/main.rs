//! Command-line entry point for the curation pipeline.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use stat_core::corpus::{emit_corpus, load_corpus, SourceMethod, Split};
use stat_core::pipeline::{
    run_ablation, run_continual, run_stage1, run_stage2, run_stage3, write_report,
    PipelineConfig, PipelineError, ReportInputs,
};
use stat_core::reward_filter::DifficultPartition;

#[derive(Parser)]
#[command(
    name = "stat",
    version,
    about = "Skill-targeted training-data curation: reward filtering, missing-skill profiling, dataset selection/synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a question corpus and persist it with splits resolved.
    Ingest {
        #[arg(short, long)]
        config: PathBuf,
        /// Output path (defaults to <output_dir>/corpus.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage 1: reward-filter val/test questions into difficult/easy sets.
    Stage1 {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Stage 2: diagnose difficult validation questions into a profile.
    Stage2 {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Stage 3: construct the training dataset.
    Stage3 {
        #[arg(short, long)]
        config: PathBuf,
        /// One of: math_train, math_augment, math_hard, embed_sel,
        /// embed_syn, stat_sel, stat_syn.
        #[arg(short, long)]
        method: String,
    },
    /// Stages 1–3 against a new validation set, selecting from the
    /// original train split.
    Continual {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        new_questions: PathBuf,
        #[arg(long)]
        new_traces: PathBuf,
        /// Tag naming the prior dataset this run extends.
        #[arg(long, default_value = "prior")]
        tag: String,
    },
    /// Threshold ablation grid over the reward filter.
    Ablate {
        #[arg(short, long)]
        config: PathBuf,
        /// Comma-separated tau1 values.
        #[arg(long, default_value = "0,0.8,0.85,0.9")]
        tau1: String,
        /// Comma-separated tau2 values.
        #[arg(long, default_value = "0,0.6,0.7,0.8")]
        tau2: String,
        /// Also compare the consistency/length heuristics.
        #[arg(long)]
        heuristics: bool,
    },
    /// Analytics report over persisted profiles and datasets.
    Report {
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        profile_b: Option<PathBuf>,
        /// Dataset file; repeat for comparisons.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        skill_map: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_taus(raw: &str) -> Result<Vec<f64>, PipelineError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| PipelineError::Config(format!("bad threshold {s:?}: {e}")))
        })
        .collect()
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest { config, out } => {
            let config = PipelineConfig::load(&config)?;
            let corpus = load_corpus(&config.paths.questions, &config.split)?;
            let out = out.unwrap_or_else(|| config.run.output_dir.join("corpus.jsonl"));
            emit_corpus(&corpus, &out)?;
            println!(
                "ingested {} questions (train {}, val {}, test {}) -> {}",
                corpus.len(),
                corpus.ids_in_split(Split::Train).len(),
                corpus.ids_in_split(Split::Val).len(),
                corpus.ids_in_split(Split::Test).len(),
                out.display()
            );
        }
        Command::Stage1 { config } => {
            let config = PipelineConfig::load(&config)?;
            let partition = run_stage1(&config)?;
            println!(
                "stage1: difficult val {}, difficult test {}, easy {} -> {}",
                partition.difficult_val.len(),
                partition.difficult_test.len(),
                partition.easy.len(),
                config.run.output_dir.join("partition.json").display()
            );
        }
        Command::Stage2 { config } => {
            let config = PipelineConfig::load(&config)?;
            let partition = load_partition(&config)?;
            let profile = run_stage2(&config, &partition)?;
            println!(
                "stage2: {} profile entries for model {} -> {}",
                profile.len(),
                profile.model_id,
                config.run.output_dir.join("profile.jsonl").display()
            );
        }
        Command::Stage3 { config, method } => {
            let config = PipelineConfig::load(&config)?;
            let method = SourceMethod::parse(&method)
                .ok_or_else(|| PipelineError::Config(format!("unknown method {method:?}")))?;
            let (dataset, _) = run_stage3(&config, method)?;
            println!(
                "stage3 [{method}]: {} pairs -> {}",
                dataset.len(),
                config
                    .run
                    .output_dir
                    .join(format!("dataset_{method}.jsonl"))
                    .display()
            );
        }
        Command::Continual {
            config,
            new_questions,
            new_traces,
            tag,
        } => {
            let config = PipelineConfig::load(&config)?;
            let (dataset, manifest) = run_continual(&config, &new_questions, &new_traces, &tag)?;
            println!(
                "continual [{}]: {} pairs (prior tag {tag}) -> {}",
                manifest.method,
                dataset.len(),
                config
                    .run
                    .output_dir
                    .join(format!("continual_dataset_{}.jsonl", manifest.method))
                    .display()
            );
        }
        Command::Ablate {
            config,
            tau1,
            tau2,
            heuristics,
        } => {
            let config = PipelineConfig::load(&config)?;
            let outcome = run_ablation(&config, &parse_taus(&tau1)?, &parse_taus(&tau2)?, heuristics)?;
            println!(
                "ablation grid -> {} (best tau1={}, tau2={}, f1={:.4})",
                outcome.grid_path.display(),
                outcome.best_tau1,
                outcome.best_tau2,
                outcome.best_f1
            );
        }
        Command::Report {
            profile,
            profile_b,
            datasets,
            skill_map,
            top_k,
            out,
        } => {
            let inputs = ReportInputs {
                profile,
                profile_b,
                datasets,
                skill_map,
                top_k,
            };
            write_report(&inputs, &out)?;
            println!("report -> {}", out.display());
        }
    }
    Ok(())
}

fn load_partition(config: &PipelineConfig) -> Result<DifficultPartition, PipelineError> {
    let path = config.run.output_dir.join("partition.json");
    DifficultPartition::load(&path).map_err(|_| PipelineError::MissingArtifact {
        path: path.display().to_string(),
        hint: "run stage1 first".to_string(),
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(error) = run(cli.command) {
        let record = serde_json::json!({
            "error": error.to_string(),
            "kind": error.kind(),
        });
        eprintln!("{record}");
        std::process::exit(1);
    }
}

mod config;
mod extract;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deceptio::data::{load_manifest, DatasetManifest};
use deceptio::experiment::{run_experiment_with_splits, ExpressionSource};
use deceptio::expression::Expression;
use deceptio::folds::{grouped_kfold_identities, FoldPlan, FoldSplit, SplitFile};
use deceptio::fusion::Modality;
use deceptio::report::{config_hash, ExperimentReport};
use deceptio::synthetic::{generate, SyntheticConfig};
use serde::Serialize;

use crate::config::{parse_list, PipelineConfig, TranscriptSettings};

/// Bad flags or configuration; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "deceptio", version, about = "Multimodal deception detection experiments")]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract and cache per-video features.
    Extract(ConfigArg),
    /// Run the cross-validated experiment and write reports.
    Run(RunArgs),
    /// Render a saved report.
    Report(ReportArgs),
    /// Check a config and its manifest without running anything.
    Validate(ConfigArg),
    /// Write a seeded synthetic dataset with a matching config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Comma-separated subset of motion, transcript, audio, expression.
    #[arg(long)]
    modalities: Option<String>,
    /// predicted or ground-truth.
    #[arg(long)]
    expressions: Option<String>,
    /// Comma-separated expressions, e.g. eyebrows-raise,frown.
    #[arg(long)]
    expression_subset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON fold plan (identity assignments) or explicit split file.
    #[arg(long)]
    fold_plan: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    /// Print the bar-chart CSV instead of the table.
    #[arg(long)]
    bars: bool,
}

#[derive(Args)]
struct SynthArgs {
    dir: PathBuf,
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run fewer folds and classifiers for a quick smoke test.
    #[arg(long)]
    small: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Extract(a) => cmd_extract(&a.config),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(&a),
        Command::Validate(a) => cmd_validate(&a.config),
        Command::Synth(a) => cmd_synth(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<Usage>()) {
        return 1;
    }
    let leak = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<deceptio::Error>(), Some(deceptio::Error::Leakage { .. })));
    if leak {
        3
    } else {
        2
    }
}

fn set_workers(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

/// Loads the manifest, resolving record paths against its directory.
fn manifest_for(config: &PipelineConfig) -> Result<DatasetManifest> {
    let mut manifest = load_manifest(&config.manifest)?;
    let base = config.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    for r in &mut manifest.records {
        for p in [&mut r.motion_path, &mut r.audio_path, &mut r.transcript_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(manifest)
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let config = PipelineConfig::load(path)?;
    config.validate()?;
    Ok(config)
}

fn cmd_extract(path: &Path) -> Result<()> {
    let config = load_config(path)?;
    set_workers(config.workers)?;
    let manifest = manifest_for(&config)?;
    let stats = extract::extract_all(&config, &manifest)?;
    println!(
        "extracted {} videos into {}: {} computed, {} cache hits",
        stats.videos,
        extract::cache_dir(&config).display(),
        stats.computed,
        stats.cache_hits
    );
    Ok(())
}

/// Everything that determines a run's results, hashed into the report.
#[derive(Serialize)]
struct RunIdentity<'a> {
    manifest_sha256: String,
    embeddings_sha256: Option<String>,
    motion: &'a config::MotionSettings,
    audio: &'a deceptio::mfcc::MfccConfig,
    vocabulary_limit: Option<usize>,
    fold_plan_sha256: Option<String>,
    experiment: &'a deceptio::experiment::ExperimentConfig,
}

fn apply_overrides(config: &mut PipelineConfig, args: &RunArgs) -> Result<()> {
    if let Some(m) = &args.modalities {
        config.experiment.modalities = parse_list::<Modality>(m)?;
    }
    if let Some(e) = &args.expressions {
        config.experiment.expressions = match e.as_str() {
            "predicted" => ExpressionSource::Predicted,
            "ground-truth" => ExpressionSource::GroundTruth,
            other => return Err(Usage(format!("--expressions must be predicted or ground-truth, got {other:?}")).into()),
        };
    }
    if let Some(s) = &args.expression_subset {
        config.experiment.expression_subset = parse_list::<Expression>(s)?;
    }
    if let Some(seed) = args.seed {
        config.experiment.seed = seed;
    }
    if let Some(w) = args.workers {
        config.workers = Some(w);
    }
    if let Some(o) = &args.output {
        config.output_dir = o.clone();
    }
    Ok(())
}

fn load_splits(path: &Path, manifest: &DatasetManifest) -> Result<Vec<FoldSplit>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read fold plan {}", path.display()))?;
    if let Ok(file) = serde_json::from_str::<SplitFile>(&text) {
        let ids: Vec<&str> = manifest.records.iter().map(|r| r.video_id.as_str()).collect();
        return Ok(file.resolve(&ids)?);
    }
    let plan: FoldPlan = serde_json::from_str(&text)
        .map_err(|e| Usage(format!("{}: neither a split file nor a fold plan: {e}", path.display())))?;
    Ok(plan.splits(manifest)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&args.config)?;
    apply_overrides(&mut config, &args)?;
    config.validate()?;
    set_workers(config.workers)?;
    let manifest = manifest_for(&config)?;
    let data = extract::load_all(&config, &manifest)?;

    let splits = match &args.fold_plan {
        Some(p) => load_splits(p, &manifest)?,
        None => {
            let ids: Vec<&str> = manifest.records.iter().map(|r| r.identity_id.as_str()).collect();
            grouped_kfold_identities(&ids, config.experiment.folds, config.experiment.seed)?.splits_for(&ids)?
        }
    };
    let identity = RunIdentity {
        manifest_sha256: extract::hash_file(&config.manifest)?,
        embeddings_sha256: if config.uses(Modality::Transcript) {
            Some(extract::hash_file(&config.transcript.embeddings)?)
        } else {
            None
        },
        motion: &config.motion,
        audio: &config.audio,
        vocabulary_limit: config.transcript.vocabulary_limit,
        fold_plan_sha256: args.fold_plan.as_deref().map(extract::hash_file).transpose()?,
        experiment: &config.experiment,
    };
    let hash = config_hash(&identity)?;
    let result = run_experiment_with_splits(&data, &config.experiment, &splits)?;
    let mut report = ExperimentReport::build(&result, &data, &config.experiment, hash)?;
    report.config = serde_json::to_value(&identity)?;

    let out = &config.output_dir;
    std::fs::create_dir_all(out.join("scores")).with_context(|| format!("cannot create {}", out.display()))?;
    write_file(&out.join("report.json"), &report.to_json()?)?;
    let table = report.render_table();
    write_file(&out.join("report.txt"), &table)?;
    write_file(&out.join("bars.csv"), &report.bar_csv())?;
    for f in &result.folds {
        for spec in &result.classifiers {
            let slug = spec.kind.slug();
            write_file(
                &out.join("scores").join(format!("fold-{}-{slug}.csv", f.fold)),
                &report.fold_scores_csv(f.fold, slug),
            )?;
        }
    }
    print!("{table}");
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.report)
        .with_context(|| format!("cannot read report {}", args.report.display()))?;
    let report = ExperimentReport::from_json(&text).with_context(|| format!("{}", args.report.display()))?;
    if args.bars {
        print!("{}", report.bar_csv());
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<()> {
    let config = load_config(path)?;
    let manifest = manifest_for(&config)?;
    let mut missing = Vec::new();
    for r in &manifest.records {
        let mut need = Vec::new();
        if config.needs_motion() {
            need.push(&r.motion_path);
        }
        if config.uses(Modality::Audio) {
            need.push(&r.audio_path);
        }
        if config.uses(Modality::Transcript) {
            need.push(&r.transcript_path);
        }
        for p in need {
            if !p.is_file() {
                missing.push(format!("video {}: missing {}", r.video_id, p.display()));
            }
        }
    }
    let identities = manifest.identities();
    let e = &config.experiment;
    let annotated = manifest.records.iter().filter(|r| r.clip_expression_labels.is_some()).count();
    println!(
        "{} videos, {} identities, {} truthful, {} deceptive, {} with clip annotations",
        manifest.len(),
        identities.len(),
        manifest.class_counts.get(&0).copied().unwrap_or(0),
        manifest.class_counts.get(&1).copied().unwrap_or(0),
        annotated
    );
    let mut problems = missing;
    if identities.len() < e.folds {
        problems.push(format!("{} identities cannot fill {} folds", identities.len(), e.folds));
    }
    let needs_annotations =
        config.uses(Modality::Expression) && annotated < manifest.len();
    if needs_annotations {
        problems.push(format!(
            "{} videos lack clip annotations required by the expression modality",
            manifest.len() - annotated
        ));
    }
    if problems.is_empty() {
        println!("ok");
        return Ok(());
    }
    for p in &problems {
        eprintln!("{p}");
    }
    anyhow::bail!("{} problems found", problems.len())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut synth = SyntheticConfig::default();
    if let Some(n) = args.identities {
        synth.identities = n;
    }
    if let Some(s) = args.seed {
        synth.seed = s;
    }
    let dataset = generate(&synth)?;
    std::fs::create_dir_all(&args.dir).with_context(|| format!("cannot create {}", args.dir.display()))?;
    let manifest = dataset.write(&args.dir)?;
    let mut experiment = synth.experiment_config();
    if args.small {
        experiment.folds = 4;
        experiment.inner_folds = 2;
        experiment.classifiers.retain(|c| {
            matches!(
                c.kind,
                deceptio::classifiers::ClassifierKind::LinearSvm | deceptio::classifiers::ClassifierKind::NaiveBayes
            )
        });
    }
    let config = PipelineConfig {
        manifest: PathBuf::from("manifest.jsonl"),
        output_dir: PathBuf::from("out"),
        cache_dir: None,
        workers: None,
        motion: config::MotionSettings {
            columns: Some(deceptio::data::ColumnRange::new(1, synth.motion_dim)),
            frame_column: 0,
            ..config::MotionSettings::default()
        },
        audio: deceptio::mfcc::MfccConfig::default(),
        transcript: TranscriptSettings {
            embeddings: PathBuf::from("embeddings.txt"),
            vocabulary_limit: None,
        },
        experiment,
    };
    let path = args.dir.join("config.toml");
    write_file(&path, &config.to_toml()?)?;
    println!(
        "wrote {} videos of {} identities to {}; config at {}",
        manifest.len(),
        manifest.identities().len(),
        args.dir.display(),
        path.display()
    );
    Ok(())
}

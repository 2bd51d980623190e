//! Command-line entry point: synthesize a corpus, fill in descriptions,
//! train, evaluate, and run the full ablation grid.
//!
//! Exit codes: 0 success, 2 configuration error, 3 external-backend error,
//! 4 missing artifact.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ctxasr::backend::{HttpBackend, Retrying};
use ctxasr::formats;
use ctxasr::manifest;
use ctxasr::runner;

use ctxasr_core::data::{self, SynthConfig};
use ctxasr_core::descgen::{
    self, BackendError, CompletionBackend, DescgenError, FallbackBackend,
};
use ctxasr_core::eval::{self, EvalCondition};
use ctxasr_core::train::TrainingConfig;

#[derive(Parser)]
#[command(name = "ctxasr", version, about = "Description-conditioned speech recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic homophone corpus as a manifest plus features.
    Synth(SynthArgs),
    /// Fill missing document descriptions via an LLM backend or the offline fallback.
    Describe(DescribeArgs),
    /// Train one condition on a manifest and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Evaluate checkpoints on a manifest; optionally the full condition table or a qualitative diff.
    Evaluate(EvaluateArgs),
    /// Train and evaluate all five conditions, emitting one ablation table.
    Ablate(AblateArgs),
}

/// Flat file mirror of the flags; flags win over file values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct RunConfig {
    #[serde(default)]
    synth: Option<SynthConfig>,
    #[serde(default)]
    train: Option<TrainingConfig>,
    #[serde(default)]
    model_seed: Option<u64>,
    #[serde(default)]
    split_seed: Option<u64>,
    #[serde(default)]
    conditions: Option<Vec<String>>,
    #[serde(default)]
    manifest: Option<PathBuf>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ConfigFlag {
    /// JSON run-config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigFlag,
    /// Output corpus directory
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long)]
    vocab_words: Option<usize>,
    #[arg(long)]
    homophone_pairs: Option<usize>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    utts_per_doc: Option<usize>,
    #[arg(long)]
    words_per_utt: Option<usize>,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    frames_per_phoneme: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DescribeArgs {
    #[command(flatten)]
    config: ConfigFlag,
    /// Manifest to fill in (rewritten in place unless --out is given)
    #[arg(long)]
    manifest: PathBuf,
    /// Write the updated manifest here instead of in place
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append-only description cache (defaults to desc_cache.jsonl next to the manifest)
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Use the deterministic offline fallback instead of the HTTP backend
    #[arg(long)]
    fallback: bool,
    /// Completion endpoint URL
    #[arg(long, default_value = "https://api.example.com/v1/complete")]
    url: String,
    /// Model name sent to the endpoint
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Retry attempts for transient backend failures
    #[arg(long, default_value_t = 3)]
    attempts: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigFlag,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory (created; defaults to runs/train-<condition>)
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Ablation condition to train
    #[arg(long, default_value = "decoder_ft_desc_perturb")]
    condition: String,
    /// Epochs (defaults to 10 for earnings manifests, 15 for lecture)
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate (any positive real; the grid values 1e-4, 1e-5, 1e-6 are typical)
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Optional word list for homophone accuracy
    #[arg(long)]
    homophones: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigFlag,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for outputs (defaults to runs/evaluate)
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Single checkpoint to evaluate
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary file (defaults to vocab.txt next to the checkpoint)
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Condition label for a single-checkpoint evaluation
    #[arg(long, default_value = "decoder_ft_desc_perturb")]
    condition: String,
    /// Evaluate <dir>/<condition>.ckpt for all five conditions and emit one table
    #[arg(long, value_name = "DIR")]
    all_conditions: Option<PathBuf>,
    /// Emit the top-k utterances most improved by the description
    #[arg(long)]
    diff: bool,
    #[arg(long, default_value_t = 5)]
    diff_k: usize,
    #[arg(long)]
    homophones: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigFlag,
    /// Manifest to use; omitted means the built-in synthetic corpus
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory (defaults to runs/ablate)
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Synthetic-corpus seed (also the default model/split seed)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    homophones: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Backend(String),
    Missing(String),
    Other(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Backend(m) => write!(f, "backend unavailable: {m}"),
            CliError::Missing(m) => write!(f, "missing artifact: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Describe(args) => cmd_describe(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_run_config(flag: &ConfigFlag) -> Result<RunConfig, CliError> {
    let Some(path) = &flag.config else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(m) = &cfg.manifest {
        if !m.exists() {
            return Err(CliError::Config(format!(
                "config references nonexistent manifest {}",
                m.display()
            )));
        }
    }
    if let Some(conds) = &cfg.conditions {
        for c in conds {
            parse_condition(c)?;
        }
    }
    Ok(cfg)
}

fn parse_condition(name: &str) -> Result<EvalCondition, CliError> {
    EvalCondition::from_name(name).ok_or_else(|| {
        let valid: Vec<&str> = EvalCondition::ALL.iter().map(|c| c.name()).collect();
        CliError::Config(format!(
            "unknown condition {name:?}; expected one of {}",
            valid.join(", ")
        ))
    })
}

fn ensure_run_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Other(anyhow::anyhow!("creating {}: {e}", dir.display())))
}

fn snapshot_config<T: Serialize>(dir: &Path, config: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Other(e.into()))?;
    fs::write(dir.join("config.json"), text)
        .map_err(|e| CliError::Other(anyhow::anyhow!("writing config snapshot: {e}")))?;
    Ok(())
}

fn append_log(dir: &Path, line: &str) {
    use std::io::Write;
    if let Ok(mut f) = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("run.log"))
    {
        let _ = writeln!(f, "{line}");
    }
    log::info!("{line}");
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{what} {} does not exist", path.display())))
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn load_homophones(path: &Option<PathBuf>) -> Result<Option<BTreeSet<String>>, CliError> {
    let Some(path) = path else { return Ok(None) };
    require_file(path, "homophone list")?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Other(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
    ))
}

fn positive(name: &str, value: f64) -> Result<f64, CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::Config(format!("{name} must be a positive real, got {value}")))
    }
}

// --- synth ---------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let file = load_run_config(&args.config)?;
    let mut cfg = file.synth.unwrap_or_default();
    if let Some(v) = args.vocab_words {
        cfg.vocab_words = v;
    }
    if let Some(v) = args.homophone_pairs {
        cfg.homophone_pairs = v;
    }
    if let Some(v) = args.docs {
        cfg.n_docs = v;
    }
    if let Some(v) = args.utts_per_doc {
        cfg.utts_per_doc = v;
    }
    if let Some(v) = args.words_per_utt {
        cfg.words_per_utt = v;
    }
    if let Some(v) = args.n_mels {
        cfg.n_mels = v;
    }
    if let Some(v) = args.frames_per_phoneme {
        cfg.frames_per_phoneme = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let out = file.out_dir.unwrap_or(args.out);
    let corpus = data::synth_corpus(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    ensure_run_dir(&out)?;
    snapshot_config(&out, &cfg)?;
    let manifest_path = manifest::write_corpus(&out, &corpus.documents)?;
    let homophones: Vec<String> = corpus.lexicon.homophone_words().into_iter().collect();
    fs::write(out.join("homophones.txt"), homophones.join("\n") + "\n")
        .map_err(|e| CliError::Other(anyhow::anyhow!("writing homophones: {e}")))?;
    append_log(
        &out,
        &format!(
            "synthesized {} documents into {}",
            corpus.documents.len(),
            manifest_path.display()
        ),
    );
    println!("{}", manifest_path.display());
    Ok(())
}

// --- describe ------------------------------------------------------------

fn cmd_describe(args: DescribeArgs) -> Result<(), CliError> {
    let file = load_run_config(&args.config)?;
    let manifest_path = file.manifest.unwrap_or(args.manifest);
    require_file(&manifest_path, "manifest")?;
    let cache_path = args.cache.unwrap_or_else(|| {
        manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("desc_cache.jsonl")
    });
    let mut records = manifest::load_records(&manifest_path)?;
    let mut cache = formats::load_cache(&cache_path)?;

    let http;
    let fallback = FallbackBackend;
    let backend: &dyn CompletionBackend = if args.fallback {
        &fallback
    } else {
        http = Retrying::with_policy(
            HttpBackend::new(args.url, args.model),
            args.attempts,
            std::time::Duration::from_secs(1),
        );
        &http
    };

    let now = now_secs();
    let mut filled = 0usize;
    for record in records.iter_mut().filter(|r| r.description.is_none()) {
        let meta = record.metadata_record()?;
        let key = descgen::cache_key(&meta);
        let was_cached = cache.get(&key).is_some();
        let desc = descgen::generate_description(backend, &meta, &mut cache, args.fallback, now)
            .map_err(|e| match e {
                DescgenError::Backend(BackendError::Unavailable(m)) => CliError::Backend(m),
                DescgenError::Backend(e) => CliError::Backend(e.to_string()),
                other => CliError::Config(other.to_string()),
            })?;
        if !was_cached {
            formats::append_cache(
                &cache_path,
                &formats::CacheRecord {
                    key,
                    meta,
                    description: desc.clone(),
                },
            )?;
        }
        record.description = Some(desc.text);
        filled += 1;
    }
    let out = args.out.unwrap_or(manifest_path);
    manifest::save_records(&out, &records)?;
    println!("filled {filled} descriptions; manifest written to {}", out.display());
    Ok(())
}

// --- train ---------------------------------------------------------------

/// Epoch defaults by corpus kind: earnings manifests train for 10 epochs,
/// lecture manifests for 15.
fn default_epochs(records: &[manifest::ManifestDocument], fallback: usize) -> usize {
    let lectures = records.iter().filter(|r| r.kind == "lecture").count();
    let earnings = records.iter().filter(|r| r.kind == "earnings").count();
    if earnings == 0 && lectures == 0 {
        fallback
    } else if lectures > earnings {
        15
    } else {
        10
    }
}

fn resolved_train_config(
    file: &RunConfig,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    epoch_default: Option<usize>,
) -> Result<TrainingConfig, CliError> {
    let mut cfg = file.train.unwrap_or_default();
    if let Some(e) = epochs.or(epoch_default) {
        cfg.epochs = e;
    }
    if let Some(lr) = lr {
        cfg.base_lr = positive("--lr", lr)?;
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = load_run_config(&args.config)?;
    let cond = parse_condition(&args.condition)?;
    let manifest_path = file.manifest.clone().unwrap_or(args.manifest);
    require_file(&manifest_path, "manifest")?;
    let records = manifest::load_records(&manifest_path)?;
    let train_cfg = resolved_train_config(
        &file,
        args.epochs,
        args.lr,
        args.batch_size,
        args.seed,
        Some(default_epochs(&records, TrainingConfig::default().epochs)),
    )?;
    let model_seed = args.seed.or(file.model_seed).unwrap_or(0);
    let split_seed = args.split_seed.or(file.split_seed).unwrap_or(0);

    let run_dir = args
        .run_dir
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from(format!("runs/train-{}", cond.name())));
    ensure_run_dir(&run_dir)?;

    let documents = manifest::records_to_documents(&records, manifest_path.parent().unwrap_or(Path::new(".")))?;
    let homophones = load_homophones(&args.homophones)?;
    let exp = runner::ExperimentConfig {
        train: train_cfg,
        model_seed,
        split_seed,
        ..runner::ExperimentConfig::default()
    };
    snapshot_config(&run_dir, &exp)?;
    append_log(&run_dir, &format!("training condition {cond} on {}", manifest_path.display()));

    let prep = runner::prepare(documents, homophones, exp.split_fractions, split_seed)?;
    let out = runner::run_condition(&prep, cond, &exp.train, model_seed)?;

    formats::write_checkpoint(&run_dir.join("model.ckpt"), &out.params)?;
    formats::write_vocabulary(&run_dir.join("vocab.txt"), &prep.vocab)?;
    formats::write_jsonl(&run_dir.join("metrics.jsonl"), &out.history)?;
    let run_id = format!("train-{}-s{model_seed}-p{split_seed}", cond.name());
    let corpus_id = corpus_id_of(&manifest_path);
    formats::write_jsonl(
        &run_dir.join("results.jsonl"),
        &[runner::results_record(&run_id, &corpus_id, &out.result)],
    )?;
    append_log(
        &run_dir,
        &format!(
            "done: test WER {:.4}, best epoch {}",
            out.result.score.corpus.wer,
            out.history.iter().map(|h| h.epoch).max().unwrap_or(0)
        ),
    );
    println!("{}", run_dir.display());
    Ok(())
}

fn corpus_id_of(manifest_path: &Path) -> String {
    manifest_path
        .parent()
        .and_then(|p| p.file_name())
        .or_else(|| manifest_path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

// --- evaluate ------------------------------------------------------------

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let file = load_run_config(&args.config)?;
    let manifest_path = file.manifest.clone().unwrap_or(args.manifest.clone());
    require_file(&manifest_path, "manifest")?;
    let documents = manifest::load_documents(&manifest_path)?;
    let homophones = load_homophones(&args.homophones)?;
    let run_dir = args
        .run_dir
        .clone()
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/evaluate"));
    ensure_run_dir(&run_dir)?;
    let corpus_id = corpus_id_of(&manifest_path);
    let desc_budget = file.train.unwrap_or_default().desc_budget;

    if let Some(dir) = &args.all_conditions {
        let vocab_path = args.vocab.clone().unwrap_or_else(|| dir.join("vocab.txt"));
        require_file(&vocab_path, "vocabulary")?;
        let vocab = formats::read_vocabulary(&vocab_path)?;
        let mut results = Vec::new();
        for cond in EvalCondition::ALL {
            let ckpt = dir.join(format!("{}.ckpt", cond.name()));
            require_file(&ckpt, "checkpoint")?;
            let params = formats::read_checkpoint(&ckpt)?;
            let hyps = eval::transcribe_corpus(
                &params,
                &documents,
                &vocab,
                cond.uses_descriptions(),
                desc_budget,
            )
            .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
            let score = eval::score(&documents, &hyps, homophones.as_ref())
                .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
            results.push(eval::EvalResult { condition: cond, score });
        }
        let (table, records) = eval::ablation_table(&results);
        let run_id = format!("evaluate-all-{corpus_id}");
        let lines: Vec<runner::ResultsRecord> = results
            .iter()
            .map(|r| runner::results_record(&run_id, &corpus_id, r))
            .collect();
        formats::write_jsonl(&run_dir.join("results.jsonl"), &lines)?;
        formats::write_jsonl(&run_dir.join("table.jsonl"), &records)?;
        fs::write(run_dir.join("table.txt"), &table)
            .map_err(|e| CliError::Other(anyhow::anyhow!("writing table: {e}")))?;
        print!("{table}");
        return Ok(());
    }

    let ckpt = args
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Config("--checkpoint or --all-conditions is required".into()))?;
    require_file(&ckpt, "checkpoint")?;
    let vocab_path = args
        .vocab
        .clone()
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("vocab.txt"));
    require_file(&vocab_path, "vocabulary")?;
    let cond = parse_condition(&args.condition)?;
    let vocab = formats::read_vocabulary(&vocab_path)?;
    let params = formats::read_checkpoint(&ckpt)?;

    let hyps_with = eval::transcribe_corpus(&params, &documents, &vocab, cond.uses_descriptions(), desc_budget)
        .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
    let score = eval::score(&documents, &hyps_with, homophones.as_ref())
        .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
    let result = eval::EvalResult { condition: cond, score };
    let run_id = format!("evaluate-{}-{corpus_id}", cond.name());
    formats::write_jsonl(
        &run_dir.join("results.jsonl"),
        &[runner::results_record(&run_id, &corpus_id, &result)],
    )?;
    println!(
        "{}: WER {:.2}%{}",
        cond.name(),
        100.0 * result.score.corpus.wer,
        result
            .score
            .homophone_accuracy
            .map(|a| format!(", homophone accuracy {a:.3}"))
            .unwrap_or_default()
    );

    if args.diff {
        // contrast against the same checkpoint run without its description prompt
        let hyps_without = eval::transcribe_corpus(&params, &documents, &vocab, false, desc_budget)
            .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
        let diffs = eval::diff_corpus(&documents, &hyps_with, &hyps_without, args.diff_k)
            .map_err(|e| CliError::Other(anyhow::anyhow!("{e}")))?;
        formats::write_jsonl(&run_dir.join("diffs.jsonl"), &diffs)?;
        for d in &diffs {
            println!("--- {} ({} words corrected by the description)", d.utt_id, d.corrected_words());
            println!("  ref:     {}", d.reference.as_str());
            println!("  with:    {}", d.hyp_with.as_str());
            println!("  without: {}", d.hyp_without.as_str());
        }
    }
    Ok(())
}

// --- ablate --------------------------------------------------------------

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let file = load_run_config(&args.config)?;
    let seed = args.seed.unwrap_or(0);
    let train_cfg = resolved_train_config(&file, args.epochs, args.lr, args.batch_size, None, None)?;
    let mut exp = runner::ExperimentConfig {
        train: train_cfg,
        model_seed: args.seed.or(file.model_seed).unwrap_or(0),
        split_seed: args.split_seed.or(file.split_seed).unwrap_or(0),
        ..runner::ExperimentConfig::default()
    };
    let run_dir = args
        .run_dir
        .or(file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/ablate"));
    ensure_run_dir(&run_dir)?;

    let (prep, corpus_id) = match &args.manifest.clone().or(file.manifest) {
        Some(path) => {
            require_file(path, "manifest")?;
            let documents = manifest::load_documents(path)?;
            let homophones = load_homophones(&args.homophones)?;
            let prep = runner::prepare(documents, homophones, exp.split_fractions, exp.split_seed)?;
            (prep, corpus_id_of(path))
        }
        None => {
            exp.synth.seed = seed;
            let (_, prep) = runner::prepare_synthetic(&exp)?;
            (prep, format!("synth-{seed}"))
        }
    };
    snapshot_config(&run_dir, &exp)?;
    append_log(&run_dir, &format!("running ablation grid on {corpus_id}"));

    let conditions: Vec<EvalCondition> = match &file.conditions {
        Some(names) => names
            .iter()
            .map(|n| parse_condition(n))
            .collect::<Result<_, _>>()?,
        None => EvalCondition::ALL.to_vec(),
    };

    formats::write_vocabulary(&run_dir.join("vocab.txt"), &prep.vocab)?;
    let mut results = Vec::new();
    let mut record_lines = Vec::new();
    let run_id = format!("ablate-{corpus_id}-s{}-p{}", exp.model_seed, exp.split_seed);
    for cond in conditions {
        append_log(&run_dir, &format!("condition {cond}"));
        let out = runner::run_condition(&prep, cond, &exp.train, exp.model_seed)?;
        formats::write_checkpoint(&run_dir.join(format!("{}.ckpt", cond.name())), &out.params)?;
        formats::write_jsonl(
            &run_dir.join(format!("{}.metrics.jsonl", cond.name())),
            &out.history,
        )?;
        record_lines.push(runner::results_record(&run_id, &corpus_id, &out.result));
        results.push(out.result);
    }
    let (table, records) = eval::ablation_table(&results);
    formats::write_jsonl(&run_dir.join("results.jsonl"), &record_lines)?;
    formats::write_jsonl(&run_dir.join("table.jsonl"), &records)?;
    fs::write(run_dir.join("table.txt"), &table)
        .map_err(|e| CliError::Other(anyhow::anyhow!("writing table: {e}")))?;
    append_log(&run_dir, "grid complete");
    print!("{table}");
    Ok(())
}

//! Experiment pipeline: corpus preparation, per-condition training, and
//! the five-row ablation grid.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ctxasr_core::data::{self, Document, SynthConfig, SynthCorpus};
use ctxasr_core::eval::{self, EvalCondition, EvalResult};
use ctxasr_core::model::{self, ModelConfig, Parameters};
use ctxasr_core::tokenizer::Vocabulary;
use ctxasr_core::train::{self, EpochMetrics, TrainData, TrainSample, TrainingConfig};

/// Everything a grid run needs beyond the corpus itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainingConfig,
    pub model_seed: u64,
    pub split_seed: u64,
    /// duration fractions for train/valid/test; must sum to <= 1
    pub split_fractions: (f64, f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            train: TrainingConfig::default(),
            model_seed: 0,
            split_seed: 0,
            split_fractions: (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0),
        }
    }
}

/// Token-level view of the corpus, split and ready to train on.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train_docs: Vec<Document>,
    pub valid_docs: Vec<Document>,
    pub test_docs: Vec<Document>,
    pub train_data: TrainData,
    pub valid_data: TrainData,
    pub homophones: Option<BTreeSet<String>>,
}

/// Character vocabulary over every transcript and description in a corpus.
pub fn build_vocabulary(documents: &[Document]) -> Result<Vocabulary> {
    let mut texts: Vec<String> = Vec::new();
    for doc in documents {
        for utt in &doc.utterances {
            texts.push(utt.transcript.as_str().to_string());
        }
        if let Some(desc) = &doc.description {
            texts.push(desc.text.clone());
        }
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    Ok(Vocabulary::build(&refs).context("building vocabulary")?)
}

fn to_train_data(docs: &[Document], vocab: &Vocabulary) -> Result<TrainData> {
    let mut samples = Vec::new();
    let mut descriptions = Vec::with_capacity(docs.len());
    for (doc_idx, doc) in docs.iter().enumerate() {
        descriptions.push(match &doc.description {
            Some(d) => eval::encode_lossy(vocab, &d.text),
            None => Vec::new(),
        });
        for utt in &doc.utterances {
            samples.push(TrainSample {
                features: utt.features.clone(),
                transcript_ids: vocab
                    .encode(utt.transcript.as_str())
                    .with_context(|| format!("encoding transcript of {}", utt.utt_id))?,
                desc_index: doc_idx,
            });
        }
    }
    Ok(TrainData {
        samples,
        descriptions,
    })
}

/// Split a corpus by duration fractions and tokenize the training splits.
pub fn prepare(
    documents: Vec<Document>,
    homophones: Option<BTreeSet<String>>,
    split_fractions: (f64, f64, f64),
    split_seed: u64,
) -> Result<Prepared> {
    let vocab = build_vocabulary(&documents)?;
    let total: f64 = documents.iter().map(|d| d.duration_s).sum();
    let targets = (
        total * split_fractions.0,
        total * split_fractions.1,
        total * split_fractions.2,
    );
    let (train_docs, valid_docs, test_docs) =
        data::split_by_duration(documents, targets, split_seed).context("splitting corpus")?;
    if train_docs.is_empty() || valid_docs.is_empty() || test_docs.is_empty() {
        bail!(
            "split produced an empty subset ({} train / {} valid / {} test documents)",
            train_docs.len(),
            valid_docs.len(),
            test_docs.len()
        );
    }
    let train_data = to_train_data(&train_docs, &vocab)?;
    let valid_data = to_train_data(&valid_docs, &vocab)?;
    Ok(Prepared {
        vocab,
        train_docs,
        valid_docs,
        test_docs,
        train_data,
        valid_data,
        homophones,
    })
}

/// Resolve the per-condition switches on top of a base training config.
pub fn condition_train_config(base: &TrainingConfig, cond: EvalCondition) -> TrainingConfig {
    let mut cfg = *base;
    cfg.freeze_encoder = cond.freezes_encoder();
    cfg.use_descriptions = cond.uses_descriptions();
    if !cond.perturbs_context() {
        cfg.perturb_prob = 0.0;
    }
    cfg
}

pub struct ConditionOutcome {
    pub condition: EvalCondition,
    pub params: Parameters,
    pub history: Vec<EpochMetrics>,
    pub result: EvalResult,
}

/// Train (unless frozen) and evaluate one condition on the test split.
pub fn run_condition(
    prep: &Prepared,
    cond: EvalCondition,
    base_train: &TrainingConfig,
    model_seed: u64,
) -> Result<ConditionOutcome> {
    let config = ModelConfig::desk(prep.vocab.len(), model_seed);
    let init = model::init_model(&config).context("initializing model")?;
    let (params, history) = if cond.trains() {
        let cfg = condition_train_config(base_train, cond);
        let out = train::train(init, &prep.train_data, &prep.valid_data, &prep.vocab, &cfg)
            .with_context(|| format!("training condition {cond}"))?;
        (out.best_params, out.history)
    } else {
        (init, Vec::new())
    };
    let hyps = eval::transcribe_corpus(
        &params,
        &prep.test_docs,
        &prep.vocab,
        cond.uses_descriptions(),
        base_train.desc_budget,
    )
    .with_context(|| format!("transcribing condition {cond}"))?;
    let score = eval::score(&prep.test_docs, &hyps, prep.homophones.as_ref())
        .with_context(|| format!("scoring condition {cond}"))?;
    Ok(ConditionOutcome {
        condition: cond,
        params,
        history,
        result: EvalResult {
            condition: cond,
            score,
        },
    })
}

/// One line of the machine-readable results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub run_id: String,
    pub condition: String,
    pub corpus_id: String,
    pub corpus_wer: f64,
    pub homophone_accuracy: Option<f64>,
    pub per_doc: Vec<ctxasr_core::eval::DocScore>,
}

pub fn results_record(run_id: &str, corpus_id: &str, result: &EvalResult) -> ResultsRecord {
    ResultsRecord {
        run_id: run_id.to_string(),
        condition: result.condition.name().to_string(),
        corpus_id: corpus_id.to_string(),
        corpus_wer: result.score.corpus.wer,
        homophone_accuracy: result.score.homophone_accuracy,
        per_doc: result.score.per_doc.clone(),
    }
}

pub struct GridOutcome {
    pub results: Vec<EvalResult>,
    pub table: String,
    pub records: Vec<ctxasr_core::eval::AblationRecord>,
    pub history: BTreeMap<String, Vec<EpochMetrics>>,
}

/// The full Table-1-style grid over the canonical five conditions.
pub fn run_grid(prep: &Prepared, cfg: &ExperimentConfig) -> Result<GridOutcome> {
    run_conditions(prep, cfg, &EvalCondition::ALL)
}

pub fn run_conditions(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    conditions: &[EvalCondition],
) -> Result<GridOutcome> {
    let mut results = Vec::with_capacity(conditions.len());
    let mut history = BTreeMap::new();
    for &cond in conditions {
        log::info!("running condition {cond}");
        let out = run_condition(prep, cond, &cfg.train, cfg.model_seed)?;
        history.insert(cond.name().to_string(), out.history);
        results.push(out.result);
    }
    let (table, records) = eval::ablation_table(&results);
    Ok(GridOutcome {
        results,
        table,
        records,
        history,
    })
}

/// Generate the synthetic corpus and prepare it in one step.
pub fn prepare_synthetic(cfg: &ExperimentConfig) -> Result<(SynthCorpus, Prepared)> {
    let corpus = data::synth_corpus(&cfg.synth).context("generating synthetic corpus")?;
    let prep = prepare(
        corpus.documents.clone(),
        Some(corpus.lexicon.homophone_words()),
        cfg.split_fractions,
        cfg.split_seed,
    )?;
    Ok((corpus, prep))
}

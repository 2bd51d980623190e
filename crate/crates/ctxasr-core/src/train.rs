//! Fine-tuning loop: AdamW with warmup/decay, optional encoder freezing,
//! and description perturbation for context robustness.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    self, FeatureSequence, Gradients, Mat, ModelError, ParamGroup, Parameters, TensorSet,
};
use crate::rng::Rng;
use crate::text::{self, TextError};
use crate::tokenizer::{self, TokenizerError, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    InvalidConfig(String),
    EmptyDataset,
    PoolTooSmall { pool: usize },
    Diverged { step: usize },
    NonFinite { tensor: String },
    Model(ModelError),
    Tokenizer(TokenizerError),
    Text(TextError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            TrainError::EmptyDataset => write!(f, "training set has no samples"),
            TrainError::PoolTooSmall { pool } => {
                write!(f, "description perturbation needs >= 2 pool entries, found {pool}")
            }
            TrainError::Diverged { step } => write!(f, "loss became non-finite at step {step}"),
            TrainError::NonFinite { tensor } => {
                write!(f, "non-finite update for tensor {tensor}")
            }
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Tokenizer(e) => write!(f, "{e}"),
            TrainError::Text(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<TokenizerError> for TrainError {
    fn from(e: TokenizerError) -> Self {
        TrainError::Tokenizer(e)
    }
}

impl From<TextError> for TrainError {
    fn from(e: TextError) -> Self {
        TrainError::Text(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    /// global-norm gradient clipping threshold; `None` disables clipping
    pub clip_norm: Option<f64>,
    pub freeze_encoder: bool,
    pub use_descriptions: bool,
    /// probability of swapping a sample's description for another document's
    pub perturb_prob: f64,
    pub desc_budget: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 4,
            batch_size: 8,
            base_lr: 3e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            freeze_encoder: true,
            use_descriptions: true,
            perturb_prob: 0.05,
            desc_budget: tokenizer::DEFAULT_DESC_BUDGET,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(TrainError::InvalidConfig("base_lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.perturb_prob) {
            return Err(TrainError::InvalidConfig(
                "perturb_prob must lie in [0, 1]".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(TrainError::InvalidConfig("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One utterance prepared for training: features, transcript token ids, and
/// an index into the shared description pool.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub features: FeatureSequence,
    pub transcript_ids: Vec<usize>,
    pub desc_index: usize,
}

/// Samples plus the per-document description token pool they index into.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainData {
    pub samples: Vec<TrainSample>,
    pub descriptions: Vec<Vec<usize>>,
}

// ---------------------------------------------------------------------------
// learning-rate schedule

/// Linear warmup to `base_lr` at `warmup` steps, then linear decay to zero
/// at `total_steps`. `lr(0) = 0`, `lr(warmup) = base_lr`, `lr(total) = 0`.
pub fn lr_schedule(
    step: usize,
    total_steps: usize,
    warmup: usize,
    base_lr: f64,
) -> Result<f64, TrainError> {
    if total_steps <= warmup {
        return Err(TrainError::InvalidConfig(format!(
            "total_steps {total_steps} must exceed warmup {warmup}"
        )));
    }
    if step <= warmup {
        if warmup == 0 {
            return Ok(base_lr);
        }
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if step >= total_steps {
        return Ok(0.0);
    }
    Ok(base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64)
}

// ---------------------------------------------------------------------------
// description perturbation

/// Pick the description index to train with: with probability `prob`, swap
/// to a uniformly random *other* pool entry. The pool must hold at least
/// two descriptions whenever perturbation is active.
pub fn context_perturb(
    desc_index: usize,
    pool_len: usize,
    prob: f64,
    rng: &mut Rng,
) -> Result<usize, TrainError> {
    if prob == 0.0 {
        return Ok(desc_index);
    }
    if pool_len < 2 {
        return Err(TrainError::PoolTooSmall { pool: pool_len });
    }
    if rng.uniform() >= prob {
        return Ok(desc_index);
    }
    let draw = rng.below(pool_len - 1);
    Ok(if draw >= desc_index { draw + 1 } else { draw })
}

// ---------------------------------------------------------------------------
// optimizer

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn is_trainable(group: ParamGroup, freeze_encoder: bool) -> bool {
    !(freeze_encoder && group == ParamGroup::Encoder)
}

/// First/second-moment state, one slot per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: TensorSet,
    pub v: TensorSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One decoupled-weight-decay Adam step over the trainable tensors. Frozen
/// tensors are left bit-identical: no moments, no decay.
pub fn adamw_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    freeze_encoder: bool,
) -> Result<(), TrainError> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::pow(BETA1, t as f64);
    let bc2 = 1.0 - libm::pow(BETA2, t as f64);
    let names: Vec<String> = params.set.names().cloned().collect();
    for name in names {
        let tensor = params.set.get_mut(&name);
        if !is_trainable(tensor.group, freeze_encoder) {
            continue;
        }
        let g = grads.get(&name);
        let m = state.m.get_mut(&name);
        for (mv, &gv) in m.data.iter_mut().zip(&g.data) {
            *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
        }
        let v = state.v.get_mut(&name);
        for (vv, &gv) in v.data.iter_mut().zip(&g.data) {
            *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
        }
        let m = state.m.get(&name);
        let v = state.v.get(&name);
        for ((pv, mv), vv) in tensor.data.iter_mut().zip(&m.data).zip(&v.data) {
            let mhat = mv / bc1;
            let vhat = vv / bc2;
            *pv -= lr * (mhat / (libm::sqrt(vhat) + ADAM_EPS) + weight_decay * *pv);
            if !pv.is_finite() {
                return Err(TrainError::NonFinite { tensor: name.clone() });
            }
        }
    }
    Ok(())
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, t) in grads.iter() {
        for &g in &t.data {
            sq += g * g;
        }
    }
    let norm = libm::sqrt(sq);
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            for g in t.data.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_wer: f64,
    pub lr_at_epoch_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// parameters from the epoch with the lowest validation loss
    pub best_params: Parameters,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

fn sequence_for(
    vocab: &Vocabulary,
    sample: &TrainSample,
    desc: &[usize],
    cfg: &TrainingConfig,
) -> Result<tokenizer::DecoderSequence, TrainError> {
    let desc_ids: &[usize] = if cfg.use_descriptions { desc } else { &[] };
    Ok(tokenizer::build_decoder_sequence(
        vocab,
        desc_ids,
        &sample.transcript_ids,
        cfg.desc_budget,
    )?)
}

/// Average loss over a dataset without updating parameters.
pub fn evaluate_loss(
    params: &Parameters,
    data: &TrainData,
    vocab: &Vocabulary,
    cfg: &TrainingConfig,
) -> Result<f64, TrainError> {
    evaluate_loss_cached(params, data, vocab, cfg, None)
}

fn evaluate_loss_cached(
    params: &Parameters,
    data: &TrainData,
    vocab: &Vocabulary,
    cfg: &TrainingConfig,
    enc_cache: Option<&[Mat]>,
) -> Result<f64, TrainError> {
    if data.samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for (idx, sample) in data.samples.iter().enumerate() {
        let desc = &data.descriptions[sample.desc_index];
        let seq = sequence_for(vocab, sample, desc, cfg)?;
        let logits = match enc_cache {
            Some(cache) => model::forward_from_encoded(params, &cache[idx], &seq)?,
            None => model::forward(params, &sample.features, &seq)?,
        };
        total += model::loss(&logits, &seq)?;
    }
    Ok(total / data.samples.len() as f64)
}

/// Encoder outputs for every sample; only valid while the encoder stays
/// frozen.
fn encode_all(params: &Parameters, data: &TrainData) -> Result<Vec<Mat>, TrainError> {
    data.samples
        .iter()
        .map(|s| Ok(model::encode_features(params, &s.features)?))
        .collect()
}

/// Greedy-decode every sample and pool WER against the reference token ids.
pub fn evaluate_wer(
    params: &Parameters,
    data: &TrainData,
    vocab: &Vocabulary,
    cfg: &TrainingConfig,
) -> Result<f64, TrainError> {
    if data.samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut reports = Vec::with_capacity(data.samples.len());
    for sample in &data.samples {
        let desc: &[usize] = if cfg.use_descriptions {
            &data.descriptions[sample.desc_index]
        } else {
            &[]
        };
        let desc = tokenizer::truncate_description(desc, cfg.desc_budget);
        let max_len = sample.transcript_ids.len() * 2 + 8;
        let hyp_ids = model::greedy_decode(params, &sample.features, &desc, max_len)?;
        let reference = text::normalize(&vocab.decode(&sample.transcript_ids)?);
        let hypothesis = text::normalize(&vocab.decode(&hyp_ids)?);
        reports.push(text::word_error_rate(&reference, &hypothesis)?);
    }
    Ok(text::aggregate_wer(&reports)?.wer)
}

/// Fine-tune `params` on `train_data`, validating each epoch and keeping the
/// checkpoint with the lowest validation loss.
pub fn train(
    mut params: Parameters,
    train_data: &TrainData,
    valid_data: &TrainData,
    vocab: &Vocabulary,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_data.samples.is_empty() || valid_data.samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.use_descriptions && cfg.perturb_prob > 0.0 && train_data.descriptions.len() < 2 {
        return Err(TrainError::PoolTooSmall {
            pool: train_data.descriptions.len(),
        });
    }

    let n = train_data.samples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup = if total_steps <= cfg.warmup_steps {
        // desk-scale runs can be shorter than the canonical warmup; shrink
        // it so the schedule stays well formed
        total_steps.saturating_sub(1)
    } else {
        cfg.warmup_steps
    };

    let mut rng = Rng::from_seed(cfg.seed);
    let mut state = AdamState::new(&params);
    // a frozen encoder maps each sample to the same states all run long
    let train_enc = if cfg.freeze_encoder {
        Some(encode_all(&params, train_data)?)
    } else {
        None
    };
    let valid_enc = if cfg.freeze_encoder {
        Some(encode_all(&params, valid_data)?)
    } else {
        None
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Parameters)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_lr = 0.0;

        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let sample = &train_data.samples[idx];
                let desc_index = if cfg.use_descriptions {
                    context_perturb(
                        sample.desc_index,
                        train_data.descriptions.len(),
                        cfg.perturb_prob,
                        &mut rng,
                    )?
                } else {
                    sample.desc_index
                };
                let seq = sequence_for(
                    vocab,
                    sample,
                    &train_data.descriptions[desc_index],
                    cfg,
                )?;
                let (loss, g) = match &train_enc {
                    Some(cache) => model::backward_decoder_only(&params, &cache[idx], &seq)?,
                    None => model::backward(&params, &sample.features, &seq)?,
                };
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { step });
                }
                batch_loss += loss;
                for (name, t) in grads.iter_mut() {
                    t.data
                        .iter_mut()
                        .zip(&g.get(name).data)
                        .for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for (_, t) in grads.iter_mut() {
                for v in t.data.iter_mut() {
                    *v *= scale;
                }
            }
            if let Some(max_norm) = cfg.clip_norm {
                clip_gradients(&mut grads, max_norm);
            }
            let lr = lr_schedule(step + 1, total_steps, warmup, cfg.base_lr)?;
            adamw_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                cfg.weight_decay,
                cfg.freeze_encoder,
            )?;
            epoch_loss += batch_loss * scale;
            epoch_lr = lr;
            step += 1;
        }

        let train_loss = epoch_loss / steps_per_epoch as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        let valid_loss =
            evaluate_loss_cached(&params, valid_data, vocab, cfg, valid_enc.as_deref())?;
        let valid_wer = evaluate_wer(&params, valid_data, vocab, cfg)?;
        history.push(EpochMetrics {
            epoch,
            train_loss,
            valid_loss,
            valid_wer,
            lr_at_epoch_end: epoch_lr,
        });
        let better = match &best {
            None => true,
            Some((best_loss, _, _)) => valid_loss < *best_loss,
        };
        if better {
            best = Some((valid_loss, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use alloc::vec;

    #[test]
    fn schedule_endpoints_are_exact() {
        let base = 3e-4;
        assert_eq!(lr_schedule(0, 1000, 100, base).unwrap(), 0.0);
        assert_eq!(lr_schedule(100, 1000, 100, base).unwrap(), base);
        assert_eq!(lr_schedule(1000, 1000, 100, base).unwrap(), 0.0);
        assert_eq!(lr_schedule(1500, 1000, 100, base).unwrap(), 0.0);
        // halfway through warmup and decay
        assert!((lr_schedule(50, 1000, 100, base).unwrap() - base / 2.0).abs() < 1e-18);
        assert!((lr_schedule(550, 1000, 100, base).unwrap() - base / 2.0).abs() < 1e-18);
        assert!(lr_schedule(100, 100, 100, base).is_err());
        assert!(lr_schedule(0, 50, 100, base).is_err());
    }

    #[test]
    fn schedule_without_warmup_starts_at_base() {
        assert_eq!(lr_schedule(0, 10, 0, 1.0).unwrap(), 1.0);
        assert_eq!(lr_schedule(5, 10, 0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn perturb_never_returns_self_and_hits_rate() {
        let mut rng = Rng::from_seed(9);
        let mut swapped = 0usize;
        let trials = 20_000;
        for _ in 0..trials {
            let out = context_perturb(3, 10, 0.05, &mut rng).unwrap();
            if out != 3 {
                swapped += 1;
                assert!(out < 10);
            }
        }
        // binomial(20000, 0.05) stays within [850, 1150] w.h.p.
        assert!((850..=1150).contains(&swapped), "swapped {swapped}");
    }

    #[test]
    fn perturb_requires_pool_when_active() {
        let mut rng = Rng::from_seed(0);
        assert!(matches!(
            context_perturb(0, 1, 0.5, &mut rng),
            Err(TrainError::PoolTooSmall { pool: 1 })
        ));
        // inactive perturbation never touches the pool
        assert_eq!(context_perturb(0, 1, 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn perturb_is_uniform_over_others() {
        let mut rng = Rng::from_seed(4);
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[context_perturb(2, 5, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        for (i, &c) in counts.iter().enumerate() {
            if i != 2 {
                assert!((11_500..=13_500).contains(&c), "index {i}: {c}");
            }
        }
    }

    fn tiny_setup() -> (Parameters, Vocabulary, TrainData, TrainingConfig) {
        let vocab = Vocabulary::build(&["ab ba", "context words"]).unwrap();
        let mut config = ModelConfig::desk(vocab.len(), 7);
        config.d_model = 16;
        config.ffn_dim = 32;
        config.n_heads = 2;
        let params = init_model(&config).unwrap();

        let mut rng = Rng::from_seed(11);
        let n_mels = config.n_mels;
        let mut samples = Vec::new();
        for i in 0..4 {
            let n_frames = 6;
            let data: Vec<f64> = (0..n_frames * n_mels).map(|_| rng.normal()).collect();
            samples.push(TrainSample {
                features: FeatureSequence::new(n_frames, n_mels, data).unwrap(),
                transcript_ids: vocab.encode(if i % 2 == 0 { "ab" } else { "ba" }).unwrap(),
                desc_index: i % 2,
            });
        }
        let descriptions = vec![
            vocab.encode("context").unwrap(),
            vocab.encode("words").unwrap(),
        ];
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: 2,
            base_lr: 1e-3,
            warmup_steps: 1,
            seed: 3,
            ..TrainingConfig::default()
        };
        (params, vocab, TrainData { samples, descriptions }, cfg)
    }

    #[test]
    fn frozen_encoder_tensors_are_bit_identical() {
        let (params, vocab, data, cfg) = tiny_setup();
        let before = params.clone();
        let out = train(params, &data, &data, &vocab, &cfg).unwrap();
        let mut enc_seen = 0;
        let mut dec_moved = false;
        for (name, t) in out.best_params.set.iter() {
            match t.group {
                ParamGroup::Encoder => {
                    enc_seen += 1;
                    assert_eq!(t.data, before.set.get(name).data, "{name} changed");
                }
                ParamGroup::Decoder => {
                    if t.data != before.set.get(name).data {
                        dec_moved = true;
                    }
                }
            }
        }
        assert!(enc_seen > 0);
        assert!(dec_moved, "no decoder tensor was updated");
    }

    #[test]
    fn full_finetune_updates_encoder() {
        let (params, vocab, data, mut cfg) = tiny_setup();
        cfg.freeze_encoder = false;
        let before = params.clone();
        let out = train(params, &data, &data, &vocab, &cfg).unwrap();
        let moved = out
            .best_params
            .set
            .iter()
            .any(|(name, t)| t.group == ParamGroup::Encoder && t.data != before.set.get(name).data);
        assert!(moved);
    }

    #[test]
    fn training_is_deterministic() {
        let (params, vocab, data, cfg) = tiny_setup();
        let a = train(params.clone(), &data, &data, &vocab, &cfg).unwrap();
        let b = train(params, &data, &data, &vocab, &cfg).unwrap();
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn training_reduces_loss() {
        let (params, vocab, data, mut cfg) = tiny_setup();
        cfg.epochs = 15;
        cfg.perturb_prob = 0.0;
        let initial = evaluate_loss(&params, &data, &vocab, &cfg).unwrap();
        let out = train(params, &data, &data, &vocab, &cfg).unwrap();
        let last = out.history.last().unwrap();
        assert!(
            last.valid_loss < initial,
            "loss {initial} -> {}",
            last.valid_loss
        );
        assert_eq!(out.history.len(), 15);
    }

    #[test]
    fn best_epoch_tracks_lowest_valid_loss() {
        let (params, vocab, data, mut cfg) = tiny_setup();
        cfg.epochs = 5;
        let out = train(params, &data, &data, &vocab, &cfg).unwrap();
        let min_epoch = out
            .history
            .iter()
            .min_by(|a, b| a.valid_loss.partial_cmp(&b.valid_loss).unwrap())
            .unwrap()
            .epoch;
        assert_eq!(out.best_epoch, min_epoch);
    }

    #[test]
    fn rejects_bad_configs_and_empty_data() {
        let (params, vocab, data, cfg) = tiny_setup();
        let bad = TrainingConfig { epochs: 0, ..cfg };
        assert!(train(params.clone(), &data, &data, &vocab, &bad).is_err());
        let bad = TrainingConfig { base_lr: 0.0, ..cfg };
        assert!(train(params.clone(), &data, &data, &vocab, &bad).is_err());
        let bad = TrainingConfig { perturb_prob: 1.5, ..cfg };
        assert!(train(params.clone(), &data, &data, &vocab, &bad).is_err());
        let empty = TrainData::default();
        assert!(matches!(
            train(params, &empty, &data, &vocab, &cfg),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn clip_caps_global_norm() {
        let (params, _, _, _) = tiny_setup();
        let mut grads = params.zeros_like();
        for (_, t) in grads.iter_mut() {
            for v in t.data.iter_mut() {
                *v = 1.0;
            }
        }
        let total: usize = grads.iter().map(|(_, t)| t.data.len()).sum();
        let pre = clip_gradients(&mut grads, 1.0);
        assert!((pre - libm::sqrt(total as f64)).abs() < 1e-9);
        let mut sq = 0.0;
        for (_, t) in grads.iter() {
            sq += t.data.iter().map(|v| v * v).sum::<f64>();
        }
        assert!((libm::sqrt(sq) - 1.0).abs() < 1e-9);
    }
}

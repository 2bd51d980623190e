//! Condition-wise transcription, WER scoring, ablation tables, and
//! with/without-description qualitative diffs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::model::{self, ModelError, Parameters};
use crate::text::{self, AlignOp, NormalizedTranscript, TextError, WerReport};
use crate::tokenizer::{self, TokenizerError, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCondition {
    Frozen,
    FullFt,
    FullFtDesc,
    DecoderFtDesc,
    DecoderFtDescPerturb,
}

impl EvalCondition {
    /// Table row order.
    pub const ALL: [EvalCondition; 5] = [
        EvalCondition::Frozen,
        EvalCondition::FullFt,
        EvalCondition::FullFtDesc,
        EvalCondition::DecoderFtDesc,
        EvalCondition::DecoderFtDescPerturb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EvalCondition::Frozen => "frozen",
            EvalCondition::FullFt => "full_ft",
            EvalCondition::FullFtDesc => "full_ft_desc",
            EvalCondition::DecoderFtDesc => "decoder_ft_desc",
            EvalCondition::DecoderFtDescPerturb => "decoder_ft_desc_perturb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Whether descriptions are supplied at training and inference time.
    pub fn uses_descriptions(&self) -> bool {
        !matches!(self, EvalCondition::Frozen | EvalCondition::FullFt)
    }

    /// Whether any fine-tuning happens at all.
    pub fn trains(&self) -> bool {
        !matches!(self, EvalCondition::Frozen)
    }

    /// Whether encoder parameters stay fixed during fine-tuning.
    pub fn freezes_encoder(&self) -> bool {
        matches!(
            self,
            EvalCondition::Frozen
                | EvalCondition::DecoderFtDesc
                | EvalCondition::DecoderFtDescPerturb
        )
    }

    pub fn perturbs_context(&self) -> bool {
        matches!(self, EvalCondition::DecoderFtDescPerturb)
    }
}

impl fmt::Display for EvalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalError {
    MissingDescription { doc_id: String },
    MissingHypothesis { utt_id: String },
    EmptyCorpus,
    Model(ModelError),
    Tokenizer(TokenizerError),
    Text(TextError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::MissingDescription { doc_id } => {
                write!(f, "document {doc_id} has no description but the condition needs one")
            }
            EvalError::MissingHypothesis { utt_id } => {
                write!(f, "no hypothesis for utterance {utt_id}")
            }
            EvalError::EmptyCorpus => write!(f, "no utterances to evaluate"),
            EvalError::Model(e) => write!(f, "{e}"),
            EvalError::Tokenizer(e) => write!(f, "{e}"),
            EvalError::Text(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvalError {}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(e)
    }
}

impl From<TokenizerError> for EvalError {
    fn from(e: TokenizerError) -> Self {
        EvalError::Tokenizer(e)
    }
}

impl From<TextError> for EvalError {
    fn from(e: TextError) -> Self {
        EvalError::Text(e)
    }
}

/// Encode normalized text, silently dropping characters outside the vocab.
/// Descriptions can contain characters the transcript corpus never uses.
pub fn encode_lossy(vocab: &Vocabulary, text: &str) -> Vec<usize> {
    let normalized = text::normalize(text);
    let mut out = Vec::new();
    let mut buf = [0u8; 4];
    for ch in normalized.as_str().chars() {
        if let Ok(ids) = vocab.encode(ch.encode_utf8(&mut buf)) {
            out.extend(ids);
        }
    }
    out
}

/// Greedy-decode every utterance of every document; the prompt is the
/// document description when `use_description`, otherwise empty.
pub fn transcribe_corpus(
    params: &Parameters,
    documents: &[Document],
    vocab: &Vocabulary,
    use_description: bool,
    desc_budget: usize,
) -> Result<BTreeMap<String, NormalizedTranscript>, EvalError> {
    let mut out = BTreeMap::new();
    for doc in documents {
        let desc_ids = if use_description {
            let desc = doc.description.as_ref().ok_or_else(|| {
                EvalError::MissingDescription {
                    doc_id: doc.doc_id.clone(),
                }
            })?;
            tokenizer::truncate_description(&encode_lossy(vocab, &desc.text), desc_budget)
        } else {
            Vec::new()
        };
        let capacity = params
            .config
            .max_text
            .saturating_sub(desc_ids.len() + if desc_ids.is_empty() { 2 } else { 3 });
        for utt in &doc.utterances {
            let ids = model::greedy_decode(params, &utt.features, &desc_ids, capacity)?;
            out.insert(utt.utt_id.clone(), text::normalize(&vocab.decode(&ids)?));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub report: WerReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub corpus: WerReport,
    pub per_doc: Vec<DocScore>,
    /// fraction of reference homophone slots whose aligned hypothesis word
    /// matches; only computed when a homophone set is supplied
    pub homophone_accuracy: Option<f64>,
}

/// Pool WER per document and corpus-wide; optionally compute how often
/// homophone reference slots resolve to the correct spelling. Deleted
/// slots count as incorrect.
pub fn score(
    documents: &[Document],
    hypotheses: &BTreeMap<String, NormalizedTranscript>,
    homophones: Option<&BTreeSet<String>>,
) -> Result<ScoreReport, EvalError> {
    if documents.iter().all(|d| d.utterances.is_empty()) {
        return Err(EvalError::EmptyCorpus);
    }
    let mut per_doc = Vec::with_capacity(documents.len());
    let mut all_reports = Vec::new();
    let mut slots = 0usize;
    let mut correct = 0usize;

    for doc in documents {
        let mut doc_reports = Vec::with_capacity(doc.utterances.len());
        for utt in &doc.utterances {
            let hyp = hypotheses.get(&utt.utt_id).ok_or_else(|| {
                EvalError::MissingHypothesis {
                    utt_id: utt.utt_id.clone(),
                }
            })?;
            doc_reports.push(text::word_error_rate(&utt.transcript, hyp)?);
            if let Some(set) = homophones {
                let ref_words: Vec<&str> = utt.transcript.words().collect();
                let hyp_words: Vec<&str> = hyp.words().collect();
                for step in text::align(&ref_words, &hyp_words) {
                    if let Some(ri) = step.ref_idx {
                        if set.contains(ref_words[ri]) {
                            slots += 1;
                            if step.op == AlignOp::Hit {
                                correct += 1;
                            }
                        }
                    }
                }
            }
        }
        if !doc_reports.is_empty() {
            per_doc.push(DocScore {
                doc_id: doc.doc_id.clone(),
                report: text::aggregate_wer(&doc_reports)?,
            });
            all_reports.extend(doc_reports);
        }
    }

    Ok(ScoreReport {
        corpus: text::aggregate_wer(&all_reports)?,
        per_doc,
        homophone_accuracy: homophones.map(|_| {
            if slots == 0 {
                0.0
            } else {
                correct as f64 / slots as f64
            }
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub condition: EvalCondition,
    pub score: ScoreReport,
}

/// Machine-readable row emitted alongside the rendered table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub condition: String,
    pub corpus_wer: f64,
    pub homophone_accuracy: Option<f64>,
    pub is_best: bool,
}

fn percent(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

/// Render results in the canonical row order with two-decimal percentage
/// WERs; the smallest WER is marked with `*`.
pub fn ablation_table(results: &[EvalResult]) -> (String, Vec<AblationRecord>) {
    let mut ordered: Vec<&EvalResult> = Vec::new();
    for cond in EvalCondition::ALL {
        ordered.extend(results.iter().filter(|r| r.condition == cond));
    }
    let best_wer = ordered
        .iter()
        .map(|r| r.score.corpus.wer)
        .fold(f64::INFINITY, f64::min);

    let mut records = Vec::with_capacity(ordered.len());
    let mut table = String::new();
    table.push_str(&format!(
        "{:<26} {:>10} {:>14}\n",
        "condition", "wer", "homophone_acc"
    ));
    for r in &ordered {
        let is_best = r.score.corpus.wer == best_wer;
        let wer_cell = if is_best {
            format!("{} *", percent(r.score.corpus.wer))
        } else {
            percent(r.score.corpus.wer)
        };
        let acc_cell = match r.score.homophone_accuracy {
            Some(a) => percent(a),
            None => "-".to_string(),
        };
        table.push_str(&format!(
            "{:<26} {:>10} {:>14}\n",
            r.condition.name(),
            wer_cell,
            acc_cell
        ));
        records.push(AblationRecord {
            condition: r.condition.name().to_string(),
            corpus_wer: r.score.corpus.wer,
            homophone_accuracy: r.score.homophone_accuracy,
            is_best,
        });
    }
    (table, records)
}

/// One utterance where the described and description-free hypotheses are
/// compared against the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffExample {
    pub utt_id: String,
    pub reference: NormalizedTranscript,
    pub hyp_with: NormalizedTranscript,
    pub hyp_without: NormalizedTranscript,
    /// reference word positions correct with the description but wrong
    /// without it
    pub corrected_positions: Vec<usize>,
}

impl DiffExample {
    pub fn corrected_words(&self) -> usize {
        self.corrected_positions.len()
    }
}

fn hit_positions(reference: &[&str], hypothesis: &[&str]) -> BTreeSet<usize> {
    text::align(reference, hypothesis)
        .into_iter()
        .filter(|s| s.op == AlignOp::Hit)
        .filter_map(|s| s.ref_idx)
        .collect()
}

/// Word-align both hypotheses to the reference and mark positions the
/// description fixed.
pub fn qualitative_diff(
    utt_id: impl Into<String>,
    reference: &NormalizedTranscript,
    hyp_with: &NormalizedTranscript,
    hyp_without: &NormalizedTranscript,
) -> DiffExample {
    let ref_words: Vec<&str> = reference.words().collect();
    let with_hits = hit_positions(&ref_words, &hyp_with.words().collect::<Vec<_>>());
    let without_hits = hit_positions(&ref_words, &hyp_without.words().collect::<Vec<_>>());
    let corrected_positions = with_hits
        .iter()
        .copied()
        .filter(|p| !without_hits.contains(p))
        .collect();
    DiffExample {
        utt_id: utt_id.into(),
        reference: reference.clone(),
        hyp_with: hyp_with.clone(),
        hyp_without: hyp_without.clone(),
        corrected_positions,
    }
}

/// Diff every utterance and keep the top `k` by corrected-word count,
/// breaking ties by utterance id.
pub fn diff_corpus(
    documents: &[Document],
    hyps_with: &BTreeMap<String, NormalizedTranscript>,
    hyps_without: &BTreeMap<String, NormalizedTranscript>,
    k: usize,
) -> Result<Vec<DiffExample>, EvalError> {
    let mut diffs = Vec::new();
    for doc in documents {
        for utt in &doc.utterances {
            let with = hyps_with.get(&utt.utt_id).ok_or_else(|| {
                EvalError::MissingHypothesis {
                    utt_id: utt.utt_id.clone(),
                }
            })?;
            let without = hyps_without.get(&utt.utt_id).ok_or_else(|| {
                EvalError::MissingHypothesis {
                    utt_id: utt.utt_id.clone(),
                }
            })?;
            diffs.push(qualitative_diff(
                utt.utt_id.clone(),
                &utt.transcript,
                with,
                without,
            ));
        }
    }
    diffs.sort_by(|a, b| {
        b.corrected_words()
            .cmp(&a.corrected_words())
            .then_with(|| a.utt_id.cmp(&b.utt_id))
    });
    diffs.truncate(k);
    Ok(diffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descgen::{Description, DescriptionSource, MetadataRecord};
    use crate::model::FeatureSequence;
    use crate::rng::Rng;
    use alloc::vec;

    fn doc_with(doc_id: &str, transcripts: &[&str], description: Option<&str>) -> Document {
        let utterances = transcripts
            .iter()
            .enumerate()
            .map(|(i, t)| crate::data::Utterance {
                utt_id: format!("{doc_id}-u{i}"),
                features: FeatureSequence::new(4, 2, vec![0.1; 8]).unwrap(),
                transcript: text::normalize(t),
                duration_s: 0.04,
            })
            .collect::<Vec<_>>();
        let mut doc = Document {
            doc_id: doc_id.to_string(),
            meta: MetadataRecord::generic(doc_id),
            description: description.map(|d| Description {
                text: d.to_string(),
                source: DescriptionSource::Collected,
                prompt_used: String::new(),
                created_at: 0,
            }),
            utterances,
            duration_s: 0.0,
        };
        doc.recompute_duration();
        doc
    }

    fn hyps(pairs: &[(&str, &str)]) -> BTreeMap<String, NormalizedTranscript> {
        pairs
            .iter()
            .map(|(id, t)| (id.to_string(), text::normalize(t)))
            .collect()
    }

    #[test]
    fn condition_names_round_trip() {
        for cond in EvalCondition::ALL {
            assert_eq!(EvalCondition::from_name(cond.name()), Some(cond));
        }
        assert_eq!(EvalCondition::from_name("nope"), None);
        assert!(!EvalCondition::Frozen.uses_descriptions());
        assert!(!EvalCondition::FullFt.uses_descriptions());
        assert!(EvalCondition::FullFtDesc.uses_descriptions());
        assert!(EvalCondition::DecoderFtDesc.uses_descriptions());
        assert!(EvalCondition::DecoderFtDescPerturb.uses_descriptions());
        assert!(!EvalCondition::Frozen.trains());
        assert!(!EvalCondition::FullFt.freezes_encoder());
        assert!(!EvalCondition::FullFtDesc.freezes_encoder());
        assert!(EvalCondition::DecoderFtDesc.freezes_encoder());
        assert!(EvalCondition::DecoderFtDescPerturb.perturbs_context());
        assert!(!EvalCondition::DecoderFtDesc.perturbs_context());
    }

    #[test]
    fn perfect_hypotheses_score_zero_wer_full_accuracy() {
        let docs = vec![doc_with("d0", &["byte one", "two bite"], None)];
        let h = hyps(&[("d0-u0", "byte one"), ("d0-u1", "two bite")]);
        let set: BTreeSet<String> = ["byte".to_string(), "bite".to_string()].into();
        let r = score(&docs, &h, Some(&set)).unwrap();
        assert_eq!(r.corpus.wer, 0.0);
        assert_eq!(r.homophone_accuracy, Some(1.0));
        assert_eq!(r.per_doc.len(), 1);
    }

    #[test]
    fn flipped_homophones_score_zero_accuracy() {
        let docs = vec![doc_with("d0", &["byte one", "two byte"], None)];
        let h = hyps(&[("d0-u0", "bite one"), ("d0-u1", "two bite")]);
        let set: BTreeSet<String> = ["byte".to_string(), "bite".to_string()].into();
        let r = score(&docs, &h, Some(&set)).unwrap();
        assert_eq!(r.homophone_accuracy, Some(0.0));
        // 2 substitutions over 4 reference words
        assert!((r.corpus.wer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deleted_homophone_slots_count_incorrect() {
        let docs = vec![doc_with("d0", &["byte one"], None)];
        let h = hyps(&[("d0-u0", "one")]);
        let set: BTreeSet<String> = ["byte".to_string()].into();
        let r = score(&docs, &h, Some(&set)).unwrap();
        assert_eq!(r.homophone_accuracy, Some(0.0));
    }

    #[test]
    fn corpus_report_matches_per_doc_recount() {
        let docs = vec![
            doc_with("d0", &["a b c", "d e"], None),
            doc_with("d1", &["f g h i"], None),
        ];
        let h = hyps(&[("d0-u0", "a x c"), ("d0-u1", "d e q"), ("d1-u0", "f g")]);
        let r = score(&docs, &h, None).unwrap();
        let pooled =
            text::aggregate_wer(&r.per_doc.iter().map(|d| d.report).collect::<Vec<_>>()).unwrap();
        assert_eq!(r.corpus, pooled);
        assert_eq!(r.homophone_accuracy, None);
    }

    #[test]
    fn missing_hypothesis_is_an_error() {
        let docs = vec![doc_with("d0", &["a b"], None)];
        let r = score(&docs, &BTreeMap::new(), None);
        assert!(matches!(
            r,
            Err(EvalError::MissingHypothesis { ref utt_id }) if utt_id == "d0-u0"
        ));
    }

    #[test]
    fn random_pair_guesser_converges_to_half() {
        // simulate a guesser that picks a uniform pair member per slot
        let mut rng = Rng::from_seed(123);
        let mut correct = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let truth = rng.below(2);
            let guess = rng.below(2);
            if truth == guess {
                correct += 1;
            }
        }
        let acc = correct as f64 / n as f64;
        assert!((acc - 0.5).abs() <= 0.02, "acc {acc}");
    }

    #[test]
    fn table_formats_percentages_and_marks_minimum() {
        let base = ScoreReport {
            corpus: WerReport {
                substitutions: 0,
                deletions: 0,
                insertions: 0,
                hits: 1,
                ref_words: 1,
                wer: 0.1515,
            },
            per_doc: vec![],
            homophone_accuracy: Some(0.75),
        };
        let mut low = base.clone();
        low.corpus.wer = 0.0801;
        let results = vec![
            EvalResult {
                condition: EvalCondition::DecoderFtDescPerturb,
                score: low,
            },
            EvalResult {
                condition: EvalCondition::Frozen,
                score: base,
            },
        ];
        let (table, records) = ablation_table(&results);
        assert!(table.contains("15.15%"), "{table}");
        assert!(table.contains("8.01% *"), "{table}");
        // canonical order puts frozen first despite input order
        assert_eq!(records[0].condition, "frozen");
        assert_eq!(records[1].condition, "decoder_ft_desc_perturb");
        assert!(records[1].is_best && !records[0].is_best);
        assert_eq!(records[1].homophone_accuracy, Some(0.75));
    }

    #[test]
    fn single_condition_table_has_one_row() {
        let results = vec![EvalResult {
            condition: EvalCondition::FullFt,
            score: ScoreReport {
                corpus: WerReport {
                    substitutions: 1,
                    deletions: 0,
                    insertions: 0,
                    hits: 3,
                    ref_words: 4,
                    wer: 0.25,
                },
                per_doc: vec![],
                homophone_accuracy: None,
            },
        }];
        let (table, records) = ablation_table(&results);
        assert_eq!(table.lines().count(), 2);
        assert_eq!(records.len(), 1);
        assert!(table.contains("25.00% *"));
    }

    #[test]
    fn diff_marks_words_fixed_by_description() {
        let reference = text::normalize("a bunch of bytes");
        let with = text::normalize("a bunch of bytes");
        let without = text::normalize("a bunch of bites");
        let d = qualitative_diff("u0", &reference, &with, &without);
        assert_eq!(d.corrected_positions, vec![3]);
        assert_eq!(d.corrected_words(), 1);
    }

    #[test]
    fn identical_hypotheses_produce_no_marks() {
        let reference = text::normalize("x y z");
        let hyp = text::normalize("x q z");
        let d = qualitative_diff("u0", &reference, &hyp, &hyp);
        assert!(d.corrected_positions.is_empty());
    }

    #[test]
    fn mark_count_is_bounded_by_error_delta_on_random_pairs() {
        let words = ["a", "b", "c", "d", "e"];
        let mut rng = Rng::from_seed(5);
        for _ in 0..500 {
            let sample = |rng: &mut Rng| {
                let len = 1 + rng.below(6);
                (0..len)
                    .map(|_| words[rng.below(words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let reference = text::normalize(&sample(&mut rng));
            let with = text::normalize(&sample(&mut rng));
            let without = text::normalize(&sample(&mut rng));
            let d = qualitative_diff("u", &reference, &with, &without);
            let ref_words: Vec<&str> = reference.words().collect();
            let hits_with = hit_positions(&ref_words, &with.words().collect::<Vec<_>>()).len();
            let hits_without =
                hit_positions(&ref_words, &without.words().collect::<Vec<_>>()).len();
            // marks count at least the net hit improvement
            assert!(d.corrected_words() >= hits_with.saturating_sub(hits_without));
        }
    }

    #[test]
    fn diff_corpus_sorts_by_corrected_count() {
        let docs = vec![doc_with("d0", &["a b c d", "e f"], None)];
        let with = hyps(&[("d0-u0", "a b c d"), ("d0-u1", "e f")]);
        let without = hyps(&[("d0-u0", "x y z w"), ("d0-u1", "e f")]);
        let top = diff_corpus(&docs, &with, &without, 5).unwrap();
        assert_eq!(top[0].utt_id, "d0-u0");
        assert_eq!(top[0].corrected_words(), 4);
        assert_eq!(top[1].corrected_words(), 0);
        let top1 = diff_corpus(&docs, &with, &without, 1).unwrap();
        assert_eq!(top1.len(), 1);
    }

    #[test]
    fn transcription_requires_description_when_conditioned() {
        let vocab = Vocabulary::build(&["abc"]).unwrap();
        let mut config = crate::model::ModelConfig::desk(vocab.len(), 1);
        config.d_model = 8;
        config.ffn_dim = 16;
        config.n_heads = 2;
        config.n_mels = 2;
        let params = crate::model::init_model(&config).unwrap();
        let docs = vec![doc_with("d9", &["a b"], None)];
        let err = transcribe_corpus(&params, &docs, &vocab, true, 32);
        assert!(matches!(
            err,
            Err(EvalError::MissingDescription { ref doc_id }) if doc_id == "d9"
        ));
        // without descriptions the same corpus transcribes fine
        let ok = transcribe_corpus(&params, &docs, &vocab, false, 32).unwrap();
        assert_eq!(ok.len(), 1);
        let again = transcribe_corpus(&params, &docs, &vocab, false, 32).unwrap();
        assert_eq!(ok, again);
    }

    #[test]
    fn lossy_encode_drops_unknown_chars() {
        let vocab = Vocabulary::build(&["abc"]).unwrap();
        let ids = encode_lossy(&vocab, "A zb!");
        let decoded = vocab.decode(&ids).unwrap();
        assert_eq!(decoded, "a b");
    }
}

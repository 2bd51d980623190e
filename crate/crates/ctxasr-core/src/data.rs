//! Corpus structures, audio-to-feature conversion, duration-targeted
//! splitting, and the synthetic homophone-collision corpus.
//!
//! The synthetic generator is the verification workhorse: homophone pair
//! members map to identical phoneme sequences, so with zero noise their
//! features are indistinguishable and only the document description can
//! disambiguate them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::descgen::{Description, DescriptionSource, MetadataRecord};
use crate::model::FeatureSequence;
use crate::rng::Rng;
use crate::text::{self, NormalizedTranscript};

pub const FEATURE_MAGIC: &[u8; 5] = b"FEAT1";

/// Frame hop used to convert synthetic frame counts into durations.
const FRAME_SECONDS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub features: FeatureSequence,
    pub transcript: NormalizedTranscript,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub meta: MetadataRecord,
    pub description: Option<Description>,
    pub utterances: Vec<Utterance>,
    pub duration_s: f64,
}

impl Document {
    pub fn recompute_duration(&mut self) {
        self.duration_s = self.utterances.iter().map(|u| u.duration_s).sum();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataError {
    InvalidConfig(String),
    InfeasibleSplit { total_s: f64, wanted_s: f64 },
    AudioTooShort { samples: usize, window: usize },
    BadFeatureFile(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::InvalidConfig(msg) => write!(f, "invalid data config: {msg}"),
            DataError::InfeasibleSplit { total_s, wanted_s } => write!(
                f,
                "corpus of {total_s:.1}s cannot satisfy split targets totalling {wanted_s:.1}s"
            ),
            DataError::AudioTooShort { samples, window } => {
                write!(f, "audio of {samples} samples is shorter than one {window}-sample window")
            }
            DataError::BadFeatureFile(msg) => write!(f, "bad feature file: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

// ---------------------------------------------------------------------------
// audio frontend

/// Linear-interpolation resampling to 16 kHz. Identity at 16 kHz input;
/// empty input yields empty output.
pub fn resample_to_16k(samples: &[f64], source_rate: f64) -> Vec<f64> {
    const TARGET: f64 = 16_000.0;
    if samples.is_empty() {
        return Vec::new();
    }
    if source_rate == TARGET {
        return samples.to_vec();
    }
    let out_len = libm::round(samples.len() as f64 * TARGET / source_rate) as usize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * source_rate / TARGET;
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(samples.len() - 1);
        let lo = lo.min(samples.len() - 1);
        let frac = pos - lo as f64;
        out.push(samples[lo] * (1.0 - frac) + samples[hi] * frac);
    }
    out
}

const WINDOW: usize = 400; // 25 ms at 16 kHz
const HOP: usize = 160; // 10 ms
const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// Log-mel features from 16 kHz samples: 25 ms windows with a 10 ms hop,
/// magnitude spectrum, triangular mel filters, natural log with a 1e-10
/// floor.
pub fn log_mel_features(samples: &[f64], n_mels: usize) -> Result<FeatureSequence, DataError> {
    if samples.len() < WINDOW {
        return Err(DataError::AudioTooShort {
            samples: samples.len(),
            window: WINDOW,
        });
    }
    let n_frames = (samples.len() - WINDOW) / HOP + 1;
    let n_bins = WINDOW / 2 + 1;

    // Hann window
    let hann: Vec<f64> = (0..WINDOW)
        .map(|n| 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * n as f64 / WINDOW as f64))
        .collect();

    // triangular filterbank over 0..8000 Hz
    let mel_max = hz_to_mel(8000.0);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = 16_000.0 / WINDOW as f64;
    let mut filters = vec![vec![0.0f64; n_bins]; n_mels];
    for (m, filter) in filters.iter_mut().enumerate() {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        for (k, w) in filter.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > lo && f < mid {
                *w = (f - lo) / (mid - lo);
            } else if f >= mid && f < hi {
                *w = (hi - f) / (hi - mid);
            }
        }
    }

    let mut data = Vec::with_capacity(n_frames * n_mels);
    let mut magnitude = vec![0.0f64; n_bins];
    for frame in 0..n_frames {
        let start = frame * HOP;
        // naive real DFT; desk-scale windows keep this cheap enough
        for (k, mag) in magnitude.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for n in 0..WINDOW {
                let x = samples[start + n] * hann[n];
                let angle = -2.0 * core::f64::consts::PI * (k * n) as f64 / WINDOW as f64;
                re += x * libm::cos(angle);
                im += x * libm::sin(angle);
            }
            *mag = libm::sqrt(re * re + im * im);
        }
        for filter in &filters {
            let energy: f64 = filter.iter().zip(&magnitude).map(|(w, m)| w * m).sum();
            data.push(libm::log(if energy > LOG_FLOOR { energy } else { LOG_FLOOR }));
        }
    }
    FeatureSequence::new(n_frames, n_mels, data)
        .map_err(|e| DataError::BadFeatureFile(e.to_string()))
}

// ---------------------------------------------------------------------------
// synthetic homophone corpus

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_words: usize,
    pub homophone_pairs: usize,
    pub n_docs: usize,
    pub utts_per_doc: usize,
    pub words_per_utt: usize,
    pub n_mels: usize,
    pub frames_per_phoneme: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_words: 40,
            homophone_pairs: 4,
            n_docs: 60,
            utts_per_doc: 30,
            words_per_utt: 6,
            n_mels: 16,
            frames_per_phoneme: 4,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.homophone_pairs < 1 {
            return Err(DataError::InvalidConfig("homophone_pairs must be >= 1".into()));
        }
        if 2 * self.homophone_pairs > self.vocab_words {
            return Err(DataError::InvalidConfig(format!(
                "2 x {} homophone words exceed vocab of {}",
                self.homophone_pairs, self.vocab_words
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(DataError::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        let counts = [
            self.n_docs,
            self.utts_per_doc,
            self.words_per_utt,
            self.n_mels,
            self.frames_per_phoneme,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(DataError::InvalidConfig("all counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Word-to-phoneme mapping shared by the synthetic corpus and its scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    /// word spelling -> phoneme id sequence
    pub words: BTreeMap<String, Vec<usize>>,
    /// phoneme id -> feature vector of length n_mels
    pub phonemes: Vec<Vec<f64>>,
    /// homophone spellings as (domain-a word, domain-b word); both map to
    /// the same phoneme sequence
    pub pairs: Vec<(String, String)>,
    /// silence phoneme inserted between words
    pub pause_phoneme: usize,
}

impl Lexicon {
    pub fn homophone_words(&self) -> BTreeSet<String> {
        self.pairs
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub lexicon: Lexicon,
}

const CONSONANTS: [char; 12] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

fn syllable(idx: usize) -> String {
    let c = CONSONANTS[idx / VOWELS.len()];
    let v = VOWELS[idx % VOWELS.len()];
    let mut s = String::new();
    s.push(c);
    s.push(v);
    s
}

/// Build the deterministic corpus: regular words shared across domains,
/// homophone pair members split between domain a and domain b, features
/// assembled from per-phoneme vectors plus Gaussian noise.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, DataError> {
    cfg.validate()?;
    let mut rng = Rng::from_seed(cfg.seed);

    // phoneme inventory: every CV syllable plus a pause
    let n_syllables = CONSONANTS.len() * VOWELS.len();
    let mut phonemes = Vec::with_capacity(n_syllables + 1);
    for _ in 0..n_syllables + 1 {
        phonemes.push((0..cfg.n_mels).map(|_| rng.normal()).collect::<Vec<f64>>());
    }
    let pause_phoneme = n_syllables;

    let n_regular = cfg.vocab_words - 2 * cfg.homophone_pairs;
    let mut words: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut regular: Vec<String> = Vec::with_capacity(n_regular);
    while regular.len() < n_regular {
        let len = 2 + rng.below(2);
        let ids: Vec<usize> = (0..len).map(|_| rng.below(n_syllables)).collect();
        let spelling: String = ids.iter().map(|&i| syllable(i)).collect();
        if words.contains_key(&spelling) {
            continue;
        }
        words.insert(spelling.clone(), ids);
        regular.push(spelling);
    }

    // homophones: same phoneme sequence, alternate spelling swaps the last
    // vowel for 'y', which no regular spelling can contain
    let mut pairs: Vec<(String, String)> = Vec::with_capacity(cfg.homophone_pairs);
    while pairs.len() < cfg.homophone_pairs {
        let len = 2 + rng.below(2);
        let ids: Vec<usize> = (0..len).map(|_| rng.below(n_syllables)).collect();
        let spelling_a: String = ids.iter().map(|&i| syllable(i)).collect();
        if words.contains_key(&spelling_a) {
            continue;
        }
        let mut spelling_b = spelling_a.clone();
        spelling_b.pop();
        spelling_b.push('y');
        if words.contains_key(&spelling_b) {
            continue;
        }
        words.insert(spelling_a.clone(), ids.clone());
        words.insert(spelling_b.clone(), ids);
        pairs.push((spelling_a, spelling_b));
    }

    // fixed per-domain description sentences; three or more content words
    // from the domain vocabulary appear verbatim
    let domain_desc = |side: usize| -> String {
        let members: Vec<&str> = pairs
            .iter()
            .map(|p| if side == 0 { p.0.as_str() } else { p.1.as_str() })
            .collect();
        let fillers: Vec<&str> = regular
            .iter()
            .skip(side * 3)
            .take(3)
            .map(String::as_str)
            .collect();
        // kept short so prompt + transcript stays inside the decoder text
        // budget of the desk model
        format!("a talk about {} and {}", members.join(" "), fillers.join(" "))
    };
    let descriptions = [domain_desc(0), domain_desc(1)];

    let mut documents = Vec::with_capacity(cfg.n_docs);
    for doc_idx in 0..cfg.n_docs {
        let side = doc_idx % 2;
        let doc_id = format!("synth-{doc_idx:03}");
        let mut utterances = Vec::with_capacity(cfg.utts_per_doc);
        for utt_idx in 0..cfg.utts_per_doc {
            let mut chosen: Vec<&str> = Vec::with_capacity(cfg.words_per_utt);
            for _ in 0..cfg.words_per_utt {
                // roughly a third of slots carry a domain homophone
                if rng.uniform() < 0.35 {
                    let p = &pairs[rng.below(pairs.len())];
                    chosen.push(if side == 0 { &p.0 } else { &p.1 });
                } else {
                    chosen.push(&regular[rng.below(regular.len())]);
                }
            }
            let transcript = text::normalize(&chosen.join(" "));

            let mut phoneme_seq: Vec<usize> = Vec::new();
            for (i, w) in chosen.iter().enumerate() {
                if i > 0 {
                    phoneme_seq.push(pause_phoneme);
                }
                phoneme_seq.extend_from_slice(&words[*w]);
            }
            let n_frames = phoneme_seq.len() * cfg.frames_per_phoneme;
            let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
            for &ph in &phoneme_seq {
                for _ in 0..cfg.frames_per_phoneme {
                    for &v in &phonemes[ph] {
                        data.push(v + cfg.noise_sigma * rng.normal());
                    }
                }
            }
            let features = FeatureSequence::new(n_frames, cfg.n_mels, data)
                .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
            utterances.push(Utterance {
                utt_id: format!("{doc_id}-u{utt_idx:02}"),
                features,
                transcript,
                duration_s: n_frames as f64 * FRAME_SECONDS,
            });
        }
        let mut doc = Document {
            doc_id: doc_id.clone(),
            meta: MetadataRecord::lecture(
                doc_id,
                if side == 0 { "domain alpha terminology" } else { "domain beta terminology" },
            ),
            description: Some(Description {
                text: descriptions[side].clone(),
                source: DescriptionSource::Collected,
                prompt_used: String::new(),
                created_at: 0,
            }),
            utterances,
            duration_s: 0.0,
        };
        doc.recompute_duration();
        documents.push(doc);
    }

    Ok(SynthCorpus {
        documents,
        lexicon: Lexicon {
            words,
            phonemes,
            pairs,
            pause_phoneme,
        },
    })
}

// ---------------------------------------------------------------------------
// duration-targeted splitting

/// Shuffle documents by seed, then greedily assign each to the split with
/// the largest remaining duration target. Splits are document-disjoint.
pub fn split_by_duration(
    documents: Vec<Document>,
    targets: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>, Vec<Document>), DataError> {
    let total: f64 = documents.iter().map(|d| d.duration_s).sum();
    let wanted = targets.0 + targets.1 + targets.2;
    if total < wanted * 0.9 {
        return Err(DataError::InfeasibleSplit {
            total_s: total,
            wanted_s: wanted,
        });
    }
    let mut docs = documents;
    let mut rng = Rng::from_seed(seed);
    rng.shuffle(&mut docs);

    let targets = [targets.0, targets.1, targets.2];
    let mut assigned = [0.0f64; 3];
    let mut splits: [Vec<Document>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for doc in docs {
        let mut best = 0;
        for i in 1..3 {
            if targets[i] - assigned[i] > targets[best] - assigned[best] {
                best = i;
            }
        }
        assigned[best] += doc.duration_s;
        splits[best].push(doc);
    }
    let [mut train, mut valid, mut test] = splits;
    for split in [&mut train, &mut valid, &mut test] {
        split.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    }
    Ok((train, valid, test))
}

// ---------------------------------------------------------------------------
// feature block codec

pub fn features_to_bytes(fs: &FeatureSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(13 + fs.data.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(fs.n_frames as u32).to_le_bytes());
    buf.extend_from_slice(&(fs.n_mels as u32).to_le_bytes());
    for &v in &fs.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<FeatureSequence, DataError> {
    if bytes.len() < 13 || &bytes[..5] != FEATURE_MAGIC {
        return Err(DataError::BadFeatureFile("missing FEAT1 magic".into()));
    }
    let n_frames = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let n_dims = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = 13 + n_frames * n_dims * 4;
    if bytes.len() != expected {
        return Err(DataError::BadFeatureFile(format!(
            "expected {expected} bytes for [{n_frames} x {n_dims}], found {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n_frames * n_dims);
    for chunk in bytes[13..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    FeatureSequence::new(n_frames, n_dims, data)
        .map_err(|e| DataError::BadFeatureFile(e.to_string()))
}

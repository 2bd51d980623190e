//! Transcript normalization, annotation stripping, and word-error-rate
//! computation.
//!
//! Cleaning order matters: bracket annotations and speaker prefixes rely on
//! punctuation that [`normalize`] deletes, so callers run
//! [`strip_annotations`] then [`strip_speaker`] then [`normalize`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Lowercase, punctuation-free, single-space-separated text.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedTranscript(String);

impl NormalizedTranscript {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ').filter(|w| !w.is_empty())
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }
}

impl fmt::Display for NormalizedTranscript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TextError {
    /// WER is undefined for an empty reference.
    EmptyReference,
}

impl fmt::Display for TextError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextError::EmptyReference => f.write_str("undefined WER: empty reference"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TextError {}

/// Lowercase the text, delete ASCII punctuation in place (no replacement
/// space, so "it's" becomes "its"), and collapse whitespace runs to single
/// spaces with no leading/trailing whitespace. Digits pass through verbatim.
pub fn normalize(raw: &str) -> NormalizedTranscript {
    let lowered = raw.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let collapsed: Vec<&str> = stripped.split_whitespace().collect();
    NormalizedTranscript(collapsed.join(" "))
}

/// Remove every innermost balanced `[...]` annotation, collapsing the
/// whitespace around each removal to a single space. An unmatched `[` is
/// left verbatim.
pub fn strip_annotations(raw: &str) -> String {
    // nested annotations ("[[x]]") expose a new innermost pair once the
    // inner one goes; iterate until nothing changes
    let mut current = strip_annotations_once(raw);
    loop {
        let next = strip_annotations_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn strip_annotations_once(raw: &str) -> String {
    let chars: Vec<char> = raw.chars().collect();
    // segments of kept text, separated by removal events
    let mut segments: Vec<String> = vec![String::new()];
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            // innermost pair: scan for ']' unless another '[' opens first
            let mut j = i + 1;
            let mut close = None;
            while j < chars.len() {
                match chars[j] {
                    ']' => {
                        close = Some(j);
                        break;
                    }
                    '[' => break,
                    _ => j += 1,
                }
            }
            if let Some(end) = close {
                segments.push(String::new());
                i = end + 1;
                continue;
            }
        }
        segments.last_mut().unwrap().push(c);
        i += 1;
    }

    let mut out = segments[0].clone();
    for seg in &segments[1..] {
        let had_ws = out.ends_with(char::is_whitespace)
            || seg.starts_with(char::is_whitespace)
            || out.is_empty()
            || seg.is_empty();
        while out.ends_with(char::is_whitespace) {
            out.pop();
        }
        let trimmed = seg.trim_start();
        if had_ws && !out.is_empty() && !trimmed.is_empty() {
            out.push(' ');
        }
        out.push_str(trimmed);
    }
    out
}

fn is_speaker_word(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphabetic())
}

/// Remove a leading speaker identifier (`PROFESSOR:`, `John Smith:`) from
/// each line: one to four capitalized-or-uppercase words directly followed
/// by a colon. Mid-sentence colons are untouched.
pub fn strip_speaker(raw: &str) -> String {
    let lines: Vec<String> = raw.lines().map(strip_speaker_line).collect();
    lines.join("\n")
}

fn strip_speaker_line(line: &str) -> String {
    if let Some(colon) = line.find(':') {
        let head = &line[..colon];
        let words: Vec<&str> = head.split(' ').collect();
        if (1..=4).contains(&words.len()) && words.iter().all(|w| is_speaker_word(w)) {
            return line[colon + 1..].trim_start().into();
        }
    }
    line.into()
}

/// Word-level edit counts and the derived error rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub hits: usize,
    pub ref_words: usize,
    pub wer: f64,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn from_counts(s: usize, d: usize, i: usize, h: usize) -> Result<Self, TextError> {
        let ref_words = h + s + d;
        if ref_words == 0 {
            return Err(TextError::EmptyReference);
        }
        Ok(WerReport {
            substitutions: s,
            deletions: d,
            insertions: i,
            hits: h,
            ref_words,
            wer: (s + d + i) as f64 / ref_words as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Hit,
    Substitute,
    Delete,
    Insert,
}

/// One step of a minimum-cost word alignment. `ref_idx` is absent for
/// insertions, `hyp_idx` for deletions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignStep {
    pub op: AlignOp,
    pub ref_idx: Option<usize>,
    pub hyp_idx: Option<usize>,
}

/// Minimum-cost alignment with unit costs. Ties resolve substitution over
/// deletion over insertion so the S/D/I decomposition is deterministic.
pub fn align(reference: &[&str], hypothesis: &[&str]) -> Vec<AlignStep> {
    let m = reference.len();
    let n = hypothesis.len();
    let mut dist = vec![vec![0usize; n + 1]; m + 1];
    for i in 0..=m {
        dist[i][0] = i;
    }
    for j in 0..=n {
        dist[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = dist[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = dist[i - 1][j] + 1;
            let ins = dist[i][j - 1] + 1;
            dist[i][j] = sub.min(del).min(ins);
        }
    }

    let mut steps = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = dist[i][j];
        if i > 0 && j > 0 {
            let matched = reference[i - 1] == hypothesis[j - 1];
            if here == dist[i - 1][j - 1] + usize::from(!matched) {
                steps.push(AlignStep {
                    op: if matched { AlignOp::Hit } else { AlignOp::Substitute },
                    ref_idx: Some(i - 1),
                    hyp_idx: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dist[i - 1][j] + 1 {
            steps.push(AlignStep {
                op: AlignOp::Delete,
                ref_idx: Some(i - 1),
                hyp_idx: None,
            });
            i -= 1;
        } else {
            steps.push(AlignStep {
                op: AlignOp::Insert,
                ref_idx: None,
                hyp_idx: Some(j - 1),
            });
            j -= 1;
        }
    }
    steps.reverse();
    steps
}

/// WER between two normalized transcripts. The reference must contain at
/// least one word.
pub fn word_error_rate(
    reference: &NormalizedTranscript,
    hypothesis: &NormalizedTranscript,
) -> Result<WerReport, TextError> {
    let ref_words: Vec<&str> = reference.words().collect();
    if ref_words.is_empty() {
        return Err(TextError::EmptyReference);
    }
    let hyp_words: Vec<&str> = hypothesis.words().collect();
    let steps = align(&ref_words, &hyp_words);
    let (mut s, mut d, mut ins, mut h) = (0, 0, 0, 0);
    for step in &steps {
        match step.op {
            AlignOp::Hit => h += 1,
            AlignOp::Substitute => s += 1,
            AlignOp::Delete => d += 1,
            AlignOp::Insert => ins += 1,
        }
    }
    WerReport::from_counts(s, d, ins, h)
}

/// Pool reports by summing raw counts; the corpus WER is total errors over
/// total reference words, not an average of per-item rates.
pub fn aggregate_wer(reports: &[WerReport]) -> Result<WerReport, TextError> {
    let (mut s, mut d, mut i, mut h) = (0, 0, 0, 0);
    for r in reports {
        s += r.substitutions;
        d += r.deletions;
        i += r.insertions;
        h += r.hits;
    }
    WerReport::from_counts(s, d, i, h)
}

//! Character vocabulary and decoder-sequence assembly.
//!
//! The decoder consumes `<SOP> description <SOT> transcript <EOT>` when a
//! description is present and `<SOT> transcript <EOT>` otherwise. Loss masks
//! exclude the description and `<SOT>` targets so the model conditions on
//! the prompt without learning to generate it.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::text;

pub const SOP_TOKEN: &str = "<SOP>";
pub const SOT_TOKEN: &str = "<SOT>";
pub const EOT_TOKEN: &str = "<EOT>";
pub const PAD_TOKEN: &str = "<PAD>";

/// Default prompt budget in tokens; descriptions longer than this keep
/// their tail.
pub const DEFAULT_DESC_BUDGET: usize = 224;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenizerError {
    EmptyCorpus,
    UnknownChar(char),
    IdOutOfRange(usize),
    EmptyTranscript,
    SpecialIdInBody(usize),
    MalformedVocabFile(String),
}

impl fmt::Display for TokenizerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerError::EmptyCorpus => f.write_str("cannot build vocabulary from empty corpus"),
            TokenizerError::UnknownChar(c) => write!(f, "character {c:?} not in vocabulary"),
            TokenizerError::IdOutOfRange(id) => write!(f, "token id {id} out of range"),
            TokenizerError::EmptyTranscript => f.write_str("decoder sequence requires a nonempty transcript"),
            TokenizerError::SpecialIdInBody(id) => {
                write!(f, "special id {id} not allowed inside description or transcript")
            }
            TokenizerError::MalformedVocabFile(msg) => write!(f, "malformed vocabulary file: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TokenizerError {}

/// Token/id bijection. Ordinary characters occupy ids `0..n` sorted by code
/// point; the four specials sit at the top of the id range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
    n_plain: usize,
}

impl Vocabulary {
    /// Character-level vocabulary over the normalized corpus texts plus
    /// space, with the specials appended at the top of the id range.
    pub fn build(corpus_texts: &[&str]) -> Result<Self, TokenizerError> {
        if corpus_texts.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut chars: BTreeSet<char> = BTreeSet::new();
        chars.insert(' ');
        for raw in corpus_texts {
            for c in text::normalize(raw).as_str().chars() {
                chars.insert(c);
            }
        }
        let mut tokens: Vec<String> = chars.into_iter().map(|c| c.to_string()).collect();
        tokens.push(SOP_TOKEN.into());
        tokens.push(SOT_TOKEN.into());
        tokens.push(EOT_TOKEN.into());
        tokens.push(PAD_TOKEN.into());
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let n_plain = tokens.len() - 4;
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids, n_plain }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sop_id(&self) -> usize {
        self.n_plain
    }

    pub fn sot_id(&self) -> usize {
        self.n_plain + 1
    }

    pub fn eot_id(&self) -> usize {
        self.n_plain + 2
    }

    pub fn pad_id(&self) -> usize {
        self.n_plain + 3
    }

    pub fn is_special(&self, id: usize) -> bool {
        id >= self.n_plain && id < self.tokens.len()
    }

    /// Per-character ids; never produces specials.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, TokenizerError> {
        text.chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.ids
                    .get(c.encode_utf8(&mut buf) as &str)
                    .copied()
                    .filter(|&id| id < self.n_plain)
                    .ok_or(TokenizerError::UnknownChar(c))
            })
            .collect()
    }

    /// Concatenate tokens, silently skipping specials so raw model output
    /// decodes directly.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            if id >= self.tokens.len() {
                return Err(TokenizerError::IdOutOfRange(id));
            }
            if !self.is_special(id) {
                out.push_str(&self.tokens[id]);
            }
        }
        Ok(out)
    }

    /// Versioned text serialization: one token per line in id order,
    /// specials flagged. Bit-exact across platforms.
    pub fn to_text(&self) -> String {
        let mut out = String::from("CTXVOCAB 1\n");
        for (i, tok) in self.tokens.iter().enumerate() {
            let flag = if i < self.n_plain { "-" } else { "special" };
            out.push_str(&format!("{}\t{}\n", escape_token(tok), flag));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        match lines.next() {
            Some("CTXVOCAB 1") => {}
            other => {
                return Err(TokenizerError::MalformedVocabFile(format!(
                    "bad header {other:?}"
                )))
            }
        }
        let mut tokens = Vec::new();
        let mut n_special = 0usize;
        for line in lines {
            let (tok, flag) = line.split_once('\t').ok_or_else(|| {
                TokenizerError::MalformedVocabFile(format!("missing tab in {line:?}"))
            })?;
            match flag {
                "-" => {
                    if n_special > 0 {
                        return Err(TokenizerError::MalformedVocabFile(
                            "plain token after specials".into(),
                        ));
                    }
                }
                "special" => n_special += 1,
                other => {
                    return Err(TokenizerError::MalformedVocabFile(format!(
                        "unknown flag {other:?}"
                    )))
                }
            }
            tokens.push(unescape_token(tok)?);
        }
        if n_special != 4 {
            return Err(TokenizerError::MalformedVocabFile(format!(
                "expected 4 special tokens, found {n_special}"
            )));
        }
        let expected = [SOP_TOKEN, SOT_TOKEN, EOT_TOKEN, PAD_TOKEN];
        if tokens[tokens.len() - 4..] != expected {
            return Err(TokenizerError::MalformedVocabFile(
                "special tokens out of order".into(),
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

fn escape_token(tok: &str) -> String {
    let mut out = String::new();
    for c in tok.chars() {
        match c {
            ' ' => out.push_str("\\s"),
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_token(tok: &str) -> Result<String, TokenizerError> {
    let mut out = String::new();
    let mut chars = tok.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => {
                return Err(TokenizerError::MalformedVocabFile(format!(
                    "bad escape \\{other:?}"
                )))
            }
        }
    }
    Ok(out)
}

/// Teacher-forcing view of one decoder sample: inputs, left-shifted
/// targets, and the loss mask excluding prompt positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderSequence {
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub loss_mask: Vec<u8>,
}

/// Keep at most `budget` trailing tokens of a description.
pub fn truncate_description(ids: &[usize], budget: usize) -> Vec<usize> {
    if ids.len() <= budget {
        ids.to_vec()
    } else {
        ids[ids.len() - budget..].to_vec()
    }
}

/// Assemble `[SOP] desc [SOT] transcript [EOT]` (prompt omitted entirely
/// when the description is empty) with shifted targets and loss mask.
pub fn build_decoder_sequence(
    vocab: &Vocabulary,
    description_ids: &[usize],
    transcript_ids: &[usize],
    desc_budget: usize,
) -> Result<DecoderSequence, TokenizerError> {
    if transcript_ids.is_empty() {
        return Err(TokenizerError::EmptyTranscript);
    }
    for &id in description_ids.iter().chain(transcript_ids) {
        if id >= vocab.len() {
            return Err(TokenizerError::IdOutOfRange(id));
        }
        if vocab.is_special(id) {
            return Err(TokenizerError::SpecialIdInBody(id));
        }
    }

    let desc = truncate_description(description_ids, desc_budget);
    let mut input_ids = Vec::with_capacity(desc.len() + transcript_ids.len() + 3);
    let mut prompt_targets = 0usize;
    if !desc.is_empty() {
        input_ids.push(vocab.sop_id());
        input_ids.extend_from_slice(&desc);
        // targets covering the description tokens and SOT are masked out
        prompt_targets = desc.len() + 1;
    }
    input_ids.push(vocab.sot_id());
    input_ids.extend_from_slice(transcript_ids);
    input_ids.push(vocab.eot_id());

    let target_ids = input_ids[1..].to_vec();
    let loss_mask: Vec<u8> = (0..target_ids.len())
        .map(|j| u8::from(j >= prompt_targets))
        .collect();
    Ok(DecoderSequence {
        input_ids,
        target_ids,
        loss_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab_ab() -> Vocabulary {
        Vocabulary::build(&["ab"]).unwrap()
    }

    #[test]
    fn build_vocab_counts() {
        let v = vocab_ab();
        // space is always present alongside corpus characters
        assert_eq!(v.len(), 7);
        let all: &str = "abcdefghijklmnopqrstuvwxyz and spaces";
        let v = Vocabulary::build(&[all]).unwrap();
        assert_eq!(v.len(), 31);
    }

    #[test]
    fn build_vocab_order_insensitive() {
        assert_eq!(Vocabulary::build(&["ba"]).unwrap(), Vocabulary::build(&["ab"]).unwrap());
    }

    #[test]
    fn build_vocab_empty_errors() {
        assert_eq!(Vocabulary::build(&[]), Err(TokenizerError::EmptyCorpus));
    }

    #[test]
    fn specials_distinct_and_top_of_range() {
        let v = vocab_ab();
        let ids = [v.sop_id(), v.sot_id(), v.eot_id(), v.pad_id()];
        for (i, a) in ids.iter().enumerate() {
            assert!(v.is_special(*a));
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(v.pad_id(), v.len() - 1);
    }

    #[test]
    fn encode_basics() {
        let v = vocab_ab();
        assert_eq!(v.encode("").unwrap(), Vec::<usize>::new());
        let a = v.encode("a").unwrap()[0];
        assert_eq!(v.encode("aa").unwrap(), vec![a, a]);
        assert_eq!(v.encode("z"), Err(TokenizerError::UnknownChar('z')));
    }

    #[test]
    fn decode_skips_specials() {
        let v = vocab_ab();
        let a = v.encode("a").unwrap()[0];
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&[v.sot_id(), a, v.eot_id()]).unwrap(), "a");
        assert_eq!(v.decode(&[v.len()]), Err(TokenizerError::IdOutOfRange(v.len())));
    }

    #[test]
    fn encode_decode_roundtrip_random() {
        let v = Vocabulary::build(&["abcdefghijklmnopqrstuvwxyz 0123456789"]).unwrap();
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz 0123456789".chars().collect();
        let mut rng = crate::rng::Rng::from_seed(9);
        for _ in 0..1000 {
            let len = rng.below(40);
            let s: String = (0..len).map(|_| alphabet[rng.below(alphabet.len())]).collect();
            let ids = v.encode(&s).unwrap();
            assert_eq!(v.decode(&ids).unwrap(), s);
        }
    }

    #[test]
    fn decoder_sequence_with_description() {
        let v = vocab_ab();
        let seq = build_decoder_sequence(&v, &[0, 1], &[2], 224).unwrap();
        assert_eq!(
            seq.input_ids,
            vec![v.sop_id(), 0, 1, v.sot_id(), 2, v.eot_id()]
        );
        assert_eq!(seq.target_ids, vec![0, 1, v.sot_id(), 2, v.eot_id()]);
        assert_eq!(seq.loss_mask, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn decoder_sequence_without_description() {
        let v = vocab_ab();
        let seq = build_decoder_sequence(&v, &[], &[2], 224).unwrap();
        assert_eq!(seq.input_ids, vec![v.sot_id(), 2, v.eot_id()]);
        assert_eq!(seq.target_ids, vec![2, v.eot_id()]);
        assert_eq!(seq.loss_mask, vec![1, 1]);
    }

    #[test]
    fn decoder_sequence_truncates_description_tail() {
        let v = vocab_ab();
        let desc: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let seq = build_decoder_sequence(&v, &desc, &[1], 224).unwrap();
        let body = &seq.input_ids[1..225];
        assert_eq!(body, &desc[300 - 224..]);
        assert_eq!(seq.input_ids.len(), 1 + 224 + 1 + 1 + 1);
    }

    #[test]
    fn decoder_sequence_rejects_bad_input() {
        let v = vocab_ab();
        assert_eq!(
            build_decoder_sequence(&v, &[], &[], 224),
            Err(TokenizerError::EmptyTranscript)
        );
        assert_eq!(
            build_decoder_sequence(&v, &[v.sot_id()], &[0], 224),
            Err(TokenizerError::SpecialIdInBody(v.sot_id()))
        );
    }

    #[test]
    fn mask_sums_to_transcript_plus_eot() {
        let v = vocab_ab();
        for (desc_len, tr_len) in [(0usize, 1usize), (3, 2), (10, 7)] {
            let desc: Vec<usize> = (0..desc_len).map(|i| i % 3).collect();
            let tr: Vec<usize> = (0..tr_len).map(|i| i % 3).collect();
            let seq = build_decoder_sequence(&v, &desc, &tr, 224).unwrap();
            let mask_sum: usize = seq.loss_mask.iter().map(|&m| m as usize).sum();
            assert_eq!(mask_sum, tr_len + 1);
            assert_eq!(seq.target_ids.len(), seq.input_ids.len() - 1);
            assert_eq!(seq.loss_mask.len(), seq.target_ids.len());
            assert!(!seq.input_ids.contains(&v.pad_id()));
        }
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate_description(&[1, 2, 3], 3), vec![1, 2, 3]);
        assert_eq!(truncate_description(&[1, 2, 3, 4], 2), vec![3, 4]);
        assert_eq!(truncate_description(&[1, 2, 3], 0), Vec::<usize>::new());
    }

    #[test]
    fn vocab_text_roundtrip() {
        let v = Vocabulary::build(&["hello world 123"]).unwrap();
        let text = v.to_text();
        let back = Vocabulary::from_text(&text).unwrap();
        assert_eq!(v, back);
        assert!(text.starts_with("CTXVOCAB 1\n"));
        assert!(text.contains("\\s\t-"));
    }

    #[test]
    fn vocab_text_rejects_garbage() {
        assert!(Vocabulary::from_text("NOPE").is_err());
        assert!(Vocabulary::from_text("CTXVOCAB 1\nx\t-\n").is_err());
    }
}

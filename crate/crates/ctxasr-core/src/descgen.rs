//! Description generation: metadata-to-prompt templates, a pluggable
//! text-completion backend, and a per-document cache.
//!
//! The prompt templates are fixed strings; a document's description is
//! requested at most once per run and cached under a stable content key.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Earnings,
    Lecture,
    Generic,
}

impl DocKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DocKind::Earnings => "earnings",
            DocKind::Lecture => "lecture",
            DocKind::Generic => "generic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub kind: DocKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub company_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lecture_title: Option<String>,
    pub doc_id: String,
}

impl MetadataRecord {
    pub fn earnings(doc_id: impl Into<String>, company: impl Into<String>) -> Self {
        MetadataRecord {
            kind: DocKind::Earnings,
            company_name: Some(company.into()),
            lecture_title: None,
            doc_id: doc_id.into(),
        }
    }

    pub fn lecture(doc_id: impl Into<String>, title: impl Into<String>) -> Self {
        MetadataRecord {
            kind: DocKind::Lecture,
            company_name: None,
            lecture_title: Some(title.into()),
            doc_id: doc_id.into(),
        }
    }

    pub fn generic(doc_id: impl Into<String>) -> Self {
        MetadataRecord {
            kind: DocKind::Generic,
            company_name: None,
            lecture_title: None,
            doc_id: doc_id.into(),
        }
    }

    /// The metadata string a description is about: company name, lecture
    /// title, or the document id for generic records.
    pub fn subject(&self) -> &str {
        match self.kind {
            DocKind::Earnings => self.company_name.as_deref().unwrap_or(&self.doc_id),
            DocKind::Lecture => self.lecture_title.as_deref().unwrap_or(&self.doc_id),
            DocKind::Generic => &self.doc_id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionSource {
    LlmGenerated,
    Collected,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub source: DescriptionSource,
    pub prompt_used: String,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DescgenError {
    MissingField(&'static str),
    /// Generic documents have no prompt template; they must carry a
    /// pre-supplied description.
    NoTemplateForGeneric,
    EmptyCompletion,
    Backend(BackendError),
}

impl fmt::Display for DescgenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DescgenError::MissingField(name) => write!(f, "metadata field {name} is required"),
            DescgenError::NoTemplateForGeneric => {
                f.write_str("no prompt template for generic documents")
            }
            DescgenError::EmptyCompletion => f.write_str("empty completion"),
            DescgenError::Backend(e) => write!(f, "backend error: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DescgenError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendError {
    Unavailable(String),
    /// Exhausted all retries; carries the attempt count.
    RetriesExhausted { attempts: u32, last: String },
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Unavailable(msg) => write!(f, "backend unavailable: {msg}"),
            BackendError::RetriesExhausted { attempts, last } => {
                write!(f, "backend failed after {attempts} attempts: {last}")
            }
        }
    }
}

/// Render the metadata-to-prompt template, byte-exact.
pub fn render_prompt(meta: &MetadataRecord) -> Result<String, DescgenError> {
    match meta.kind {
        DocKind::Earnings => {
            let company = meta
                .company_name
                .as_deref()
                .ok_or(DescgenError::MissingField("company_name"))?;
            Ok(format!("Explain about {company} in 2 sentences."))
        }
        DocKind::Lecture => {
            let title = meta
                .lecture_title
                .as_deref()
                .ok_or(DescgenError::MissingField("lecture_title"))?;
            Ok(format!(
                "Today's lecture title is {title}. Please explain the academic field and content in 2 lines."
            ))
        }
        DocKind::Generic => Err(DescgenError::NoTemplateForGeneric),
    }
}

/// Stable content hash of (kind, rendered prompt); generic records hash the
/// subject instead. 64 lowercase hex characters.
pub fn cache_key(meta: &MetadataRecord) -> String {
    let body = match render_prompt(meta) {
        Ok(prompt) => prompt,
        Err(_) => meta.subject().to_string(),
    };
    let mut hasher = Sha256::new();
    hasher.update(meta.kind.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(body.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One text completion per prompt. Implementations decide transport,
/// retries, and decoding options.
pub trait CompletionBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Deterministic offline stand-in for a hosted model.
pub struct FallbackBackend;

/// Template used by [`FallbackBackend`] and for generic documents.
pub fn fallback_text(subject: &str) -> String {
    format!("A discussion of {subject} covering its principal domain-specific terminology.")
}

impl CompletionBackend for FallbackBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        // recover the subject from the two known templates
        let subject = prompt
            .strip_prefix("Explain about ")
            .and_then(|rest| rest.strip_suffix(" in 2 sentences."))
            .or_else(|| {
                prompt.strip_prefix("Today's lecture title is ").and_then(|rest| {
                    rest.strip_suffix(". Please explain the academic field and content in 2 lines.")
                })
            })
            .unwrap_or(prompt);
        Ok(fallback_text(subject))
    }
}

/// In-memory description cache; the std companion persists it as
/// line-delimited records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DescriptionCache {
    entries: BTreeMap<String, Description>,
}

impl DescriptionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&Description> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: String, desc: Description) {
        self.entries.insert(key, desc);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Description)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Look up the cache, otherwise render the prompt and call the backend; the
/// result is stored under [`cache_key`]. `is_fallback` tags the stored
/// source and routes generic documents through [`fallback_text`].
pub fn generate_description(
    backend: &dyn CompletionBackend,
    meta: &MetadataRecord,
    cache: &mut DescriptionCache,
    is_fallback: bool,
    now: u64,
) -> Result<Description, DescgenError> {
    let key = cache_key(meta);
    if let Some(hit) = cache.get(&key) {
        return Ok(hit.clone());
    }
    let desc = match render_prompt(meta) {
        Ok(prompt) => {
            let text = backend.complete(&prompt).map_err(DescgenError::Backend)?;
            if text.trim().is_empty() {
                return Err(DescgenError::EmptyCompletion);
            }
            Description {
                text,
                source: if is_fallback {
                    DescriptionSource::Fallback
                } else {
                    DescriptionSource::LlmGenerated
                },
                prompt_used: prompt,
                created_at: now,
            }
        }
        Err(DescgenError::NoTemplateForGeneric) if is_fallback => Description {
            text: fallback_text(meta.subject()),
            source: DescriptionSource::Fallback,
            prompt_used: String::new(),
            created_at: now,
        },
        Err(e) => return Err(e),
    };
    cache.insert(key, desc.clone());
    Ok(desc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cell::Cell;

    #[test]
    fn earnings_template_byte_exact() {
        let meta = MetadataRecord::earnings("d1", "Edwards Lifesciences");
        assert_eq!(
            render_prompt(&meta).unwrap(),
            "Explain about Edwards Lifesciences in 2 sentences."
        );
    }

    #[test]
    fn lecture_template_byte_exact() {
        let meta = MetadataRecord::lecture("d2", "Hashing");
        assert_eq!(
            render_prompt(&meta).unwrap(),
            "Today's lecture title is Hashing. Please explain the academic field and content in 2 lines."
        );
    }

    #[test]
    fn missing_title_errors() {
        let meta = MetadataRecord {
            kind: DocKind::Lecture,
            company_name: None,
            lecture_title: None,
            doc_id: "d".into(),
        };
        assert_eq!(render_prompt(&meta), Err(DescgenError::MissingField("lecture_title")));
    }

    #[test]
    fn prompt_ends_with_period_and_contains_subject() {
        for meta in [
            MetadataRecord::earnings("a", "Acme Corp"),
            MetadataRecord::lecture("b", "Linear Algebra"),
        ] {
            let p = render_prompt(&meta).unwrap();
            assert!(p.ends_with('.'));
            assert!(p.contains(meta.subject()));
        }
    }

    #[test]
    fn cache_key_stable_and_hex() {
        let meta = MetadataRecord::lecture("d", "Hashing");
        let k1 = cache_key(&meta);
        let k2 = cache_key(&meta);
        assert_eq!(k1, k2);
        assert_eq!(k1.len(), 64);
        assert!(k1.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        let other = cache_key(&MetadataRecord::earnings("d", "Acme"));
        assert_ne!(k1, other);
        assert_ne!(
            cache_key(&MetadataRecord::earnings("d", "Acme")),
            cache_key(&MetadataRecord::earnings("d", "Bcme"))
        );
    }

    struct CountingBackend {
        calls: Cell<u32>,
        reply: &'static str,
    }

    impl CompletionBackend for CountingBackend {
        fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
            self.calls.set(self.calls.get() + 1);
            Ok(self.reply.into())
        }
    }

    #[test]
    fn cache_prevents_second_backend_call() {
        let backend = CountingBackend { calls: Cell::new(0), reply: "A fine company." };
        let meta = MetadataRecord::earnings("d1", "Acme");
        let mut cache = DescriptionCache::new();
        let d1 = generate_description(&backend, &meta, &mut cache, false, 10).unwrap();
        let d2 = generate_description(&backend, &meta, &mut cache, false, 20).unwrap();
        assert_eq!(backend.calls.get(), 1);
        assert_eq!(d1, d2);
        assert_eq!(d1.source, DescriptionSource::LlmGenerated);
        assert_eq!(d1.prompt_used, "Explain about Acme in 2 sentences.");
    }

    #[test]
    fn empty_completion_errors() {
        let backend = CountingBackend { calls: Cell::new(0), reply: "" };
        let meta = MetadataRecord::earnings("d1", "Acme");
        let mut cache = DescriptionCache::new();
        assert_eq!(
            generate_description(&backend, &meta, &mut cache, false, 0),
            Err(DescgenError::EmptyCompletion)
        );
        assert!(cache.is_empty());
    }

    #[test]
    fn fallback_is_deterministic_template() {
        let meta = MetadataRecord::lecture("d", "Hashing");
        let mut cache = DescriptionCache::new();
        let d = generate_description(&FallbackBackend, &meta, &mut cache, true, 0).unwrap();
        assert_eq!(
            d.text,
            "A discussion of Hashing covering its principal domain-specific terminology."
        );
        assert_eq!(d.source, DescriptionSource::Fallback);
    }

    #[test]
    fn generic_requires_fallback() {
        let meta = MetadataRecord::generic("doc-7");
        let mut cache = DescriptionCache::new();
        assert_eq!(
            generate_description(&FallbackBackend, &meta, &mut cache, false, 0),
            Err(DescgenError::NoTemplateForGeneric)
        );
        let d = generate_description(&FallbackBackend, &meta, &mut cache, true, 0).unwrap();
        assert_eq!(
            d.text,
            "A discussion of doc-7 covering its principal domain-specific terminology."
        );
    }
}

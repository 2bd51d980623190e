//! Line-delimited corpus manifests: one document per line, with transcript
//! cleaning on load and feature-file resolution.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ctxasr_core::data::{self, Document, Utterance};
use ctxasr_core::descgen::{Description, DescriptionSource, MetadataRecord};
use ctxasr_core::text;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub company_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lecture_title: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestUtterance {
    pub utt_id: String,
    #[serde(default)]
    pub audio_path: Option<String>,
    #[serde(default)]
    pub features_path: Option<String>,
    pub transcript: String,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub doc_id: String,
    pub kind: String,
    #[serde(default)]
    pub metadata: ManifestMeta,
    #[serde(default)]
    pub description: Option<String>,
    pub utterances: Vec<ManifestUtterance>,
}

impl ManifestDocument {
    pub fn metadata_record(&self) -> Result<MetadataRecord> {
        match self.kind.as_str() {
            "earnings" => {
                let company = self.metadata.company_name.as_ref().with_context(|| {
                    format!("document {}: kind earnings requires metadata.company_name", self.doc_id)
                })?;
                Ok(MetadataRecord::earnings(&self.doc_id, company))
            }
            "lecture" => {
                let title = self.metadata.lecture_title.as_ref().with_context(|| {
                    format!("document {}: kind lecture requires metadata.lecture_title", self.doc_id)
                })?;
                Ok(MetadataRecord::lecture(&self.doc_id, title))
            }
            "generic" => Ok(MetadataRecord::generic(&self.doc_id)),
            other => bail!("document {}: unknown kind {other:?}", self.doc_id),
        }
    }
}

/// Parse a manifest file without touching feature files. Errors carry the
/// offending line number; duplicate doc_ids are rejected.
pub fn load_records(path: &Path) -> Result<Vec<ManifestDocument>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {} line {}", path.display(), idx + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestDocument = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}: malformed record", path.display(), idx + 1))?;
        if !seen.insert(record.doc_id.clone()) {
            bail!("{} line {}: duplicate doc_id {}", path.display(), idx + 1, record.doc_id);
        }
        record.metadata_record()?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_records(path: &Path, records: &[ManifestDocument]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Materialize parsed records into in-memory documents: transcripts run
/// through annotation/speaker stripping and normalization (empty results
/// dropped), features loaded from their FEAT1 files.
pub fn records_to_documents(records: &[ManifestDocument], base_dir: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::with_capacity(records.len());
    for record in records {
        let meta = record.metadata_record()?;
        let mut utterances = Vec::with_capacity(record.utterances.len());
        for u in &record.utterances {
            let cleaned = text::normalize(&text::strip_speaker(&text::strip_annotations(&u.transcript)));
            if cleaned.is_empty() {
                log::warn!("dropping utterance {}: transcript empty after cleaning", u.utt_id);
                continue;
            }
            let feat_path = u.features_path.as_ref().with_context(|| {
                format!("utterance {} has no features_path", u.utt_id)
            })?;
            let full = resolve(base_dir, feat_path);
            let bytes = fs::read(&full)
                .with_context(|| format!("utterance {}: reading {}", u.utt_id, full.display()))?;
            let features = data::features_from_bytes(&bytes)
                .with_context(|| format!("utterance {}: decoding {}", u.utt_id, full.display()))?;
            utterances.push(Utterance {
                utt_id: u.utt_id.clone(),
                features,
                transcript: cleaned,
                duration_s: u.duration_s,
            });
        }
        let mut doc = Document {
            doc_id: record.doc_id.clone(),
            meta,
            description: record.description.as_ref().map(|text| Description {
                text: text.clone(),
                source: DescriptionSource::Collected,
                prompt_used: String::new(),
                created_at: 0,
            }),
            utterances,
            duration_s: 0.0,
        };
        doc.recompute_duration();
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let records = load_records(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    records_to_documents(&records, base)
}

/// Write documents as a manifest plus one FEAT1 file per utterance under
/// `dir/features/`. Returns the manifest path.
pub fn write_corpus(dir: &Path, documents: &[Document]) -> Result<PathBuf> {
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir)
        .with_context(|| format!("creating {}", features_dir.display()))?;
    let mut records = Vec::with_capacity(documents.len());
    for doc in documents {
        let mut utts = Vec::with_capacity(doc.utterances.len());
        for u in &doc.utterances {
            let rel = format!("features/{}.feat", u.utt_id);
            let mut f = fs::File::create(dir.join(&rel))
                .with_context(|| format!("creating {rel}"))?;
            f.write_all(&data::features_to_bytes(&u.features))?;
            utts.push(ManifestUtterance {
                utt_id: u.utt_id.clone(),
                audio_path: None,
                features_path: Some(rel),
                transcript: u.transcript.as_str().to_string(),
                duration_s: u.duration_s,
            });
        }
        records.push(ManifestDocument {
            doc_id: doc.doc_id.clone(),
            kind: doc.meta.kind.as_str().to_string(),
            metadata: ManifestMeta {
                company_name: doc.meta.company_name.clone(),
                lecture_title: doc.meta.lecture_title.clone(),
            },
            description: doc.description.as_ref().map(|d| d.text.clone()),
            utterances: utts,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    save_records(&manifest, &records)?;
    Ok(manifest)
}

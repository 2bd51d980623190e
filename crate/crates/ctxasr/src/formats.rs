//! File-backed versions of the byte/string codecs: checkpoints, vocab
//! files, feature blocks, the description cache, and line-delimited
//! metrics/results records.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ctxasr_core::data;
use ctxasr_core::descgen::{Description, DescriptionCache, MetadataRecord};
use ctxasr_core::model::{self, FeatureSequence, Parameters};
use ctxasr_core::tokenizer::Vocabulary;

pub fn write_checkpoint(path: &Path, params: &Parameters) -> Result<()> {
    fs::write(path, model::checkpoint_to_bytes(params))
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Parameters> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    model::checkpoint_from_bytes(&bytes)
        .with_context(|| format!("decoding checkpoint {}", path.display()))
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, vocab.to_text())
        .with_context(|| format!("writing vocabulary {}", path.display()))
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading vocabulary {}", path.display()))?;
    Vocabulary::from_text(&text)
        .with_context(|| format!("decoding vocabulary {}", path.display()))
}

pub fn write_features(path: &Path, fs_seq: &FeatureSequence) -> Result<()> {
    fs::write(path, data::features_to_bytes(fs_seq))
        .with_context(|| format!("writing features {}", path.display()))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).with_context(|| format!("reading features {}", path.display()))?;
    data::features_from_bytes(&bytes)
        .with_context(|| format!("decoding features {}", path.display()))
}

/// Write any serializable records as line-delimited JSON.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .with_context(|| format!("{} line {}: malformed record", path.display(), idx + 1))?,
        );
    }
    Ok(out)
}

/// One appended line of the description cache; the last record for a key
/// wins on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub meta: MetadataRecord,
    pub description: Description,
}

pub fn load_cache(path: &Path) -> Result<DescriptionCache> {
    let mut cache = DescriptionCache::new();
    if !path.exists() {
        return Ok(cache);
    }
    let records: Vec<CacheRecord> = read_jsonl(path)?;
    for r in records {
        cache.insert(r.key, r.description);
    }
    Ok(cache)
}

pub fn append_cache(path: &Path, record: &CacheRecord) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening cache {}", path.display()))?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    file.write_all(&line)
        .with_context(|| format!("appending to cache {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxasr_core::descgen::DescriptionSource;
    use ctxasr_core::model::{init_model, ModelConfig};
    use tempfile::tempdir;

    #[test]
    fn checkpoint_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut cfg = ModelConfig::desk(10, 5);
        cfg.d_model = 8;
        cfg.ffn_dim = 16;
        cfg.n_heads = 2;
        cfg.n_mels = 2;
        let params = init_model(&cfg).unwrap();
        // narrow to f32 first so the file round-trip is exact
        let params =
            model::checkpoint_from_bytes(&model::checkpoint_to_bytes(&params)).unwrap();
        write_checkpoint(&path, &params).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), params);
    }

    #[test]
    fn vocabulary_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocabulary::build(&["hello world"]).unwrap();
        write_vocabulary(&path, &vocab).unwrap();
        let back = read_vocabulary(&path).unwrap();
        assert_eq!(back.encode("hello").unwrap(), vocab.encode("hello").unwrap());
        assert_eq!(back.len(), vocab.len());
    }

    #[test]
    fn cache_appends_and_last_record_wins() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        assert!(load_cache(&path).unwrap().is_empty());
        let meta = MetadataRecord::lecture("d0", "Hashing");
        let desc = |text: &str| Description {
            text: text.into(),
            source: DescriptionSource::LlmGenerated,
            prompt_used: "p".into(),
            created_at: 1,
        };
        let record = CacheRecord {
            key: "k1".into(),
            meta: meta.clone(),
            description: desc("first"),
        };
        append_cache(&path, &record).unwrap();
        append_cache(
            &path,
            &CacheRecord {
                key: "k1".into(),
                description: desc("second"),
                ..record.clone()
            },
        )
        .unwrap();
        let cache = load_cache(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("k1").unwrap().text, "second");
        assert_eq!(cache.get("k1").unwrap(), &desc("second"));
    }

    #[test]
    fn jsonl_round_trips_and_reports_bad_lines() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![1u32, 2, 3];
        write_jsonl(&path, &records).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), records);
        fs::write(&path, "1\nnot json\n").unwrap();
        let err = read_jsonl::<u32>(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}

//! Idiom corpora and embedding files.
//!
//! Corpora are JSONL with one idiom per line. Embeddings use the `IDCE`
//! binary layout:
//!
//! ```text
//! "IDCE" | version u32 = 1 | count u32 | dim u32 |
//!   count x ( id_len u16 | id bytes (UTF-8) | dim x f32 )
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const IDCE_MAGIC: &[u8; 4] = b"IDCE";
pub const IDCE_VERSION: u32 = 1;

/// Rows whose norm is within this distance of 1 are kept bit-for-bit.
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: missing field `{name}`")]
    MissingField { line: usize, name: &'static str },
    #[error("duplicate idiom id `{0}`")]
    DuplicateId(String),
    #[error("bad magic bytes, expected IDCE")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("file is truncated")]
    TruncatedFile,
    #[error("invalid embedding id: {0}")]
    InvalidId(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One idiom with its cultural elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdiomRecord {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(default)]
    pub concepts: String,
    #[serde(default)]
    pub values: String,
    #[serde(default)]
    pub context: String,
}

impl IdiomRecord {
    pub fn new(id: impl Into<String>, lang: impl Into<String>, text: impl Into<String>) -> Self {
        IdiomRecord {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
            concepts: String::new(),
            values: String::new(),
            context: String::new(),
        }
    }

    pub fn has_cultural_elements(&self) -> bool {
        !self.concepts.trim().is_empty()
            && !self.values.trim().is_empty()
            && !self.context.trim().is_empty()
    }

    /// Text embedded as this idiom's cultural feature.
    pub fn cultural_text(&self) -> String {
        format!(
            "Concepts: {}\nValues: {}\nContext: {}",
            self.concepts, self.values, self.context
        )
    }
}

const RECORD_FIELDS: [&str; 6] = ["id", "lang", "text", "concepts", "values", "context"];

/// Parse a JSONL idiom corpus. Blank lines are skipped; line numbers are 1-based.
pub fn parse_idiom_records(path: &Path) -> Result<Vec<IdiomRecord>, IngestError> {
    let content = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_idiom_str(&content)
}

pub fn parse_idiom_str(content: &str) -> Result<Vec<IdiomRecord>, IngestError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| IngestError::MalformedLine {
            line,
            reason: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| IngestError::MalformedLine {
            line,
            reason: "expected a JSON object".into(),
        })?;
        let mut fields: [String; 6] = Default::default();
        for (slot, name) in fields.iter_mut().zip(RECORD_FIELDS) {
            let v = obj.get(name).ok_or(IngestError::MissingField { line, name })?;
            *slot = v
                .as_str()
                .ok_or_else(|| IngestError::MalformedLine {
                    line,
                    reason: format!("field `{name}` must be a string"),
                })?
                .to_string();
        }
        let [id, lang, text, concepts, values, context] = fields;
        for (name, v) in [("id", &id), ("lang", &lang), ("text", &text)] {
            if v.trim().is_empty() {
                return Err(IngestError::MalformedLine {
                    line,
                    reason: format!("field `{name}` is empty"),
                });
            }
        }
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId(id));
        }
        records.push(IdiomRecord {
            id,
            lang,
            text,
            concepts,
            values,
            context,
        });
    }
    Ok(records)
}

pub fn write_idiom_records(path: &Path, records: &[IdiomRecord]) -> Result<(), IngestError> {
    let file = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serialization is infallible");
        writeln!(out, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(path, e))
}

/// Dense, L2-normalized embedding rows addressed by idiom id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        EmbeddingMatrix {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Build from `(id, vector)` pairs, normalizing every row.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut m = EmbeddingMatrix::new(dim);
        for (id, v) in rows {
            m.push(id, v)?;
        }
        Ok(m)
    }

    /// Append a row. The vector is normalized unless it already has unit norm.
    pub fn push(&mut self, id: impl Into<String>, mut v: Vec<f32>) -> Result<usize, IngestError> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(IngestError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if id.is_empty() || id.len() > u16::MAX as usize {
            return Err(IngestError::InvalidId(id));
        }
        if self.index.contains_key(&id) {
            return Err(IngestError::DuplicateId(id));
        }
        normalize_in_place(&mut v);
        let row = self.ids.len();
        self.index.insert(id.clone(), row);
        self.ids.push(id);
        self.data.extend_from_slice(&v);
        Ok(row)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|i| self.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(IDCE_MAGIC);
        out.extend_from_slice(&IDCE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (i, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in self.row(i) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != IDCE_MAGIC {
            return Err(IngestError::BadMagic);
        }
        let version = r.u32()?;
        if version != IDCE_VERSION {
            return Err(IngestError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(IngestError::DimMismatch { expected: 1, got: 0 });
        }
        let mut m = EmbeddingMatrix::new(dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| IngestError::InvalidId("non-UTF-8 id".into()))?
                .to_string();
            let v = r.f32s(dim)?;
            m.push(id, v)?;
        }
        Ok(m)
    }
}

/// Read an IDCE file, normalizing rows that are not unit length.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

/// Like [`load_embeddings`] but rejects files of the wrong width.
pub fn load_embeddings_with_dim(path: &Path, dim: usize) -> Result<EmbeddingMatrix, IngestError> {
    let m = load_embeddings(path)?;
    if m.dim() != dim {
        return Err(IngestError::DimMismatch {
            expected: dim,
            got: m.dim(),
        });
    }
    Ok(m)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<(), IngestError> {
    fs::write(path, m.to_bytes()).map_err(|e| IngestError::io(path, e))
}

fn normalize_in_place(v: &mut [f32]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || (norm - 1.0).abs() <= NORM_TOLERANCE {
        return;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        let end = self.pos.checked_add(n).ok_or(IngestError::TruncatedFile)?;
        if end > self.bytes.len() {
            return Err(IngestError::TruncatedFile);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, IngestError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IngestError> {
        let raw = self.take(n.checked_mul(4).ok_or(IngestError::TruncatedFile)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Files making up one language-pair dataset. Relative paths resolve
/// against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_lang: String,
    pub target_lang: String,
    pub idiom_file: PathBuf,
    pub text_embedding_file: PathBuf,
    pub cultural_embedding_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_file: Option<PathBuf>,
}

/// A manifest with its files loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub source: Vec<IdiomRecord>,
    pub target: Vec<IdiomRecord>,
    pub text_embeddings: EmbeddingMatrix,
    pub cultural_embeddings: EmbeddingMatrix,
}

impl DatasetManifest {
    pub fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.idiom_file);
        fix(&mut self.text_embedding_file);
        fix(&mut self.cultural_embedding_file);
        if let Some(g) = self.graph_file.as_mut() {
            fix(g);
        }
        self
    }

    /// Load all referenced files and check that they agree on ids.
    pub fn load(&self) -> Result<Dataset, IngestError> {
        let records = parse_idiom_records(&self.idiom_file)?;
        let text_embeddings = load_embeddings(&self.text_embedding_file)?;
        let cultural_embeddings = load_embeddings(&self.cultural_embedding_file)?;
        let (mut source, mut target) = (Vec::new(), Vec::new());
        for r in records {
            if r.lang == self.source_lang {
                source.push(r);
            } else if r.lang == self.target_lang {
                target.push(r);
            }
        }
        for r in source.iter().chain(&target) {
            for (m, what) in [(&text_embeddings, "text"), (&cultural_embeddings, "cultural")] {
                if !m.contains(&r.id) {
                    return Err(IngestError::Manifest(format!(
                        "idiom `{}` has no {what} embedding",
                        r.id
                    )));
                }
            }
        }
        Ok(Dataset {
            manifest: self.clone(),
            source,
            target,
            text_embeddings,
            cultural_embeddings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, lang: &str) -> String {
        format!(
            r#"{{"id":"{id}","lang":"{lang}","text":"t {id}","concepts":"c","values":"v","context":"x"}}"#
        )
    }

    #[test]
    fn empty_input_gives_no_records() {
        assert!(parse_idiom_str("").unwrap().is_empty());
    }

    #[test]
    fn records_keep_file_order() {
        let s = format!("{}\n{}\n", line("en:b", "en"), line("en:a", "en"));
        let recs = parse_idiom_str(&s).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "en:b");
        assert_eq!(recs[1].id, "en:a");
    }

    #[test]
    fn missing_lang_is_reported() {
        let s = r#"{"id":"x","text":"t","concepts":"","values":"","context":""}"#;
        match parse_idiom_str(s) {
            Err(IngestError::MissingField { line: 1, name: "lang" }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let s = format!("{}\n{}", line("a", "en"), line("a", "en"));
        assert!(matches!(parse_idiom_str(&s), Err(IngestError::DuplicateId(id)) if id == "a"));
        let s = format!("{}\n\n{{not json", line("a", "en"));
        assert!(matches!(
            parse_idiom_str(&s),
            Err(IngestError::MalformedLine { line: 3, .. })
        ));
    }

    #[test]
    fn single_row_is_normalized_on_load() {
        let mut raw = Vec::new();
        raw.extend_from_slice(b"IDCE");
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&2u32.to_le_bytes());
        raw.extend_from_slice(&1u16.to_le_bytes());
        raw.push(b'a');
        raw.extend_from_slice(&3.0f32.to_le_bytes());
        raw.extend_from_slice(&4.0f32.to_le_bytes());
        let m = EmbeddingMatrix::from_bytes(&raw).unwrap();
        let r = m.get("a").unwrap();
        assert!((r[0] - 0.6).abs() < 1e-7 && (r[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn short_row_is_truncated_file() {
        let mut raw = Vec::new();
        raw.extend_from_slice(b"IDCE");
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&768u32.to_le_bytes());
        raw.extend_from_slice(&1u16.to_le_bytes());
        raw.push(b'a');
        for _ in 0..767 {
            raw.extend_from_slice(&0.1f32.to_le_bytes());
        }
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&raw),
            Err(IngestError::TruncatedFile)
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(
            EmbeddingMatrix::from_bytes(b"IDCX\x01\0\0\0\0\0\0\0\x02\0\0\0"),
            Err(IngestError::BadMagic)
        ));
        assert!(matches!(
            EmbeddingMatrix::from_bytes(b"IDCE\x02\0\0\0\0\0\0\0\x02\0\0\0"),
            Err(IngestError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn push_rejects_wrong_width() {
        let mut m = EmbeddingMatrix::new(3);
        assert!(matches!(
            m.push("a", vec![1.0, 2.0]),
            Err(IngestError::DimMismatch { expected: 3, got: 2 })
        ));
    }
}

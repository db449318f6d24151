use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::llm::{DecodingParams, LlmProvider};
use super::prompt::{TemplateKind, TemplateSet};
use super::retrieval::{retrieve_unseen, CandidateSet, Retriever};
use super::PipelineError;
use crate::contrastive::{AttachConfig, HeadIndex, ProjectionHead};
use crate::ingest::{EmbeddingMatrix, IdiomRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationPath {
    Seen,
    Unseen,
    Pivot,
    Direct,
}

/// Outcome of asking the provider to pick one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen target id, or `None` when the provider rejected every candidate.
    pub chosen: Option<String>,
    /// The reply matched no candidate and the top candidate was used instead.
    pub fallback: bool,
    pub reply: String,
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation() && !"“”‘’«»।॥".contains(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Strip quotes and a leading "2." / "2)" list marker.
fn clean_reply(reply: &str) -> &str {
    let mut r = reply.trim();
    let digits = r.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let after = &r[digits..];
        if let Some(rest) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            if rest.starts_with(char::is_whitespace) {
                r = rest.trim();
            }
        }
    }
    r.trim_matches(|c: char| c == '"' || c == '\'' || c == '“' || c == '”' || c == '`')
        .trim()
}

/// Match a provider reply against `(id, text)` candidates, best first.
pub fn parse_selection(reply: &str, candidates: &[(String, String)]) -> Option<Result<usize, ()>> {
    let r = clean_reply(reply);
    if r.eq_ignore_ascii_case("none") {
        return Some(Err(()));
    }
    if let Some(i) = candidates.iter().position(|(id, text)| r == text || r == id) {
        return Some(Ok(i));
    }
    let nr = normalize(r);
    if nr.is_empty() {
        return None;
    }
    if let Some(i) = candidates
        .iter()
        .position(|(id, text)| nr == normalize(text) || nr == normalize(id))
    {
        return Some(Ok(i));
    }
    if let Ok(n) = r.parse::<usize>() {
        if (1..=candidates.len()).contains(&n) {
            return Some(Ok(n - 1));
        }
    }
    let contained: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, (_, text))| {
            let nt = normalize(text);
            !nt.is_empty() && nr.contains(&nt)
        })
        .map(|(i, _)| i)
        .collect();
    match contained[..] {
        [i] => Some(Ok(i)),
        _ => None,
    }
}

/// Candidate list as shown to the provider: one numbered line per idiom.
pub fn format_candidates(candidates: &[(String, String)]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, (_, text))| format!("{}. {}", i + 1, text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ask the provider to choose among `candidates`. `texts` maps target ids
/// to surface forms; ids without an entry are shown as-is.
pub fn select_target_idiom(
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    decoding: &DecodingParams,
    sentence: &str,
    source_idiom: &str,
    candidates: &CandidateSet,
    texts: &HashMap<String, IdiomRecord>,
) -> Result<Selection, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    let listed: Vec<(String, String)> = candidates
        .ids()
        .map(|id| (id.to_string(), texts.get(id).map_or(id, |r| r.text.as_str()).to_string()))
        .collect();
    let list = format_candidates(&listed);
    let prompt = templates.get(TemplateKind::Selection).render(&BTreeMap::from([
        ("source_sentence", sentence),
        ("source_idiom", source_idiom),
        ("candidate_list", list.as_str()),
    ]))?;
    let reply = provider.complete(&prompt, decoding)?;
    let (chosen, fallback) = match parse_selection(&reply, &listed) {
        Some(Ok(i)) => (Some(listed[i].0.clone()), false),
        Some(Err(())) => (None, false),
        None => {
            log::warn!("selection reply {reply:?} matches no candidate; using the top-ranked idiom");
            (Some(listed[0].0.clone()), true)
        }
    };
    Ok(Selection { chosen, fallback, reply })
}

/// Provenance-carrying translation of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub sentence: String,
    pub source_idiom: String,
    pub source_idiom_id: Option<String>,
    pub target_lang: String,
    pub path: TranslationPath,
    pub candidates: Vec<super::Candidate>,
    /// Chosen target id; `None` when retrieval was skipped or every
    /// candidate was rejected.
    pub chosen_target_id: Option<String>,
    pub chosen_target_idiom: Option<String>,
    pub selection_fallback: bool,
    pub provider: String,
    pub prompt: String,
    pub translation: String,
}

/// Render the translation prompt for a chosen idiom and send it.
#[allow(clippy::too_many_arguments)]
pub fn translate_sentence(
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    decoding: &DecodingParams,
    sentence: &str,
    source_idiom: &str,
    target_idiom: &str,
    target_lang: &str,
) -> Result<(String, String), PipelineError> {
    let prompt = templates.get(TemplateKind::Translation).render(&BTreeMap::from([
        ("source_sentence", sentence),
        ("source_idiom", source_idiom),
        ("selected_target_idiom", target_idiom),
        ("target_language", target_lang),
    ]))?;
    let text = provider.complete(&prompt, decoding)?;
    Ok((prompt, text))
}

/// Direct prompting with no idiom retrieval.
pub fn translate_direct(
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    decoding: &DecodingParams,
    sentence: &str,
    target_lang: &str,
) -> Result<(String, String), PipelineError> {
    let prompt = templates
        .get(TemplateKind::Direct)
        .render(&BTreeMap::from([("source_sentence", sentence), ("target_language", target_lang)]))?;
    let text = provider.complete(&prompt, decoding)?;
    Ok((prompt, text))
}

/// One line of a batch input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub sentence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idiom_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idiom_text: Option<String>,
    pub target_lang: String,
}

/// What the unseen path needs: the trained head, its index over seen
/// sources, and embeddings for idioms outside the graph.
#[derive(Debug, Clone)]
pub struct UnseenContext<'a> {
    pub head: &'a ProjectionHead,
    pub index: &'a HeadIndex,
    pub embeddings: &'a EmbeddingMatrix,
    pub attach: AttachConfig,
    pub seed: u64,
}

/// Everything needed to translate batch items.
pub struct Translator<'a> {
    pub provider: &'a dyn LlmProvider,
    pub templates: TemplateSet,
    pub decoding: DecodingParams,
    pub k: usize,
    /// Idiom records of both languages by id.
    pub idioms: &'a HashMap<String, IdiomRecord>,
    /// `None` means every item is translated by direct prompting.
    pub retriever: Option<&'a Retriever<'a>>,
    pub unseen: Option<UnseenContext<'a>>,
}

/// Per-idiom RNG seed that does not depend on processing order.
fn idiom_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl<'a> Translator<'a> {
    fn resolve(&self, item: &BatchItem) -> Result<Option<&'a IdiomRecord>, PipelineError> {
        if let Some(id) = &item.idiom_id {
            return self
                .idioms
                .get(id)
                .map(Some)
                .ok_or_else(|| PipelineError::UnknownIdiom(id.clone()));
        }
        let Some(text) = &item.idiom_text else {
            return Ok(None);
        };
        let source_lang = self.retriever.map(|r| r.graph.source_lang.as_str());
        let wanted = normalize(text);
        let mut hits: Vec<&IdiomRecord> = self
            .idioms
            .values()
            .filter(|r| source_lang.is_none_or(|l| r.lang == l) && normalize(&r.text) == wanted)
            .collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        hits.first()
            .copied()
            .map(Some)
            .ok_or_else(|| PipelineError::UnknownIdiom(text.clone()))
    }

    pub fn translate(&self, item: &BatchItem) -> Result<TranslationResult, PipelineError> {
        let record = self.resolve(item)?;
        let (retriever, record) = match (self.retriever, record) {
            (Some(r), Some(rec)) => (r, rec),
            (_, rec) => {
                let (prompt, translation) =
                    translate_direct(self.provider, &self.templates, &self.decoding, &item.sentence, &item.target_lang)?;
                return Ok(TranslationResult {
                    sentence: item.sentence.clone(),
                    source_idiom: rec.map_or_else(|| item.idiom_text.clone().unwrap_or_default(), |r| r.text.clone()),
                    source_idiom_id: rec.map(|r| r.id.clone()),
                    target_lang: item.target_lang.clone(),
                    path: TranslationPath::Direct,
                    candidates: Vec::new(),
                    chosen_target_id: None,
                    chosen_target_idiom: None,
                    selection_fallback: false,
                    provider: self.provider.id(),
                    prompt,
                    translation,
                });
            }
        };
        let (candidates, path) = if retriever.source_node(&record.id).is_ok() {
            (retriever.retrieve_topk(&record.id, self.k)?, TranslationPath::Seen)
        } else {
            let ctx = self
                .unseen
                .as_ref()
                .ok_or_else(|| PipelineError::UnknownIdiom(record.id.clone()))?;
            let emb = ctx
                .embeddings
                .get(&record.id)
                .ok_or_else(|| PipelineError::UnknownIdiom(record.id.clone()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(idiom_seed(ctx.seed, &record.id));
            let found = retrieve_unseen(retriever, record, emb, ctx.head, ctx.index, &ctx.attach, self.k, &mut rng)?;
            (found.candidates, TranslationPath::Unseen)
        };
        self.translate_with(item, record, candidates, path)
    }

    /// Selection and translation over an already retrieved candidate set.
    pub fn translate_with(
        &self,
        item: &BatchItem,
        record: &IdiomRecord,
        candidates: CandidateSet,
        path: TranslationPath,
    ) -> Result<TranslationResult, PipelineError> {
        let sel = select_target_idiom(
            self.provider,
            &self.templates,
            &self.decoding,
            &item.sentence,
            &record.text,
            &candidates,
            self.idioms,
        )?;
        let chosen_text = sel
            .chosen
            .as_ref()
            .map(|id| self.idioms.get(id).map_or(id.clone(), |r| r.text.clone()));
        let (prompt, translation) = match &chosen_text {
            Some(target) => translate_sentence(
                self.provider,
                &self.templates,
                &self.decoding,
                &item.sentence,
                &record.text,
                target,
                &item.target_lang,
            )?,
            None => translate_direct(self.provider, &self.templates, &self.decoding, &item.sentence, &item.target_lang)?,
        };
        Ok(TranslationResult {
            sentence: item.sentence.clone(),
            source_idiom: record.text.clone(),
            source_idiom_id: Some(record.id.clone()),
            target_lang: item.target_lang.clone(),
            path,
            candidates: candidates.candidates,
            chosen_target_id: sel.chosen,
            chosen_target_idiom: chosen_text,
            selection_fallback: sel.fallback,
            provider: self.provider.id(),
            prompt,
            translation,
        })
    }
}

/// Translate `items` with at most `jobs` requests in flight. Results are
/// in input order; the first failing item (by input position) fails the batch.
pub fn translate_batch(
    translator: &Translator<'_>,
    items: &[BatchItem],
    jobs: usize,
) -> Result<Vec<TranslationResult>, PipelineError> {
    let jobs = jobs.clamp(1, items.len().max(1));
    let slots: Vec<Mutex<Option<Result<TranslationResult, PipelineError>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let res = translator.translate(&items[i]);
                *slots[i].lock().expect("result slot") = Some(res);
            });
        }
    });
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            slot.into_inner()
                .expect("result slot")
                .expect("every item is processed")
                .map_err(|e| PipelineError::BatchItem {
                    line: i + 1,
                    source: Box::new(e),
                })
        })
        .collect()
}

pub fn read_batch(path: &Path) -> Result<Vec<BatchItem>, PipelineError> {
    let content = fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::BadBatchLine {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Write one JSON object per line to `path` via a temporary file and a
/// rename, so readers never see a partial file.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        for row in rows {
            let line = serde_json::to_string(row).map_err(|e| PipelineError::Io(e.to_string()))?;
            writeln!(f, "{line}").map_err(io)?;
        }
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

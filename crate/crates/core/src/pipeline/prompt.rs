use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template `{template}` has no value for slot `{slot}`")]
    UnfilledSlot { template: TemplateKind, slot: String },
    #[error("template `{template}` is missing required slot `{slot}`")]
    MissingSlot { template: TemplateKind, slot: String },
    #[error("unclosed `{{` in template `{0}`")]
    Unclosed(TemplateKind),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Direct,
    Selection,
    Translation,
    CulturalElements,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Direct,
        TemplateKind::Selection,
        TemplateKind::Translation,
        TemplateKind::CulturalElements,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Direct => "direct",
            TemplateKind::Selection => "selection",
            TemplateKind::Translation => "translation",
            TemplateKind::CulturalElements => "cultural_elements",
        }
    }

    pub fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Direct => &["source_sentence", "target_language"],
            TemplateKind::Selection => &["source_sentence", "source_idiom", "candidate_list"],
            TemplateKind::Translation => &[
                "source_sentence",
                "source_idiom",
                "selected_target_idiom",
                "target_language",
            ],
            TemplateKind::CulturalElements => &["idiom", "language"],
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            TemplateKind::Direct => DEFAULT_DIRECT,
            TemplateKind::Selection => DEFAULT_SELECTION,
            TemplateKind::Translation => DEFAULT_TRANSLATION,
            TemplateKind::CulturalElements => DEFAULT_CULTURAL,
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const DEFAULT_DIRECT: &str = "Translate the following sentence into {target_language}. \
Render any idiom with a natural idiomatic equivalent rather than word for word.\n\n\
Sentence: {source_sentence}\n\nTranslation:";

const DEFAULT_SELECTION: &str = "The sentence below contains the idiom \"{source_idiom}\".\n\n\
Sentence: {source_sentence}\n\n\
Candidate idioms in the target language:\n{candidate_list}\n\n\
Reply with the single candidate that best conveys the idiom's figurative meaning in this context, \
copied exactly as listed. Reply NONE if no candidate fits.";

const DEFAULT_TRANSLATION: &str = "Translate the sentence below into {target_language}. \
The idiom \"{source_idiom}\" should be expressed with the {target_language} idiom \
\"{selected_target_idiom}\", adapted to fit the sentence.\n\n\
Sentence: {source_sentence}\n\nTranslation:";

const DEFAULT_CULTURAL: &str = "Describe the {language} idiom \"{idiom}\" in three labeled sections.\n\
Concepts: the core ideas the idiom expresses.\n\
Values: the cultural values it reflects.\n\
Context: its situational or historical background.";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// `{name}` placeholders are slots. Braces around anything else are kept
/// as literal text.
fn parse(kind: TemplateKind, body: &str) -> Result<Vec<Piece>, TemplateError> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(TemplateError::Unclosed(kind))?;
        let name = &after[..close];
        if is_slot_name(name) {
            if !text.is_empty() {
                pieces.push(Piece::Text(std::mem::take(&mut text)));
            }
            pieces.push(Piece::Slot(name.to_string()));
            rest = &after[close + 1..];
        } else {
            text.push('{');
            rest = after;
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    body: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// Parse `body`; every required slot of `kind` must appear in it.
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let pieces = parse(kind, &body)?;
        let present: BTreeSet<&str> = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect();
        for slot in kind.required_slots() {
            if !present.contains(slot) {
                return Err(TemplateError::MissingSlot {
                    template: kind,
                    slot: slot.to_string(),
                });
            }
        }
        Ok(PromptTemplate { kind, body, pieces })
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        PromptTemplate::new(kind, kind.default_body()).expect("built-in templates are valid")
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitute every slot. A slot without a value, or with an empty
    /// value, is an error.
    pub fn render(&self, values: &BTreeMap<&str, &str>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => match values.get(s.as_str()) {
                    Some(v) if !v.trim().is_empty() => out.push_str(v),
                    _ => {
                        return Err(TemplateError::UnfilledSlot {
                            template: self.kind,
                            slot: s.clone(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

/// One template of each kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateKind, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            templates: TemplateKind::ALL
                .iter()
                .map(|&k| (k, PromptTemplate::default_for(k)))
                .collect(),
        }
    }
}

impl TemplateSet {
    /// Read `<dir>/<name>.txt` for each kind, falling back to the built-in
    /// text for files that do not exist.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::default();
        for kind in TemplateKind::ALL {
            let path = dir.join(format!("{}.txt", kind.name()));
            if !path.exists() {
                continue;
            }
            let body = fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            set.templates.insert(kind, PromptTemplate::new(kind, body)?);
        }
        Ok(set)
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        &self.templates[&kind]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.kind, template);
    }
}

//! Prompt templates for the neutral and causal framings.
//!
//! Templates are data: the bundled set lives in `data/templates.jsonl`, one
//! JSON object per line with `kind`, `index` and `body`. Each body holds the
//! `{review}` placeholder exactly once.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Review;
use crate::io;

pub const PLACEHOLDER: &str = "{review}";

const BUNDLED: &str = include_str!("../data/templates.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptKind {
    C0,
    C1,
    C2,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::C0, PromptKind::C1, PromptKind::C2];
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::C0 => "C0",
            PromptKind::C1 => "C1",
            PromptKind::C2 => "C2",
        })
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C0" => Ok(PromptKind::C0),
            "C1" => Ok(PromptKind::C1),
            "C2" => Ok(PromptKind::C2),
            other => Err(Error::InvalidArgument(format!("unknown prompt kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    #[serde(rename = "index")]
    pub paraphrase_index: usize,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, paraphrase_index: usize, body: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate { kind, paraphrase_index, body: body.into() };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        match self.body.matches(PLACEHOLDER).count() {
            1 => Ok(()),
            0 => Err(Error::Template(format!(
                "{} paraphrase {} has no {PLACEHOLDER} placeholder",
                self.kind, self.paraphrase_index
            ))),
            n => Err(Error::Template(format!(
                "{} paraphrase {} has {n} {PLACEHOLDER} placeholders",
                self.kind, self.paraphrase_index
            ))),
        }
    }
}

/// Parses template JSONL, rejecting duplicate `(kind, index)` pairs and bodies
/// without exactly one placeholder. Output is sorted by kind then index.
pub fn parse_templates(text: &str) -> Result<Vec<PromptTemplate>> {
    let mut out: Vec<PromptTemplate> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: PromptTemplate = serde_json::from_str(line)
            .map_err(|e| Error::Malformed { line: i + 1, reason: e.to_string() })?;
        t.check()?;
        if !seen.insert((t.kind, t.paraphrase_index)) {
            return Err(Error::Template(format!(
                "duplicate template {} paraphrase {}",
                t.kind, t.paraphrase_index
            )));
        }
        out.push(t);
    }
    out.sort_by_key(|t| (t.kind, t.paraphrase_index));
    Ok(out)
}

/// The bundled set when `path` is `None`, otherwise the user's file.
pub fn load_templates(path: Option<&Path>) -> Result<Vec<PromptTemplate>> {
    match path {
        None => parse_templates(BUNDLED),
        Some(p) => parse_templates(&io::read_to_string(p)?),
    }
}

pub fn templates_to_jsonl(templates: &[PromptTemplate]) -> String {
    templates
        .iter()
        .map(|t| serde_json::to_string(t).expect("template serializes") + "\n")
        .collect()
}

pub fn render(template: &PromptTemplate, review: &Review) -> String {
    render_text(template, &review.text, None)
}

/// Substitutes `text` verbatim. With `max_chars`, text longer than the cap is
/// cut back to the last whitespace at or before the cap (or hard-cut when a
/// single word exceeds it).
pub fn render_text(template: &PromptTemplate, text: &str, max_chars: Option<usize>) -> String {
    let inserted = match max_chars {
        Some(cap) => truncate_words(text, cap),
        None => text,
    };
    template.body.replacen(PLACEHOLDER, inserted, 1)
}

pub fn truncate_words(text: &str, max_chars: usize) -> &str {
    let Some((cut, _)) = text.char_indices().nth(max_chars) else {
        return text;
    };
    let head = &text[..cut];
    if text[cut..].starts_with(char::is_whitespace) {
        return head.trim_end();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) => head[..ws].trim_end(),
        None => head,
    }
}

pub fn find_template(templates: &[PromptTemplate], kind: PromptKind, index: usize) -> Option<&PromptTemplate> {
    templates.iter().find(|t| t.kind == kind && t.paraphrase_index == index)
}

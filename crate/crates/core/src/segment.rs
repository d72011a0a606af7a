//! Rule-based sentence segmentation.
//!
//! A sentence ends at a run of `.`, `!` or `?` (an ellipsis or `!?!` counts as
//! one terminator), optionally followed by closing quotes or brackets, when the
//! run is followed by end of text or by whitespace and then an uppercase letter
//! or a digit. A small abbreviation list suppresses splits after a single
//! period. Newlines always end a sentence.

use serde::{Deserialize, Serialize};

const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "st.", "vs.", "etc.", "e.g.", "i.e.", "u.s.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '\u{bb}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{201c}', '\u{2018}', '\u{ab}'];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Ordered sentences of one text. No entry is empty or whitespace-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceList {
    pub sentences: Vec<String>,
}

impl SentenceList {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(String::as_str)
    }
}

/// Anything that can turn review text into sentences.
pub trait Segmenter: Send + Sync {
    fn split(&self, text: &str) -> SentenceList;

    fn count(&self, text: &str) -> usize {
        self.split(text).len()
    }
}

/// The built-in rule-based segmenter.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSegmenter;

impl Segmenter for RuleSegmenter {
    fn split(&self, text: &str) -> SentenceList {
        split_sentences(text)
    }
}

pub fn split_sentences(text: &str) -> SentenceList {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let push = |from: usize, to: usize, out: &mut Vec<String>| {
        let s = text[from..to].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    };

    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' {
            push(start, pos, &mut sentences);
            start = pos + 1;
            i += 1;
            continue;
        }
        if !is_terminal(c) {
            i += 1;
            continue;
        }

        let run_start = i;
        let mut j = i;
        while j < chars.len() && is_terminal(chars[j].1) {
            j += 1;
        }
        let run_len = j - run_start;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let end_byte = chars.get(j).map_or(text.len(), |&(p, _)| p);

        let boundary = if j == chars.len() {
            true
        } else if chars[j].1.is_whitespace() {
            let next = chars[j..].iter().map(|&(_, c)| c).find(|c| !c.is_whitespace());
            match next {
                None => true,
                Some(n) => n.is_uppercase() || n.is_ascii_digit(),
            }
        } else {
            false
        };

        let abbreviated = run_len == 1
            && chars[run_start].1 == '.'
            && is_abbreviation(&text[start..chars[run_start].0 + 1]);

        if boundary && !abbreviated {
            push(start, end_byte, &mut sentences);
            start = end_byte;
        }
        i = j.max(i + 1);
    }
    push(start, text.len(), &mut sentences);
    SentenceList { sentences }
}

fn is_abbreviation(upto_period: &str) -> bool {
    let token = upto_period
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(OPENERS);
    let lower = token.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

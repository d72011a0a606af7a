use std::collections::HashMap;
use std::path::Path;

use super::{logit_clamp, Scorer, TensScore};
use crate::error::{Error, Result};
use crate::io;
use crate::segment::SentenceList;

const BUNDLED: &str = include_str!("../../data/lexicon.tsv");

/// Lowercases and splits on non-alphanumerics, dropping empties.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Token polarities in `[-1, 1]`. Unknown tokens have polarity 0.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    polarity: HashMap<String, f64>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled lexicon is well formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_to_string(path)?)
    }

    /// Parses `token<TAB>polarity` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut polarity = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, value) = line.split_once('\t').ok_or_else(|| Error::Malformed {
                line: i + 1,
                reason: "expected token<TAB>polarity".into(),
            })?;
            let value: f64 = value.trim().parse().map_err(|_| Error::Malformed {
                line: i + 1,
                reason: format!("bad polarity {value:?}"),
            })?;
            if !(-1.0..=1.0).contains(&value) {
                return Err(Error::Malformed {
                    line: i + 1,
                    reason: format!("polarity {value} outside [-1, 1]"),
                });
            }
            polarity.insert(token.trim().to_lowercase(), value);
        }
        Ok(Lexicon { polarity })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Lexicon {
            polarity: pairs.into_iter().map(|(t, v)| (t.to_lowercase(), v)).collect(),
        }
    }

    pub fn get(&self, token: &str) -> f64 {
        self.polarity.get(token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.polarity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polarity.is_empty()
    }

    /// Mean token polarity of `sentence`; 0 for a sentence without tokens.
    pub fn polarity(&self, sentence: &str) -> f64 {
        let (sum, n) = tokenize(sentence).fold((0.0, 0usize), |(s, n), t| (s + self.get(&t), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Polarity mapped to a probability `(polarity + 1) / 2` and then through
    /// the clamped logit.
    pub fn score(&self, sentence: &str) -> TensScore {
        let p = ((self.polarity(sentence) + 1.0) / 2.0).clamp(0.0, 1.0);
        logit_clamp(p).expect("probability is within [0, 1]")
    }
}

#[derive(Debug, Clone)]
pub struct LexiconScorer {
    lexicon: Lexicon,
}

impl LexiconScorer {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconScorer { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl Scorer for LexiconScorer {
    fn score_sentences(&self, _review_id: &str, sentences: &SentenceList) -> Result<Vec<TensScore>> {
        Ok(sentences.iter().map(|s| self.lexicon.score(s)).collect())
    }
}

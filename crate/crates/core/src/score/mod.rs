//! Sentence sentiment scoring on the canonical tens scale.
//!
//! Every scorer ends in [`TensScore`], a value in `[-10, 10]` where `-10` is the
//! most negative sentiment, `0` is neutral and `+10` the most positive. Star
//! ratings map onto the same scale (`5 * (stars - 3)`), and the 1–5 display
//! scale used in reports is the affine inverse of that map.

mod cache;
mod http;
mod lexicon;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use cache::{CachingScorer, ScoreCache, ScoreCacheScorer};
pub use http::{HttpScorer, HttpScorerConfig};
pub use lexicon::{tokenize, Lexicon, LexiconScorer};

use crate::error::{Error, Result};
use crate::segment::SentenceList;

pub const TENS_MIN: f64 = -10.0;
pub const TENS_MAX: f64 = 10.0;

/// Probabilities are clipped into `[PROB_EPS, 1 - PROB_EPS]` before the logit.
pub const PROB_EPS: f64 = 1e-9;

/// A sentiment score on the tens scale, always within `[-10, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensScore(f64);

impl TensScore {
    pub const NEUTRAL: TensScore = TensScore(0.0);

    /// Clamps finite input into range. NaN is rejected.
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::InvalidArgument("NaN sentiment score".into()));
        }
        Ok(TensScore(value.clamp(TENS_MIN, TENS_MAX)))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn display(self) -> f64 {
        tens_to_display(self)
    }
}

impl From<TensScore> for f64 {
    fn from(s: TensScore) -> f64 {
        s.0
    }
}

/// Clamped logit of a positive-class probability.
pub fn logit_clamp(p: f64) -> Result<TensScore> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let raw = (p / (1.0 - p)).ln();
    Ok(TensScore(raw.clamp(TENS_MIN, TENS_MAX)))
}

/// Maps a 1..=5 star rating onto the tens scale.
pub fn star_to_tens(stars: u8) -> Result<TensScore> {
    if !(1..=5).contains(&stars) {
        return Err(Error::StarsOutOfRange(stars as i64));
    }
    Ok(TensScore(5.0 * (stars as f64 - 3.0)))
}

pub fn tens_to_display(score: TensScore) -> f64 {
    score.0 / 5.0 + 3.0
}

/// Inverse of [`tens_to_display`] for arbitrary display-scale reals.
pub fn display_to_tens(display: f64) -> Result<TensScore> {
    TensScore::new(5.0 * (display - 3.0))
}

/// A sentence scorer. Implementations must be shareable across worker threads.
pub trait Scorer: Send + Sync {
    /// Scores `sentences` of the review `review_id`; output is order-aligned.
    fn score_sentences(&self, review_id: &str, sentences: &SentenceList) -> Result<Vec<TensScore>>;

    /// Persists any side state (e.g. a write-through cache).
    fn flush(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Lexicon,
    Http,
    Cache,
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexicon" => Ok(ScorerKind::Lexicon),
            "http" => Ok(ScorerKind::Http),
            "cache" => Ok(ScorerKind::Cache),
            other => Err(Error::ScorerConfig(format!("unknown scorer kind {other:?}"))),
        }
    }
}

/// Declarative scorer selection, as read from run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub endpoint: Option<String>,
    pub cache_path: Option<PathBuf>,
    /// `None` selects the bundled lexicon.
    pub lexicon_path: Option<PathBuf>,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec {
            kind: ScorerKind::Lexicon,
            endpoint: None,
            cache_path: None,
            lexicon_path: None,
        }
    }
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScorerKind::Http if self.endpoint.is_none() => {
                Err(Error::ScorerConfig("http scorer requires an endpoint".into()))
            }
            ScorerKind::Cache if self.cache_path.is_none() => {
                Err(Error::ScorerConfig("cache scorer requires a cache path".into()))
            }
            _ => Ok(()),
        }
    }

    /// Resolves the spec into a live scorer. Lexicon and http scorers are
    /// wrapped in a write-through cache when `cache_path` is set.
    pub fn build(&self) -> Result<Box<dyn Scorer>> {
        self.validate()?;
        let inner: Box<dyn Scorer> = match self.kind {
            ScorerKind::Cache => {
                let path = self.cache_path.as_ref().expect("validated");
                return Ok(Box::new(ScoreCacheScorer::new(ScoreCache::load(path)?)));
            }
            ScorerKind::Lexicon => {
                let lex = match &self.lexicon_path {
                    Some(p) => Lexicon::load(p)?,
                    None => Lexicon::bundled(),
                };
                Box::new(LexiconScorer::new(lex))
            }
            ScorerKind::Http => {
                let endpoint = self.endpoint.clone().expect("validated");
                let scorer = HttpScorer::new(HttpScorerConfig::new(endpoint));
                scorer.health()?;
                Box::new(scorer)
            }
        };
        match &self.cache_path {
            Some(path) => Ok(Box::new(CachingScorer::open(inner, path)?)),
            None => Ok(inner),
        }
    }
}

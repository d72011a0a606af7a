//! Emotion arcs and their decile resampling.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ingest::{Corpus, Review};
use crate::io;
use crate::score::{Scorer, TensScore};
use crate::segment::Segmenter;

/// Per-sentence sentiment of one review, in sentence order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionArc {
    pub review_id: String,
    scores: Vec<TensScore>,
}

impl EmotionArc {
    pub fn new(review_id: impl Into<String>, scores: Vec<TensScore>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyArc);
        }
        Ok(EmotionArc { review_id: review_id.into(), scores })
    }

    /// Builds an arc from raw tens-scale values, clamping into range.
    pub fn from_values(review_id: impl Into<String>, values: &[f64]) -> Result<Self> {
        let scores = values.iter().map(|&v| TensScore::new(v)).collect::<Result<Vec<_>>>()?;
        Self::new(review_id, scores)
    }

    pub fn scores(&self) -> &[TensScore] {
        &self.scores
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().map(|s| s.value())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn last(&self) -> TensScore {
        *self.scores.last().expect("arcs are nonempty")
    }

    /// One arc-file line: `{"id": ..., "scores": [...]}` with six decimals.
    pub fn to_json_line(&self) -> String {
        let scores: Vec<String> = self.values().map(io::fmt6).collect();
        format!(
            "{{\"id\":{},\"scores\":[{}]}}",
            serde_json::to_string(&self.review_id).expect("string serializes"),
            scores.join(",")
        )
    }
}

pub fn build_arc(review: &Review, segmenter: &dyn Segmenter, scorer: &dyn Scorer) -> Result<EmotionArc> {
    let sentences = segmenter.split(&review.text);
    if sentences.is_empty() {
        return Err(Error::NoSentences(review.id.clone()));
    }
    let scores = scorer.score_sentences(&review.id, &sentences)?;
    if scores.len() != sentences.len() {
        return Err(Error::MalformedResponse(format!(
            "scorer returned {} scores for {} sentences of {}",
            scores.len(),
            sentences.len(),
            review.id
        )));
    }
    EmotionArc::new(review.id.clone(), scores)
}

/// Builds arcs for a whole corpus on at most `workers` threads. Output order
/// follows the corpus regardless of completion order.
pub fn build_arcs(
    corpus: &Corpus,
    segmenter: &dyn Segmenter,
    scorer: &dyn Scorer,
    workers: usize,
) -> Result<Vec<EmotionArc>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let arcs = pool.install(|| {
        corpus
            .reviews
            .par_iter()
            .map(|r| build_arc(r, segmenter, scorer))
            .collect::<Result<Vec<_>>>()
    })?;
    scorer.flush()?;
    Ok(arcs)
}

#[derive(Deserialize)]
struct ArcLine {
    id: String,
    scores: Vec<f64>,
}

pub fn arcs_to_jsonl(arcs: &[EmotionArc]) -> String {
    arcs.iter().map(|a| a.to_json_line() + "\n").collect()
}

pub fn parse_arcs(text: &str) -> Result<Vec<EmotionArc>> {
    let mut arcs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: ArcLine = serde_json::from_str(line)
            .map_err(|e| Error::Malformed { line: i + 1, reason: e.to_string() })?;
        if raw.scores.iter().any(|v| !(-10.0..=10.0).contains(v)) {
            return Err(Error::Malformed { line: i + 1, reason: "score outside [-10, 10]".into() });
        }
        arcs.push(
            EmotionArc::from_values(raw.id, &raw.scores)
                .map_err(|e| Error::Malformed { line: i + 1, reason: e.to_string() })?,
        );
    }
    Ok(arcs)
}

pub fn load_arcs(path: &Path) -> Result<Vec<EmotionArc>> {
    parse_arcs(&io::read_to_string(path)?)
}

pub fn save_arcs(arcs: &[EmotionArc], path: &Path) -> Result<()> {
    io::write_atomic(path, arcs_to_jsonl(arcs).as_bytes())
}

/// Indexes arcs by review id.
pub fn arc_index(arcs: &[EmotionArc]) -> HashMap<&str, &EmotionArc> {
    arcs.iter().map(|a| (a.review_id.as_str(), a)).collect()
}

/// Exactly ten positional bins of an arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecileVector(pub [f64; 10]);

impl DecileVector {
    pub fn bins(&self) -> &[f64; 10] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / 10.0
    }
}

/// Sentence `i` of `n` goes to bin `floor(10 i / n)`; each bin is the mean of
/// its sentences. Empty bins copy the next nonempty bin, and trailing empty
/// bins copy the last nonempty one.
pub fn decile_bin(arc: &EmotionArc) -> DecileVector {
    let n = arc.len();
    let mut sums = [0.0f64; 10];
    let mut counts = [0usize; 10];
    let mut lo = [f64::INFINITY; 10];
    let mut hi = [f64::NEG_INFINITY; 10];
    for (i, v) in arc.values().enumerate() {
        let b = i * 10 / n;
        sums[b] += v;
        counts[b] += 1;
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }
    // clamping keeps rounding from pushing a mean outside its members' range
    let raw: [Option<f64>; 10] = std::array::from_fn(|b| {
        (counts[b] > 0).then(|| (sums[b] / counts[b] as f64).clamp(lo[b], hi[b]))
    });

    let mut bins = [0.0f64; 10];
    let mut next: Option<f64> = None;
    for b in (0..10).rev() {
        if raw[b].is_some() {
            next = raw[b];
        }
        bins[b] = next.unwrap_or(f64::NAN);
    }
    // bin 0 is always occupied, so any NaN left is a trailing gap
    let mut prev = bins[0];
    for v in bins.iter_mut() {
        if v.is_nan() {
            *v = prev;
        }
        prev = *v;
    }
    DecileVector(bins)
}

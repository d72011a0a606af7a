//! Peak-end causal discovery.
//!
//! Each review is compared against two predictions of its overall rating:
//! the average of its emotion arc (review causes sentiment, "C1") and the mean
//! of the arc's peak and final sentence (sentiment causes review, "C2"). The
//! prediction closer to the actual star rating names the dominant process.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arc::{arc_index, EmotionArc};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, Review};
use crate::io;
use crate::score::{star_to_tens, TensScore};

/// Neutral point of the tens scale.
pub const TENS_NEUTRAL: f64 = 0.0;
/// Neutral point of the 1–5 display scale.
pub const DISPLAY_NEUTRAL: f64 = 3.0;

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyArc);
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // rounding must not move the mean of a constant arc off its value, or an
    // exact tie with the peak-end prediction would be lost
    Ok((values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi))
}

/// The value farthest from `neutral`; the earliest one wins ties.
pub fn peak_value(values: &[f64], neutral: f64) -> Result<f64> {
    let mut best: Option<f64> = None;
    for &v in values {
        match best {
            Some(b) if (v - neutral).abs() <= (b - neutral).abs() => {}
            _ => best = Some(v),
        }
    }
    best.ok_or(Error::EmptyArc)
}

pub fn peak_end_value(values: &[f64], neutral: f64) -> Result<f64> {
    let peak = peak_value(values, neutral)?;
    Ok((peak + values[values.len() - 1]) / 2.0)
}

/// `(|y - mean|, |y - peak_end|)` for an arc and rating expressed on the
/// same scale, whose neutral point is `neutral`.
pub fn alignment(values: &[f64], y: f64, neutral: f64) -> Result<(f64, f64)> {
    Ok(((y - mean(values)?).abs(), (y - peak_end_value(values, neutral)?).abs()))
}

pub fn arc_average(arc: &EmotionArc) -> TensScore {
    let v: Vec<f64> = arc.values().collect();
    TensScore::new(mean(&v).expect("arcs are nonempty")).expect("mean of in-range scores")
}

pub fn peak(arc: &EmotionArc) -> TensScore {
    let v: Vec<f64> = arc.values().collect();
    TensScore::new(peak_value(&v, TENS_NEUTRAL).expect("arcs are nonempty")).expect("in range")
}

pub fn peak_end(arc: &EmotionArc) -> TensScore {
    TensScore::new((peak(arc).value() + arc.last().value()) / 2.0).expect("in range")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    /// Distance of the rating from the arc average.
    pub lambda1: f64,
    /// Distance of the rating from the peak-end prediction.
    pub lambda2: f64,
}

impl Lambdas {
    pub fn label(&self) -> CausalLabel {
        classify(self.lambda1, self.lambda2)
    }
}

/// Both alignment distances on the tens scale.
pub fn lambdas(arc: &EmotionArc, stars: u8) -> Result<Lambdas> {
    let y = star_to_tens(stars)?.value();
    Ok(Lambdas {
        lambda1: (y - arc_average(arc).value()).abs(),
        lambda2: (y - peak_end(arc).value()).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CausalLabel {
    C1,
    C2,
    Tie,
}

impl fmt::Display for CausalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CausalLabel::C1 => "C1",
            CausalLabel::C2 => "C2",
            CausalLabel::Tie => "Tie",
        })
    }
}

impl std::str::FromStr for CausalLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C1" => Ok(CausalLabel::C1),
            "C2" => Ok(CausalLabel::C2),
            "Tie" => Ok(CausalLabel::Tie),
            other => Err(Error::InvalidArgument(format!("unknown causal label {other:?}"))),
        }
    }
}

/// The smaller distance names the process; exact equality is a tie.
pub fn classify(lambda1: f64, lambda2: f64) -> CausalLabel {
    if lambda1 < lambda2 {
        CausalLabel::C1
    } else if lambda2 < lambda1 {
        CausalLabel::C2
    } else {
        CausalLabel::Tie
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalAssessment {
    pub review_id: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub label: CausalLabel,
}

impl CausalAssessment {
    pub fn assess(arc: &EmotionArc, review: &Review) -> Result<Self> {
        let l = lambdas(arc, review.stars)?;
        Ok(CausalAssessment {
            review_id: review.id.clone(),
            lambda1: l.lambda1,
            lambda2: l.lambda2,
            label: l.label(),
        })
    }

    pub fn lambda1_display(&self) -> f64 {
        self.lambda1 / 5.0
    }

    pub fn lambda2_display(&self) -> f64 {
        self.lambda2 / 5.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    #[default]
    ToC1,
    ToC2,
    Drop,
}

impl TiePolicy {
    /// Which subset a label lands in, if any.
    pub fn route(self, label: CausalLabel) -> Option<Subset> {
        match (label, self) {
            (CausalLabel::C1, _) | (CausalLabel::Tie, TiePolicy::ToC1) => Some(Subset::C1),
            (CausalLabel::C2, _) | (CausalLabel::Tie, TiePolicy::ToC2) => Some(Subset::C2),
            (CausalLabel::Tie, TiePolicy::Drop) => None,
        }
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "to_c1" => Ok(TiePolicy::ToC1),
            "to_c2" => Ok(TiePolicy::ToC2),
            "drop" => Ok(TiePolicy::Drop),
            other => Err(Error::InvalidArgument(format!("unknown tie policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    All,
    C1,
    C2,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "All",
            Subset::C1 => "C1",
            Subset::C2 => "C2",
        })
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Subset::All),
            "c1" => Ok(Subset::C1),
            "c2" => Ok(Subset::C2),
            other => Err(Error::InvalidArgument(format!("unknown subset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub c1: Corpus,
    pub c2: Corpus,
    /// One entry per review, sorted by review id.
    pub assessments: Vec<CausalAssessment>,
    pub tie_policy: TiePolicy,
}

impl Partition {
    /// Re-applies a tie policy to existing assessments.
    pub fn from_assessments(
        corpus: &Corpus,
        mut assessments: Vec<CausalAssessment>,
        tie_policy: TiePolicy,
    ) -> Result<Self> {
        let labels: HashMap<&str, CausalLabel> =
            assessments.iter().map(|a| (a.review_id.as_str(), a.label)).collect();
        let (mut c1, mut c2) = (Vec::new(), Vec::new());
        for r in &corpus.reviews {
            let label = *labels
                .get(r.id.as_str())
                .ok_or_else(|| Error::MissingArc(r.id.clone()))?;
            match tie_policy.route(label) {
                Some(Subset::C1) => c1.push(r.clone()),
                Some(Subset::C2) => c2.push(r.clone()),
                _ => {}
            }
        }
        assessments.sort_by(|a, b| a.review_id.cmp(&b.review_id));
        Ok(Partition {
            c1: Corpus::new(format!("{}-c1", corpus.name), c1),
            c2: Corpus::new(format!("{}-c2", corpus.name), c2),
            assessments,
            tie_policy,
        })
    }

    /// Subset membership of a review, `None` when dropped as a tie.
    pub fn subset_of(&self, review_id: &str) -> Option<Subset> {
        self.assessments
            .binary_search_by(|a| a.review_id.as_str().cmp(review_id))
            .ok()
            .and_then(|i| self.tie_policy.route(self.assessments[i].label))
    }

    pub fn contains(&self, subset: Subset, review_id: &str) -> bool {
        match subset {
            Subset::All => self.assessments.binary_search_by(|a| a.review_id.as_str().cmp(review_id)).is_ok(),
            s => self.subset_of(review_id) == Some(s),
        }
    }
}

pub fn assess_corpus(corpus: &Corpus, arcs: &[EmotionArc]) -> Result<Vec<CausalAssessment>> {
    let index = arc_index(arcs);
    corpus
        .reviews
        .iter()
        .map(|r| {
            let arc = index.get(r.id.as_str()).ok_or_else(|| Error::MissingArc(r.id.clone()))?;
            CausalAssessment::assess(arc, r)
        })
        .collect()
}

pub fn partition(corpus: &Corpus, arcs: &[EmotionArc], tie_policy: TiePolicy) -> Result<Partition> {
    Partition::from_assessments(corpus, assess_corpus(corpus, arcs)?, tie_policy)
}

pub const ASSESSMENT_HEADER: [&str; 6] = [
    "review_id",
    "lambda1_tens",
    "lambda2_tens",
    "lambda1_display",
    "lambda2_display",
    "label",
];

pub fn assessments_to_csv(assessments: &[CausalAssessment]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ASSESSMENT_HEADER)?;
    for a in assessments {
        w.write_record([
            a.review_id.clone(),
            io::fmt6(a.lambda1),
            io::fmt6(a.lambda2),
            io::fmt6(a.lambda1_display()),
            io::fmt6(a.lambda2_display()),
            a.label.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn save_assessments(assessments: &[CausalAssessment], path: &Path) -> Result<()> {
    io::write_atomic(path, assessments_to_csv(assessments)?.as_bytes())
}

pub fn parse_assessments(text: &str) -> Result<Vec<CausalAssessment>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |reason: &str| Error::Malformed { line, reason: reason.to_string() };
        if rec.len() != ASSESSMENT_HEADER.len() {
            return Err(bad("wrong column count"));
        }
        out.push(CausalAssessment {
            review_id: rec[0].to_string(),
            lambda1: rec[1].parse().map_err(|_| bad("bad lambda1_tens"))?,
            lambda2: rec[2].parse().map_err(|_| bad("bad lambda2_tens"))?,
            label: rec[5].parse()?,
        });
    }
    Ok(out)
}

pub fn load_assessments(path: &Path) -> Result<Vec<CausalAssessment>> {
    parse_assessments(&io::read_to_string(path)?)
}

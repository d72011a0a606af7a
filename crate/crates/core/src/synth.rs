//! Synthetic corpora with a known generating process.
//!
//! Arcs are sampled from a bank of lexicon-scored sentences. The star rating
//! is then derived from the arc average (process C1) or from the peak-end mean
//! (process C2), perturbed by Gaussian noise on the tens scale and snapped to
//! the star grid. Running discovery on such a corpus should recover the
//! process that produced it.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arc::EmotionArc;
use crate::causal::{self, CausalLabel};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, Review};
use crate::io;
use crate::score::{Lexicon, TensScore};

const BUNDLED_BANK: &str = include_str!("../data/synth_bank.txt");

/// Largest allowed gap between consecutive bank scores, and between the
/// extreme bank scores and the ends of the tens scale.
pub const MAX_BANK_GAP: f64 = 2.5;

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    C1,
    C2,
}

impl Process {
    pub fn label(self) -> CausalLabel {
        match self {
            Process::C1 => CausalLabel::C1,
            Process::C2 => CausalLabel::C2,
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.label().fmt(f)
    }
}

impl std::str::FromStr for Process {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Process::C1),
            "C2" => Ok(Process::C2),
            other => Err(Error::InvalidArgument(format!("unknown process {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_reviews: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub process: Process,
    /// Standard deviation of the rating noise, tens scale.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Arcs whose average and peak-end predictions lie closer than this are
    /// resampled. At 5.0 (one star step) snapping to the star grid can never
    /// flip the recovered label when the noise is zero.
    pub min_separation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_reviews: 1000,
            min_sentences: 5,
            max_sentences: 12,
            process: Process::C2,
            noise_sigma: 0.0,
            seed: 0,
            min_separation: 5.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_reviews == 0 {
            return bad("n_reviews must be >= 1");
        }
        if self.min_sentences < 5 {
            return bad("min_sentences must be >= 5");
        }
        if self.max_sentences < self.min_sentences {
            return bad("max_sentences must be >= min_sentences");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be a finite value >= 0");
        }
        if !(self.min_separation >= 0.0) {
            return bad("min_separation must be >= 0");
        }
        Ok(())
    }
}

/// Sentences with their known tens-scale scores.
#[derive(Debug, Clone)]
pub struct SentenceBank {
    entries: Vec<(String, TensScore)>,
}

impl SentenceBank {
    /// Scores every line with `lexicon`; blank and `#` lines are skipped.
    pub fn from_lines(text: &str, lexicon: &Lexicon) -> Self {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| (l.to_string(), lexicon.score(l)))
            .collect();
        SentenceBank { entries }
    }

    pub fn from_entries(entries: Vec<(String, TensScore)>) -> Self {
        SentenceBank { entries }
    }

    /// The bundled bank scored with the bundled lexicon.
    pub fn bundled() -> Self {
        Self::from_lines(BUNDLED_BANK, &Lexicon::bundled())
    }

    pub fn load(path: &Path, lexicon: &Lexicon) -> Result<Self> {
        Ok(Self::from_lines(&io::read_to_string(path)?, lexicon))
    }

    pub fn entries(&self) -> &[(String, TensScore)] {
        &self.entries
    }

    /// Checks that bank scores cover `[-10, 10]` without gaps wider than
    /// [`MAX_BANK_GAP`].
    pub fn check_coverage(&self) -> Result<()> {
        let mut scores: Vec<f64> = self.entries.iter().map(|(_, s)| s.value()).collect();
        if scores.is_empty() {
            return Err(Error::InvalidArgument("sentence bank is empty".into()));
        }
        scores.sort_by(f64::total_cmp);
        let mut points = vec![-10.0];
        points.extend(scores);
        points.push(10.0);
        if let Some(w) = points.windows(2).find(|w| w[1] - w[0] > MAX_BANK_GAP + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "sentence bank leaves a gap from {:.3} to {:.3} on the tens scale",
                w[0], w[1]
            )));
        }
        Ok(())
    }
}

/// Noise-free tens-scale rating a process assigns to an arc.
pub fn target_rating(values: &[f64], process: Process) -> Result<f64> {
    match process {
        Process::C1 => causal::mean(values),
        Process::C2 => causal::peak_end_value(values, causal::TENS_NEUTRAL),
    }
}

/// Nearest point of the star grid {-10, -5, 0, 5, 10}; halfway values go
/// toward neutral. Returns stars 1..=5.
pub fn snap_to_stars(y_tens: f64) -> u8 {
    let q = y_tens.clamp(-10.0, 10.0) / 5.0;
    let r = if (q - q.trunc()).abs() == 0.5 { q.trunc() } else { q.round() };
    (r as i64 + 3) as u8
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub arcs: Vec<EmotionArc>,
    /// Generating process per review, in corpus order.
    pub truth: Vec<(String, Process)>,
}

pub fn gen_synthetic(config: &SyntheticConfig, bank: &SentenceBank) -> Result<SyntheticCorpus> {
    config.validate()?;
    bank.check_coverage()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_reviews.to_string().len().max(5);
    // Arc files keep six decimals. Generating from the rounded values means a
    // corpus read back from disk has exactly the arcs its ratings came from;
    // otherwise a near-tie between two peaks can resolve differently.
    let entries: Vec<(&str, TensScore)> = bank
        .entries()
        .iter()
        .map(|(text, s)| Ok((text.as_str(), TensScore::new(io::fmt6(s.value()).parse().expect("formatted f64"))?)))
        .collect::<Result<_>>()?;

    let mut reviews = Vec::with_capacity(config.n_reviews);
    let mut arcs = Vec::with_capacity(config.n_reviews);
    let mut truth = Vec::with_capacity(config.n_reviews);
    for k in 0..config.n_reviews {
        let id = format!("syn-{:0width$}", k + 1);
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let n = rng.random_range(config.min_sentences..=config.max_sentences);
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..entries.len())).collect();
            let values: Vec<f64> = picks.iter().map(|&i| entries[i].1.value()).collect();
            let avg = target_rating(&values, Process::C1)?;
            let pe = target_rating(&values, Process::C2)?;
            if (avg - pe).abs() >= config.min_separation {
                accepted = Some((picks, avg, pe));
                break;
            }
        }
        let (picks, avg, pe) = accepted.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no arc with separation >= {} found in {MAX_ATTEMPTS} draws",
                config.min_separation
            ))
        })?;
        // drawn unconditionally so the arcs do not depend on sigma
        let z: f64 = rng.sample(StandardNormal);
        let target = match config.process {
            Process::C1 => avg,
            Process::C2 => pe,
        };
        let stars = snap_to_stars(target + config.noise_sigma * z);

        let text = picks.iter().map(|&i| entries[i].0).collect::<Vec<_>>().join(" ");
        let scores = picks.iter().map(|&i| entries[i].1).collect();
        arcs.push(EmotionArc::new(id.clone(), scores)?);
        reviews.push(Review { id: id.clone(), text, stars, title: None });
        truth.push((id, config.process));
    }
    let name = format!("synthetic-{}-seed{}", config.process, config.seed);
    Ok(SyntheticCorpus { corpus: Corpus::new(name, reviews), arcs, truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// Fraction of non-tie reviews labelled with their true process; 1.0
    /// when every review is a tie.
    pub rate: f64,
    pub evaluated: usize,
    pub matched: usize,
    pub ties: usize,
}

pub fn validate_recovery(
    corpus: &Corpus,
    arcs: &[EmotionArc],
    truth: &[(String, Process)],
) -> Result<Recovery> {
    let assessments = causal::assess_corpus(corpus, arcs)?;
    let labels: std::collections::HashMap<&str, CausalLabel> =
        assessments.iter().map(|a| (a.review_id.as_str(), a.label)).collect();
    let (mut evaluated, mut matched, mut ties) = (0, 0, 0);
    for (id, process) in truth {
        let label = *labels.get(id.as_str()).ok_or_else(|| Error::MissingArc(id.clone()))?;
        if label == CausalLabel::Tie {
            ties += 1;
            continue;
        }
        evaluated += 1;
        if label == process.label() {
            matched += 1;
        }
    }
    let rate = if evaluated == 0 { 1.0 } else { matched as f64 / evaluated as f64 };
    Ok(Recovery { rate, evaluated, matched, ties })
}

pub fn truth_to_csv(truth: &[(String, Process)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["review_id", "process"])?;
    for (id, p) in truth {
        w.write_record([id.as_str(), &p.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn parse_truth(text: &str) -> Result<Vec<(String, Process)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Malformed { line: out.len() + 2, reason: "expected review_id,process".into() });
        }
        out.push((rec[0].to_string(), rec[1].parse()?));
    }
    Ok(out)
}

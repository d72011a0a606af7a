//! Corpus statistics per causal subset and the Mann-Whitney U test.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::causal::{CausalAssessment, Partition, Subset};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, Review};
use crate::score::tokenize;
use crate::segment::Segmenter;

/// One row of the dataset table. Means are `None` for an empty subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub subset: Subset,
    pub n_samples: usize,
    /// Share of the whole corpus, in percent.
    pub pct_of_corpus: Option<f64>,
    /// Shares of this row's reviews routed to C1 and C2, in percent.
    pub pct_c1: Option<f64>,
    pub pct_c2: Option<f64>,
    pub sents_per_review: Option<f64>,
    pub words_per_sent: Option<f64>,
    pub vocab_size: usize,
    /// Mean star rating, which is already on the 1–5 display scale.
    pub avg_sentiment_display: Option<f64>,
    pub avg_lambda1: Option<f64>,
    pub avg_lambda2: Option<f64>,
    pub avg_lambda1_display: Option<f64>,
    pub avg_lambda2_display: Option<f64>,
}

fn ratio(num: f64, den: usize) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

fn subset_reviews<'a>(corpus: &'a Corpus, partition: &'a Partition, subset: Subset) -> &'a [Review] {
    match subset {
        Subset::All => &corpus.reviews,
        Subset::C1 => &partition.c1.reviews,
        Subset::C2 => &partition.c2.reviews,
    }
}

pub fn dataset_stats(
    corpus: &Corpus,
    partition: &Partition,
    segmenter: &dyn Segmenter,
    subset: Subset,
) -> Result<DatasetStats> {
    let reviews = subset_reviews(corpus, partition, subset);
    let by_id: HashMap<&str, &CausalAssessment> =
        partition.assessments.iter().map(|a| (a.review_id.as_str(), a)).collect();
    let n = reviews.len();

    let (mut sentences, mut words, mut stars) = (0usize, 0usize, 0.0f64);
    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    let (mut in_c1, mut in_c2) = (0usize, 0usize);
    let mut vocab: HashSet<String> = HashSet::new();
    for r in reviews {
        let split = segmenter.split(&r.text);
        sentences += split.len();
        words += split.iter().map(|s| s.split_whitespace().count()).sum::<usize>();
        vocab.extend(tokenize(&r.text));
        stars += r.stars as f64;
        let a = by_id.get(r.id.as_str()).ok_or_else(|| Error::MissingArc(r.id.clone()))?;
        l1 += a.lambda1;
        l2 += a.lambda2;
        match partition.subset_of(&r.id) {
            Some(Subset::C1) => in_c1 += 1,
            Some(Subset::C2) => in_c2 += 1,
            _ => {}
        }
    }
    Ok(DatasetStats {
        subset,
        n_samples: n,
        pct_of_corpus: ratio(100.0 * n as f64, corpus.len()),
        pct_c1: ratio(100.0 * in_c1 as f64, n),
        pct_c2: ratio(100.0 * in_c2 as f64, n),
        sents_per_review: ratio(sentences as f64, n),
        words_per_sent: ratio(words as f64, sentences),
        vocab_size: vocab.len(),
        avg_sentiment_display: ratio(stars, n),
        avg_lambda1: ratio(l1, n),
        avg_lambda2: ratio(l2, n),
        avg_lambda1_display: ratio(l1 / 5.0, n),
        avg_lambda2_display: ratio(l2 / 5.0, n),
    })
}

/// Rows for All, C1 and C2.
pub fn stats_table(corpus: &Corpus, partition: &Partition, segmenter: &dyn Segmenter) -> Result<Vec<DatasetStats>> {
    [Subset::All, Subset::C1, Subset::C2]
        .into_iter()
        .map(|s| dataset_stats(corpus, partition, segmenter, s))
        .collect()
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn stats_to_table(rows: &[DatasetStats]) -> String {
    let header = [
        "subset", "n", "%corpus", "%C1", "%C2", "sents/rev", "words/sent", "vocab", "avg_stars", "lambda1", "lambda2",
        "lambda1_d", "lambda2_d",
    ];
    let body: Vec<[String; 13]> = rows
        .iter()
        .map(|r| {
            [
                r.subset.to_string(),
                r.n_samples.to_string(),
                cell(r.pct_of_corpus, 1),
                cell(r.pct_c1, 1),
                cell(r.pct_c2, 1),
                cell(r.sents_per_review, 2),
                cell(r.words_per_sent, 2),
                r.vocab_size.to_string(),
                cell(r.avg_sentiment_display, 2),
                cell(r.avg_lambda1, 3),
                cell(r.avg_lambda2, 3),
                cell(r.avg_lambda1_display, 3),
                cell(r.avg_lambda2_display, 3),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|row| row[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect::<Vec<_>>()
            .join("  ")
            + "\n"
    };
    let mut out = line(header.to_vec());
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UTestMethod {
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U for the first sample: pairs where it is larger, ties counting half.
    pub u_statistic: f64,
    pub z: f64,
    pub p_value: f64,
    pub method: UTestMethod,
}

/// Midranks (1-based) of `values`; tied values share the mean of their ranks.
/// Also returns the sum of `t^3 - t` over tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test by the normal approximation with tie and
/// continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Mann-Whitney needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN in Mann-Whitney sample".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let (z, p) = if var <= 0.0 {
        (0.0, 1.0)
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (z, (2.0 * normal.sf(z)).min(1.0))
    };
    Ok(UTestResult { u_statistic: u, z, p_value: p, method: UTestMethod::NormalApprox })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaUTests {
    pub n_c1: usize,
    pub n_c2: usize,
    pub lambda1: Option<UTestResult>,
    pub lambda2: Option<UTestResult>,
}

/// Compares the λ1 and λ2 distributions of the C1 and C2 subsets. A test is
/// `None` when either subset is empty.
pub fn lambda_utests(partition: &Partition) -> Result<LambdaUTests> {
    let (mut a1, mut a2, mut b1, mut b2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for a in &partition.assessments {
        match partition.subset_of(&a.review_id) {
            Some(Subset::C1) => {
                a1.push(a.lambda1);
                a2.push(a.lambda2);
            }
            Some(Subset::C2) => {
                b1.push(a.lambda1);
                b2.push(a.lambda2);
            }
            _ => {}
        }
    }
    let test = |x: &[f64], y: &[f64]| -> Result<Option<UTestResult>> {
        if x.is_empty() || y.is_empty() {
            Ok(None)
        } else {
            mann_whitney_u(x, y).map(Some)
        }
    };
    Ok(LambdaUTests { n_c1: a1.len(), n_c2: b1.len(), lambda1: test(&a1, &b1)?, lambda2: test(&a2, &b2)? })
}

/// Per-review λ values with subset membership, for external plotting.
pub fn lambdas_to_csv(partition: &Partition) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["review_id", "subset", "lambda1_tens", "lambda2_tens", "lambda1_display", "lambda2_display"])?;
    for a in &partition.assessments {
        let subset = partition.subset_of(&a.review_id).map_or_else(|| "dropped".to_string(), |s| s.to_string());
        w.write_record([
            a.review_id.clone(),
            subset,
            crate::io::fmt6(a.lambda1),
            crate::io::fmt6(a.lambda2),
            crate::io::fmt6(a.lambda1_display()),
            crate::io::fmt6(a.lambda2_display()),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

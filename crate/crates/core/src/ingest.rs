//! Corpus loading, normalization, filtering and sampling.

use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::segment::Segmenter;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    /// Normalized text: title-prefixed when the source record had a title.
    pub text: String,
    pub stars: u8,
    #[serde(default, skip_serializing)]
    pub title: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub reviews: Vec<Review>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, reviews: Vec<Review>) -> Self {
        Corpus { name: name.into(), reviews }
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Review> {
        self.reviews.iter().find(|r| r.id == id)
    }

    /// JSONL with `id`, `text` and `stars` per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.reviews {
            out.push_str(&serde_json::to_string(r).expect("review serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// Guesses from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    stars: i64,
    #[serde(default)]
    title: Option<String>,
}

/// Joins a title onto review text. Titles ending in terminal punctuation are
/// joined with a single space, otherwise with ". ".
pub fn concat_title(title: &str, text: &str) -> String {
    let title = title.trim();
    if title.is_empty() {
        return text.to_string();
    }
    if title.ends_with(['.', '!', '?']) {
        format!("{title} {text}")
    } else {
        format!("{title}. {text}")
    }
}

fn normalize(raw: RawRecord, line: usize) -> Result<Review> {
    if !(1..=5).contains(&raw.stars) {
        return Err(Error::StarsAtLine { line, stars: raw.stars });
    }
    if raw.text.trim().is_empty() {
        return Err(Error::Malformed { line, reason: "empty text".into() });
    }
    let id = match raw.id {
        Some(id) if !id.is_empty() => id,
        _ => format!("line-{line}"),
    };
    let title = raw.title.filter(|t| !t.trim().is_empty());
    let text = match &title {
        Some(t) => concat_title(t, &raw.text),
        None => raw.text,
    };
    Ok(Review { id, text, stars: raw.stars as u8, title })
}

pub fn parse_jsonl(name: &str, text: &str) -> Result<Corpus> {
    let mut reviews = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| Error::Malformed { line: i + 1, reason: e.to_string() })?;
        reviews.push(normalize(raw, i + 1)?);
    }
    finish(name, reviews)
}

pub fn parse_csv(name: &str, text: &str) -> Result<Corpus> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let mut reviews = Vec::new();
    for record in reader.deserialize::<RawRecord>() {
        let raw = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return Err(Error::Malformed { line, reason: e.to_string() });
            }
        };
        // Header is line 1, so data rows count from 2.
        let line = reviews.len() + 2;
        reviews.push(normalize(raw, line)?);
    }
    finish(name, reviews)
}

fn finish(name: &str, reviews: Vec<Review>) -> Result<Corpus> {
    let mut seen = HashSet::new();
    for r in &reviews {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(Corpus::new(name, reviews))
}

pub fn load_reviews(path: &Path, format: InputFormat) -> Result<Corpus> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    let text = io::read_to_string(path)?;
    match format {
        InputFormat::Jsonl => parse_jsonl(name, &text),
        InputFormat::Csv => parse_csv(name, &text),
    }
}

/// Keeps reviews with at least `k` sentences, preserving order.
pub fn filter_min_sentences(corpus: &Corpus, segmenter: &dyn Segmenter, k: usize) -> Result<Corpus> {
    if k == 0 {
        return Err(Error::InvalidArgument("minimum sentence count must be >= 1".into()));
    }
    let reviews = corpus
        .reviews
        .iter()
        .filter(|r| segmenter.count(&r.text) >= k)
        .cloned()
        .collect();
    Ok(Corpus::new(corpus.name.clone(), reviews))
}

/// Uniform sample of `n` reviews without replacement, sorted by id.
pub fn sample_corpus(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} reviews from a corpus of {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reviews: Vec<Review> = rand::seq::index::sample(&mut rng, corpus.len(), n)
        .into_iter()
        .map(|i| corpus.reviews[i].clone())
        .collect();
    reviews.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus::new(corpus.name.clone(), reviews))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::RuleSegmenter;
    use proptest::prelude::*;

    #[test]
    fn jsonl_direct_mapping() {
        let c = parse_jsonl("t", r#"{"id":"a","text":"Good.","stars":5}"#).unwrap();
        assert_eq!(
            c.reviews,
            [Review { id: "a".into(), text: "Good.".into(), stars: 5, title: None }]
        );
    }

    #[test]
    fn title_is_prepended() {
        let c = parse_jsonl("t", r#"{"id":"b","title":"Great","text":"Loved it.","stars":4}"#).unwrap();
        assert_eq!(c.reviews[0].text, "Great. Loved it.");
        assert_eq!(c.reviews[0].title.as_deref(), Some("Great"));
        let c = parse_jsonl("t", r#"{"id":"b","title":"Great!","text":"Loved it.","stars":4}"#).unwrap();
        assert_eq!(c.reviews[0].text, "Great! Loved it.");
        // round trip: serialized text is already normalized, title is not re-applied
        let again = parse_jsonl("t", &c.to_jsonl()).unwrap();
        assert_eq!(again.reviews[0].text, "Great! Loved it.");
        assert_eq!(again.reviews[0].id, "b");
    }

    #[test]
    fn stars_out_of_range_names_line() {
        let input = "{\"id\":\"a\",\"text\":\"x\",\"stars\":5}\n{\"id\":\"b\",\"text\":\"y\",\"stars\":6}\n";
        let err = parse_jsonl("t", input).unwrap_err();
        assert_eq!(err.to_string(), "stars out of range at line 2: 6");
    }

    #[test]
    fn malformed_names_line() {
        let err = parse_jsonl("t", "\n{\"text\": 3}").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_id_is_synthesized() {
        let c = parse_jsonl("t", "{\"text\":\"x\",\"stars\":1}\n\n{\"text\":\"y\",\"stars\":2}").unwrap();
        assert_eq!(c.reviews[0].id, "line-1");
        assert_eq!(c.reviews[1].id, "line-3");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = "{\"id\":\"a\",\"text\":\"x\",\"stars\":5}\n{\"id\":\"a\",\"text\":\"y\",\"stars\":4}";
        assert!(matches!(parse_jsonl("t", input), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn csv_with_header_columns() {
        let input = "id,title,text,stars\nx,,Fine.,3\ny,Wow,\"Great, really.\",5\n";
        let c = parse_csv("t", input).unwrap();
        assert_eq!(c.reviews[0].text, "Fine.");
        assert_eq!(c.reviews[1].text, "Wow. Great, really.");
        let err = parse_csv("t", "id,text,stars\nx,Fine.,0\n").unwrap_err();
        assert_eq!(err.to_string(), "stars out of range at line 2: 0");
        let c = parse_csv("t", "text,stars\nFine.,3\n").unwrap();
        assert_eq!(c.reviews[0].id, "line-2");
    }

    fn review(id: &str, text: &str) -> Review {
        Review { id: id.into(), text: text.into(), stars: 3, title: None }
    }

    #[test]
    fn filter_boundary() {
        let c = Corpus::new(
            "t",
            vec![
                review("four", "A. B. C. D."),
                review("five", "A. B. C. D. E."),
                review("six", "A. B. C. D. E. F."),
            ],
        );
        let kept = filter_min_sentences(&c, &RuleSegmenter, 5).unwrap();
        let ids: Vec<_> = kept.reviews.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["five", "six"]);
        assert!(filter_min_sentences(&Corpus::default(), &RuleSegmenter, 5).unwrap().is_empty());
        assert!(filter_min_sentences(&c, &RuleSegmenter, 0).is_err());
    }

    fn five() -> Corpus {
        Corpus::new("t", ["e", "b", "d", "a", "c"].iter().map(|id| review(id, "x")).collect())
    }

    #[test]
    fn sample_whole_corpus_sorted() {
        let s = sample_corpus(&five(), 5, 1).unwrap();
        let ids: Vec<_> = s.reviews.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d", "e"]);
        assert!(sample_corpus(&five(), 6, 1).is_err());
    }

    #[test]
    fn sample_is_deterministic() {
        let a = sample_corpus(&five(), 2, 7).unwrap();
        let b = sample_corpus(&five(), 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    proptest! {
        #[test]
        fn filter_idempotent(counts in proptest::collection::vec(0usize..9, 0..20), k in 1usize..8) {
            let c = Corpus::new("p", counts.iter().enumerate()
                .map(|(i, &n)| review(&format!("r{i}"), &"Yes. ".repeat(n)))
                .collect());
            let once = filter_min_sentences(&c, &RuleSegmenter, k).unwrap();
            let twice = filter_min_sentences(&once, &RuleSegmenter, k).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn sample_is_subset(n in 0usize..=5, seed in any::<u64>()) {
            let c = five();
            let s = sample_corpus(&c, n, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            for r in &s.reviews {
                prop_assert!(c.get(&r.id).is_some());
            }
            prop_assert!(s.reviews.windows(2).all(|w| w[0].id < w[1].id));
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{Scorer, TensScore};
use crate::error::{Error, Result};
use crate::io;
use crate::segment::SentenceList;

/// Sentence scores keyed by `(review_id, sentence_index)`.
///
/// On disk: TSV `review_id<TAB>sentence_index<TAB>score`, six decimals,
/// sorted by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreCache {
    entries: BTreeMap<(String, usize), f64>,
}

impl ScoreCache {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        Self::parse(&io::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Malformed { line: i + 1, reason: reason.to_string() };
            let mut cols = line.split('\t');
            let (Some(id), Some(idx), Some(score), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected review_id<TAB>sentence_index<TAB>score"));
            };
            let idx: usize = idx.trim().parse().map_err(|_| bad("bad sentence index"))?;
            let score: f64 = score.trim().parse().map_err(|_| bad("bad score"))?;
            if !(-10.0..=10.0).contains(&score) {
                return Err(bad("score outside [-10, 10]"));
            }
            entries.insert((id.to_string(), idx), score);
        }
        Ok(ScoreCache { entries })
    }

    pub fn get(&self, review_id: &str, index: usize) -> Option<TensScore> {
        self.entries
            .get(&(review_id.to_string(), index))
            .map(|&v| TensScore::new(v).expect("validated on insert"))
    }

    pub fn insert(&mut self, review_id: &str, index: usize, score: TensScore) {
        self.entries.insert((review_id.to_string(), index), score.value());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ((id, idx), score) in &self.entries {
            out.push_str(&format!("{id}\t{idx}\t{}\n", io::fmt6(*score)));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Read-only scorer answering purely from a cache.
#[derive(Debug)]
pub struct ScoreCacheScorer {
    cache: ScoreCache,
}

impl ScoreCacheScorer {
    pub fn new(cache: ScoreCache) -> Self {
        ScoreCacheScorer { cache }
    }
}

impl Scorer for ScoreCacheScorer {
    fn score_sentences(&self, review_id: &str, sentences: &SentenceList) -> Result<Vec<TensScore>> {
        (0..sentences.len())
            .map(|i| {
                self.cache
                    .get(review_id, i)
                    .ok_or_else(|| Error::CacheMiss(format!("({review_id}, {i})")))
            })
            .collect()
    }
}

/// Write-through cache in front of another scorer. Hits skip the inner
/// scorer entirely; new entries are persisted on [`Scorer::flush`].
pub struct CachingScorer {
    inner: Box<dyn Scorer>,
    path: PathBuf,
    cache: Mutex<ScoreCache>,
}

impl CachingScorer {
    pub fn open(inner: Box<dyn Scorer>, path: &Path) -> Result<Self> {
        Ok(CachingScorer {
            inner,
            path: path.to_path_buf(),
            cache: Mutex::new(ScoreCache::load(path)?),
        })
    }
}

impl Scorer for CachingScorer {
    fn score_sentences(&self, review_id: &str, sentences: &SentenceList) -> Result<Vec<TensScore>> {
        {
            let cache = self.cache.lock().expect("cache lock");
            let hits: Option<Vec<_>> = (0..sentences.len()).map(|i| cache.get(review_id, i)).collect();
            if let Some(hits) = hits {
                return Ok(hits);
            }
        }
        let scores = self.inner.score_sentences(review_id, sentences)?;
        let mut cache = self.cache.lock().expect("cache lock");
        for (i, s) in scores.iter().enumerate() {
            cache.insert(review_id, i, *s);
        }
        Ok(scores)
    }

    fn flush(&self) -> Result<()> {
        self.inner.flush()?;
        self.cache.lock().expect("cache lock").save(&self.path)
    }
}

//! Completion-endpoint client, answer parsing and classification metrics.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::causal::{Partition, Subset};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, Review};
use crate::io;
use crate::net::{self, RetryPolicy};
use crate::prompts::{render_text, PromptKind, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Unset or empty
    /// means no `Authorization` header is sent.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retry_base_delay_s: f64,
    pub concurrency: usize,
    /// Use the chat-style endpoint with a single user message.
    pub chat: bool,
    pub cache_path: Option<PathBuf>,
    /// Optional cap on inserted review length, cut at a word boundary.
    pub max_review_chars: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model_name: "model".into(),
            api_key_env: None,
            temperature: 0.0,
            max_tokens: 8,
            timeout_s: 60.0,
            max_retries: 5,
            retry_base_delay_s: 1.0,
            concurrency: 4,
            chat: false,
            cache_path: None,
            max_review_chars: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::InvalidArgument("base_url is empty".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::InvalidArgument("concurrency must be >= 1".into()));
        }
        if !(self.timeout_s > 0.0) || !(self.retry_base_delay_s >= 0.0) {
            return Err(Error::InvalidArgument("timeout and retry delay must be positive".into()));
        }
        Ok(())
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_secs_f64(self.retry_base_delay_s),
            ..RetryPolicy::default()
        }
    }
}

pub fn cache_key(model_name: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    completion: String,
}

/// Append-only JSONL completion cache. Later lines win on reload.
pub struct CompletionCache {
    path: PathBuf,
    state: Mutex<(HashMap<String, String>, Option<File>)>,
}

impl CompletionCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        if path.exists() {
            for line in io::read_to_string(path)?.lines() {
                // a torn final line from an interrupted run is skipped
                if let Ok(entry) = serde_json::from_str::<CacheLine>(line) {
                    map.insert(entry.key, entry.completion);
                }
            }
        }
        Ok(CompletionCache { path: path.to_path_buf(), state: Mutex::new((map, None)) })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.state.lock().expect("cache lock").0.get(key).cloned()
    }

    pub fn insert(&self, key: &str, completion: &str) -> Result<()> {
        let mut guard = self.state.lock().expect("cache lock");
        let (map, file) = &mut *guard;
        if map.get(key).is_some_and(|c| c == completion) {
            return Ok(());
        }
        if file.is_none() {
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| Error::io(&self.path, e))?;
            *file = Some(f);
        }
        let line = serde_json::to_string(&CacheLine { key: key.into(), completion: completion.into() })?;
        let f = file.as_mut().expect("opened above");
        writeln!(f, "{line}").map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))?;
        map.insert(key.to_string(), completion.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<ChatMessage>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

pub struct CompletionClient {
    config: ModelConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    cache: Option<CompletionCache>,
    requests: AtomicUsize,
}

impl CompletionClient {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let cache = config.cache_path.as_deref().map(CompletionCache::open).transpose()?;
        let agent = net::agent(Some(Duration::from_secs_f64(config.timeout_s)));
        Ok(CompletionClient { config, agent, api_key, cache, requests: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn complete(&self, prompt: &str) -> Result<String> {
        let key = cache_key(&self.config.model_name, prompt);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let text = self.request(prompt)?;
        if let Some(cache) = &self.cache {
            cache.insert(&key, &text)?;
        }
        Ok(text)
    }

    fn request(&self, prompt: &str) -> Result<String> {
        let base = self.config.base_url.trim_end_matches('/');
        let (url, body) = if self.config.chat {
            (
                format!("{base}/chat/completions"),
                json!({
                    "model": self.config.model_name,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": self.config.temperature,
                    "max_tokens": self.config.max_tokens,
                }),
            )
        } else {
            (
                format!("{base}/completions"),
                json!({
                    "model": self.config.model_name,
                    "prompt": prompt,
                    "temperature": self.config.temperature,
                    "max_tokens": self.config.max_tokens,
                }),
            )
        };
        let resp: CompletionResponse = net::post_json_counted(
            &self.agent,
            &url,
            self.api_key.as_deref(),
            &body,
            &self.config.retry_policy(),
            Some(&self.requests),
        )?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::MalformedResponse("response has no choices".into()))?;
        let text = if self.config.chat {
            choice.message.and_then(|m| m.content)
        } else {
            choice.text
        };
        text.ok_or_else(|| Error::MalformedResponse("choice carries no completion text".into()))
    }
}

/// First character in `1..=5` that is not part of a longer digit run.
pub fn parse_label(completion: &str) -> Option<u8> {
    let chars: Vec<char> = completion.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        if i - start == 1 && ('1'..='5').contains(&chars[start]) {
            return Some(chars[start] as u8 - b'0');
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub subset: Subset,
    pub review_id: String,
    pub prompt_kind: PromptKind,
    pub paraphrase_index: usize,
    pub raw_completion: String,
    /// `None` is a parse failure.
    pub parsed: Option<u8>,
    pub gold: u8,
    /// Set when the request itself failed and the run kept going.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub subsets: Vec<Subset>,
    pub kinds: Vec<PromptKind>,
    pub keep_going: bool,
}

fn subset_corpus<'a>(corpus: &'a Corpus, partition: &'a Partition, subset: Subset) -> &'a Corpus {
    match subset {
        Subset::All => corpus,
        Subset::C1 => &partition.c1,
        Subset::C2 => &partition.c2,
    }
}

/// Renders, completes and parses every selected (subset, review, kind,
/// paraphrase). Records come back ordered by subset, review id, kind and
/// paraphrase regardless of the request concurrency. Each distinct prompt is
/// requested at most once per run.
pub fn run_eval(
    corpus: &Corpus,
    partition: &Partition,
    templates: &[PromptTemplate],
    client: &CompletionClient,
    options: &EvalOptions,
) -> Result<Vec<EvalRecord>> {
    let mut jobs: Vec<(Subset, &Review, &PromptTemplate)> = Vec::new();
    let mut subsets = options.subsets.clone();
    subsets.sort();
    subsets.dedup();
    for subset in subsets {
        let mut reviews: Vec<&Review> = subset_corpus(corpus, partition, subset).reviews.iter().collect();
        reviews.sort_by(|a, b| a.id.cmp(&b.id));
        for review in reviews {
            for t in templates.iter().filter(|t| options.kinds.contains(&t.kind)) {
                jobs.push((subset, review, t));
            }
        }
    }
    jobs.sort_by(|a, b| {
        (a.0, &a.1.id, a.2.kind, a.2.paraphrase_index).cmp(&(b.0, &b.1.id, b.2.kind, b.2.paraphrase_index))
    });

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(client.config().concurrency)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let max_chars = client.config().max_review_chars;
    let prompts: Vec<String> = jobs.iter().map(|&(_, review, t)| render_text(t, &review.text, max_chars)).collect();
    // identical prompts are sent once even when they are in flight together
    let mut unique: Vec<&str> = prompts.iter().map(String::as_str).collect();
    unique.sort_unstable();
    unique.dedup();
    let answers: Vec<(&str, std::result::Result<String, String>)> = pool.install(|| {
        unique
            .par_iter()
            .map(|&p| match client.complete(p) {
                Ok(text) => Ok((p, Ok(text))),
                Err(e) if options.keep_going => Ok((p, Err(e.to_string()))),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let answers: HashMap<&str, std::result::Result<String, String>> = answers.into_iter().collect();

    Ok(jobs
        .iter()
        .zip(&prompts)
        .map(|(&(subset, review, t), prompt)| {
            let (raw, error) = match &answers[prompt.as_str()] {
                Ok(text) => (text.clone(), None),
                Err(e) => {
                    log::warn!("{} {} #{}: {e}", review.id, t.kind, t.paraphrase_index);
                    (String::new(), Some(e.clone()))
                }
            };
            EvalRecord {
                subset,
                review_id: review.id.clone(),
                prompt_kind: t.kind,
                paraphrase_index: t.paraphrase_index,
                parsed: if error.is_some() { None } else { parse_label(&raw) },
                raw_completion: raw,
                gold: review.stars,
                error,
            }
        })
        .collect())
}

pub fn records_to_jsonl(records: &[EvalRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn parse_records(text: &str) -> Result<Vec<EvalRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailureMode {
    /// Failures count as wrong answers.
    #[default]
    Incorrect,
    /// Failures are dropped before scoring.
    Exclude,
}

impl std::str::FromStr for ParseFailureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incorrect" => Ok(ParseFailureMode::Incorrect),
            "exclude" => Ok(ParseFailureMode::Exclude),
            other => Err(Error::InvalidArgument(format!("unknown parse-failure mode {other:?}"))),
        }
    }
}

/// Macro-F1 and accuracy, both in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Scores `(gold, prediction)` pairs over the five star classes. A class with
/// no gold and no prediction contributes F1 = 0.
pub fn metrics(pairs: &[(u8, Option<u8>)], mode: ParseFailureMode) -> Metrics {
    let kept: Vec<(u8, Option<u8>)> = match mode {
        ParseFailureMode::Incorrect => pairs.to_vec(),
        ParseFailureMode::Exclude => pairs.iter().copied().filter(|p| p.1.is_some()).collect(),
    };
    if kept.is_empty() {
        return Metrics { macro_f1: 0.0, accuracy: 0.0 };
    }
    let mut tp = [0usize; 5];
    let mut gold_n = [0usize; 5];
    let mut pred_n = [0usize; 5];
    let mut correct = 0usize;
    for &(gold, pred) in &kept {
        let g = gold as usize - 1;
        gold_n[g] += 1;
        if let Some(p) = pred {
            pred_n[p as usize - 1] += 1;
            if p == gold {
                tp[g] += 1;
                correct += 1;
            }
        }
    }
    let f1_sum: f64 = (0..5)
        .map(|c| {
            let denom = gold_n[c] + pred_n[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Metrics { macro_f1: 100.0 * f1_sum / 5.0, accuracy: 100.0 * correct as f64 / kept.len() as f64 }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subset: Subset,
    pub prompt_kind: PromptKind,
    pub paraphrases: usize,
    pub records: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Fraction of records without a parsed label, in percent.
    pub parse_failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub parse_failure_mode: ParseFailureMode,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, subset: Subset, kind: PromptKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.subset == subset && r.prompt_kind == kind)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<6} {:<4} {:>5} {:>7} {:>16} {:>16} {:>8}\n",
            "subset", "kind", "para", "n", "macro-F1", "accuracy", "fail%"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:<4} {:>5} {:>7} {:>8.2} ±{:>6.2} {:>8.2} ±{:>6.2} {:>8.2}\n",
                r.subset.to_string(),
                r.prompt_kind.to_string(),
                r.paraphrases,
                r.records,
                r.macro_f1_mean,
                r.macro_f1_std,
                r.accuracy_mean,
                r.accuracy_std,
                r.parse_failure_rate
            ));
        }
        out
    }
}

/// Per (subset, kind): metrics for each paraphrase, then mean and population
/// std across the paraphrases present.
pub fn report(records: &[EvalRecord], mode: ParseFailureMode) -> EvalReport {
    type Pairs = Vec<(u8, Option<u8>)>;
    let mut groups: std::collections::BTreeMap<(Subset, PromptKind), std::collections::BTreeMap<usize, Pairs>> =
        Default::default();
    for r in records {
        groups
            .entry((r.subset, r.prompt_kind))
            .or_default()
            .entry(r.paraphrase_index)
            .or_default()
            .push((r.gold, r.parsed));
    }
    let rows = groups
        .into_iter()
        .map(|((subset, prompt_kind), by_para)| {
            let per: Vec<Metrics> = by_para.values().map(|pairs| metrics(pairs, mode)).collect();
            let (f1m, f1s) = mean_std(&per.iter().map(|m| m.macro_f1).collect::<Vec<_>>());
            let (am, asd) = mean_std(&per.iter().map(|m| m.accuracy).collect::<Vec<_>>());
            let n: usize = by_para.values().map(Vec::len).sum();
            let failures: usize = by_para.values().flatten().filter(|p| p.1.is_none()).count();
            ReportRow {
                subset,
                prompt_kind,
                paraphrases: by_para.len(),
                records: n,
                macro_f1_mean: f1m,
                macro_f1_std: f1s,
                accuracy_mean: am,
                accuracy_std: asd,
                parse_failure_rate: 100.0 * failures as f64 / n as f64,
            }
        })
        .collect();
    EvalReport { parse_failure_mode: mode, rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub seeds: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

/// Uniformly random star predictions, one draw per gold label per seed.
pub fn random_baseline(golds: &[u8], seeds: &[u64]) -> Result<BaselineRow> {
    if golds.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("random baseline needs golds and seeds".into()));
    }
    if let Some(&g) = golds.iter().find(|g| !(1..=5).contains(*g)) {
        return Err(Error::StarsOutOfRange(g as i64));
    }
    let per: Vec<Metrics> = seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<(u8, Option<u8>)> =
                golds.iter().map(|&g| (g, Some(rng.random_range(1..=5u8)))).collect();
            metrics(&pairs, ParseFailureMode::Incorrect)
        })
        .collect();
    let (f1m, f1s) = mean_std(&per.iter().map(|m| m.macro_f1).collect::<Vec<_>>());
    let (am, asd) = mean_std(&per.iter().map(|m| m.accuracy).collect::<Vec<_>>());
    Ok(BaselineRow { seeds: seeds.len(), macro_f1_mean: f1m, macro_f1_std: f1s, accuracy_mean: am, accuracy_std: asd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_label_cases() {
        assert_eq!(parse_label("4"), Some(4));
        assert_eq!(parse_label(" My final rating was: 5. Great!"), Some(5));
        assert_eq!(parse_label("I cannot decide."), None);
        assert_eq!(parse_label("10 out of 10, so 5"), Some(5));
        assert_eq!(parse_label("6 or 3"), Some(3));
        assert_eq!(parse_label("3.5"), Some(3));
        assert_eq!(parse_label(""), None);
    }

    #[test]
    fn hand_case_constant_three() {
        let pairs: Vec<(u8, Option<u8>)> = (1..=5).map(|g| (g, Some(3))).collect();
        let m = metrics(&pairs, ParseFailureMode::Incorrect);
        assert!((m.macro_f1 - 20.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.accuracy, 20.0);
    }

    #[test]
    fn perfect_predictions() {
        let pairs: Vec<(u8, Option<u8>)> = [1, 2, 3, 4, 5, 5, 1].iter().map(|&g| (g, Some(g))).collect();
        assert_eq!(metrics(&pairs, ParseFailureMode::Incorrect), Metrics { macro_f1: 100.0, accuracy: 100.0 });
    }

    #[test]
    fn failure_modes() {
        let pairs = [(1, Some(1)), (2, None)];
        assert_eq!(metrics(&pairs, ParseFailureMode::Incorrect).accuracy, 50.0);
        assert_eq!(metrics(&pairs, ParseFailureMode::Exclude).accuracy, 100.0);
    }

    #[test]
    fn baseline_single_gold_is_degenerate() {
        let row = random_baseline(&[1], &[7]).unwrap();
        assert!(row.accuracy_mean == 0.0 || row.accuracy_mean == 100.0);
        assert_eq!(row, random_baseline(&[1], &[7]).unwrap());
        assert!(random_baseline(&[], &[1]).is_err());
    }

    #[test]
    fn baseline_near_chance() {
        let golds = vec![3u8; 2000];
        let row = random_baseline(&golds, &[1, 2, 3]).unwrap();
        assert!((row.accuracy_mean - 20.0).abs() < 3.0, "{row:?}");
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn cache_key_separates_model_and_prompt() {
        assert_ne!(cache_key("ab", "c"), cache_key("a", "bc"));
        assert_eq!(cache_key("m", "p"), cache_key("m", "p"));
        assert_eq!(cache_key("m", "p").len(), 64);
    }

    #[test]
    fn cache_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let c = CompletionCache::open(&path).unwrap();
        c.insert("k", "3").unwrap();
        c.insert("k", "3").unwrap();
        c.insert("j", "line\nbreak").unwrap();
        drop(c);
        let c = CompletionCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("j").as_deref(), Some("line\nbreak"));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant(
            pairs in proptest::collection::vec((1u8..=5, proptest::option::of(1u8..=5)), 1..40),
            seed in any::<u64>(),
        ) {
            let mut shuffled = pairs.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            for mode in [ParseFailureMode::Incorrect, ParseFailureMode::Exclude] {
                let a = metrics(&pairs, mode);
                let b = metrics(&shuffled, mode);
                prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-9);
                prop_assert!((a.accuracy - b.accuracy).abs() < 1e-9);
            }
        }

        #[test]
        fn parse_label_in_range(s in ".{0,20}") {
            if let Some(l) = parse_label(&s) {
                prop_assert!((1..=5).contains(&l));
            }
        }
    }
}

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use peakend::causal::TiePolicy;
use peakend::cluster::{KMeansConfig, DEFAULT_NAME_THRESHOLD};
use peakend::eval::{ModelConfig, ParseFailureMode};
use peakend::score::{ScorerKind, ScorerSpec};
use peakend::synth::SyntheticConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    #[default]
    Table,
}

/// Everything a run can be configured with. `seed` drives all randomness:
/// it is copied into the sampling, k-means and synthetic-corpus seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scorer: ScorerSpec,
    pub tie_policy: TiePolicy,
    pub concurrency: usize,
    pub format: Format,
    pub keep_going: bool,
    pub min_sentences: usize,
    pub model: ModelConfig,
    pub kmeans: KMeansConfig,
    pub name_threshold: f64,
    pub synth: SyntheticConfig,
    pub parse_failures: ParseFailureMode,
    /// Template file; `None` uses the bundled set.
    pub templates: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scorer: ScorerSpec::default(),
            tie_policy: TiePolicy::default(),
            concurrency: 4,
            format: Format::default(),
            keep_going: false,
            min_sentences: 5,
            model: ModelConfig::default(),
            kmeans: KMeansConfig::default(),
            name_threshold: DEFAULT_NAME_THRESHOLD,
            synth: SyntheticConfig::default(),
            parse_failures: ParseFailureMode::default(),
            templates: None,
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scorer: Option<ScorerKind>,
    pub scorer_url: Option<String>,
    pub cache: Option<PathBuf>,
    pub tie_policy: Option<TiePolicy>,
    pub format: Option<Format>,
    pub keep_going: bool,
    pub concurrency: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Applies flag overrides. `--cache` names the sentence-score cache for
    /// scoring and the completion cache for evaluation, so it lands in both.
    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(kind) = o.scorer {
            self.scorer.kind = kind;
        }
        if let Some(url) = &o.scorer_url {
            self.scorer.endpoint = Some(url.clone());
        }
        if let Some(cache) = &o.cache {
            self.scorer.cache_path = Some(cache.clone());
            self.model.cache_path = Some(cache.clone());
        }
        if let Some(t) = o.tie_policy {
            self.tie_policy = t;
        }
        if let Some(f) = o.format {
            self.format = f;
        }
        self.keep_going |= o.keep_going;
        if let Some(c) = o.concurrency {
            self.concurrency = c;
            self.model.concurrency = c;
        }
        self.kmeans.seed = self.seed;
        self.synth.seed = self.seed;
        self
    }
}

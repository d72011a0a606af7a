use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{logit_clamp, Scorer, TensScore};
use crate::error::{Error, Result};
use crate::net::{self, RetryPolicy};
use crate::segment::SentenceList;

#[derive(Debug, Clone)]
pub struct HttpScorerConfig {
    /// Base URL of the scoring service, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpScorerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpScorerConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    sentences: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    probs: Vec<f64>,
}

/// Client for a scoring service speaking `POST /score` / `GET /health`.
/// The service returns positive-class probabilities; the clamped logit is
/// applied here.
pub struct HttpScorer {
    config: HttpScorerConfig,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(config: HttpScorerConfig) -> Self {
        let agent = net::agent(Some(config.timeout));
        HttpScorer { config, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.endpoint.trim_end_matches('/'))
    }

    pub fn health(&self) -> Result<()> {
        let url = self.url("/health");
        let (status, body) = net::get_text(&self.agent, &url)?;
        if status == 200 && body.trim() == "ok" {
            Ok(())
        } else {
            Err(Error::ScorerConfig(format!("{url} unhealthy: HTTP {status} {body:?}")))
        }
    }

    pub fn probabilities(&self, sentences: &[String]) -> Result<Vec<f64>> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let resp: ScoreResponse = net::post_json(
            &self.agent,
            &self.url("/score"),
            None,
            &ScoreRequest { sentences },
            &self.config.retry,
        )?;
        if resp.probs.len() != sentences.len() {
            return Err(Error::MalformedResponse(format!(
                "expected {} probabilities, got {}",
                sentences.len(),
                resp.probs.len()
            )));
        }
        Ok(resp.probs)
    }
}

impl Scorer for HttpScorer {
    fn score_sentences(&self, _review_id: &str, sentences: &SentenceList) -> Result<Vec<TensScore>> {
        self.probabilities(&sentences.sentences)?
            .into_iter()
            .map(logit_clamp)
            .collect()
    }
}

//! Blocking JSON-over-HTTP with retry and exponential backoff.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Extra random delay as a fraction of the nominal delay.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * self.factor.powi(attempt as i32);
        let extra = if self.jitter > 0.0 {
            rand::rng().random_range(0.0..self.jitter) * nominal
        } else {
            0.0
        };
        Duration::from_secs_f64(nominal + extra)
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub(crate) fn agent(timeout: Option<Duration>) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(timeout)
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` as JSON and decodes a JSON response, retrying on 429, 5xx and
/// transport failures.
pub(crate) fn post_json<B: Serialize, T: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
    policy: &RetryPolicy,
) -> Result<T> {
    post_json_counted(agent, url, bearer, body, policy, None)
}

/// As [`post_json`], bumping `counter` once per HTTP attempt.
pub(crate) fn post_json_counted<B: Serialize, T: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
    policy: &RetryPolicy,
    counter: Option<&AtomicUsize>,
) -> Result<T> {
    let mut attempt = 0u32;
    loop {
        if let Some(c) = counter {
            c.fetch_add(1, Ordering::SeqCst);
        }
        let mut req = agent.post(url);
        if let Some(key) = bearer {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let failure = match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    return resp
                        .body_mut()
                        .read_json::<T>()
                        .map_err(|e| Error::MalformedResponse(e.to_string()));
                }
                if !retryable(status) {
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    return Err(Error::Transport(format!("{url}: HTTP {status}: {text}")));
                }
                Error::RetriesExhausted { attempts: attempt + 1, status }
            }
            Err(e) => Error::Transport(format!("{url}: {e}")),
        };
        if attempt >= policy.max_retries {
            return Err(failure);
        }
        log::debug!("retrying {url} after: {failure}");
        thread::sleep(policy.delay(attempt));
        attempt += 1;
    }
}

pub(crate) fn get_text(agent: &ureq::Agent, url: &str) -> Result<(u16, String)> {
    let mut resp = agent.get(url).call().map_err(|e| Error::Transport(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::MalformedResponse(e.to_string()))?;
    Ok((status, text))
}

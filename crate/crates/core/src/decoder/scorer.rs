//! Scoring back ends for beam search.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use super::END;
use crate::kopl::{Program, SyntaxError};

/// Default log-probability given by the oracle to off-gold candidates.
pub const DEFAULT_FLOOR: f64 = -100.0;

/// Body of a `POST /score` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub question: String,
    /// Canonical program text of the prefix, possibly empty.
    pub prefix: String,
    /// Chunk texts, `"END"` allowed.
    pub candidates: Vec<String>,
}

/// Body of a `/score` response, positionally aligned with the candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unreachable after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer returned {got} scores for {expected} candidates")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scorer returned NaN or +inf")]
    NonFinite,
    #[error("bad program text in score request: {0}")]
    BadRequest(#[from] SyntaxError),
}

/// Log-probabilities of candidate continuations.
pub trait Scorer: Send + Sync {
    /// One score list per request, each aligned with its candidates.
    fn score(&self, requests: &[ScoreRequest]) -> Result<Vec<Vec<f64>>, ScorerError>;
}

/// Test double that knows the gold program.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    gold: Program,
    floor: f64,
}

impl OracleScorer {
    pub fn new(gold: Program) -> Self {
        Self::with_floor(gold, DEFAULT_FLOOR)
    }

    pub fn with_floor(gold: Program, floor: f64) -> Self {
        OracleScorer { gold, floor }
    }

    fn score_one(&self, req: &ScoreRequest) -> Result<Vec<f64>, ScorerError> {
        let prefix = Program::parse_prefix(&req.prefix)?;
        req.candidates
            .iter()
            .map(|cand| {
                let hit = if cand.trim() == END {
                    prefix == self.gold
                } else {
                    let chunk = Program::parse_prefix(cand)?;
                    let mut extended = prefix.clone();
                    extended.calls.extend(chunk.calls);
                    extended.is_prefix_of(&self.gold)
                };
                Ok(if hit { 0.0 } else { self.floor })
            })
            .collect()
    }
}

impl Scorer for OracleScorer {
    fn score(&self, requests: &[ScoreRequest]) -> Result<Vec<Vec<f64>>, ScorerError> {
        requests.iter().map(|r| self.score_one(r)).collect()
    }
}

/// Every candidate of a request gets `-ln n`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl Scorer for UniformScorer {
    fn score(&self, requests: &[ScoreRequest]) -> Result<Vec<Vec<f64>>, ScorerError> {
        Ok(requests
            .iter()
            .map(|r| {
                let lp = -(r.candidates.len() as f64).ln();
                vec![lp; r.candidates.len()]
            })
            .collect())
    }
}

/// HTTP client for a scoring service speaking the `/score` protocol.
/// Sends one request per live hypothesis.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    url: String,
    agent: ureq::Agent,
    attempts: usize,
    backoff: Duration,
}

impl RemoteScorer {
    /// `endpoint` is either the service root or the full `/score` URL.
    pub fn new(endpoint: &str) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/score") {
            trimmed.to_owned()
        } else {
            format!("{trimmed}/score")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        RemoteScorer {
            url,
            agent,
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }

    /// Total attempts per request (at least 1) and the pause between them.
    pub fn with_retries(mut self, attempts: usize, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn post(&self, req: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.agent.post(&self.url).send_json(req) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<ScoreResponse>()
                        .map_err(|e| ScorerError::Malformed(e.to_string()));
                }
                Err(e) => {
                    last = e.to_string();
                    warn!(attempt, url = %self.url, error = %last, "score request failed");
                    if attempt < self.attempts {
                        thread::sleep(self.backoff);
                    }
                }
            }
        }
        Err(ScorerError::Transport {
            attempts: self.attempts,
            message: last,
        })
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, requests: &[ScoreRequest]) -> Result<Vec<Vec<f64>>, ScorerError> {
        requests
            .iter()
            .map(|req| {
                let resp = self.post(req)?;
                if resp.log_probs.len() != req.candidates.len() {
                    return Err(ScorerError::LengthMismatch {
                        expected: req.candidates.len(),
                        got: resp.log_probs.len(),
                    });
                }
                if resp
                    .log_probs
                    .iter()
                    .any(|x| x.is_nan() || *x == f64::INFINITY)
                {
                    return Err(ScorerError::NonFinite);
                }
                Ok(resp.log_probs)
            })
            .collect()
    }
}

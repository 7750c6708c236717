//! Topic-to-determinant mapping: a scoring backend produces one likelihood
//! score per determinant and the topic goes to the argmax.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DeterminantSet, DsiqError, OTHER_INDEX};
use crate::types::DETERMINANT_COUNT;

/// Scores below this map a topic to "Other".
pub const DEFAULT_THRESHOLD: f64 = 0.15;

const BUILTIN_LEXICON: &str = include_str!("../../assets/lexicon.json");

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    Reply(String),
}

/// Anything that can score keywords against the determinant list.
pub trait ScoringBackend: Sync {
    fn scores(
        &self,
        keywords: &[String],
        determinants: &DeterminantSet,
    ) -> Result<Vec<f64>, BackendError>;
}

/// Seed terms per determinant, indexed like [`DeterminantSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    terms: Vec<BTreeSet<String>>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, DsiqError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| DsiqError::Lexicon(e.to_string()))?;
        let set = DeterminantSet::standard();
        let mut terms = vec![BTreeSet::new(); DETERMINANT_COUNT];
        for (name, list) in raw {
            let idx = set
                .index_of(&name)
                .ok_or_else(|| DsiqError::Lexicon(format!("unknown determinant `{name}`")))?;
            terms[idx] = list.iter().map(|t| t.trim().to_lowercase()).collect();
        }
        Ok(Self { terms })
    }

    pub fn load(path: &Path) -> Result<Self, DsiqError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DsiqError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn terms(&self, determinant: usize) -> &BTreeSet<String> {
        &self.terms[determinant]
    }

    /// Binary cosine between the keyword set and each determinant's terms:
    /// `|K ∩ L| / sqrt(|K| · |L|)`.
    pub fn cosine_scores(&self, keywords: &[String]) -> Vec<f64> {
        let kw: BTreeSet<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
        self.terms
            .iter()
            .map(|lex| {
                if kw.is_empty() || lex.is_empty() {
                    return 0.0;
                }
                let hits = kw.intersection(lex).count() as f64;
                hits / ((kw.len() * lex.len()) as f64).sqrt()
            })
            .collect()
    }
}

impl ScoringBackend for Lexicon {
    fn scores(&self, keywords: &[String], _: &DeterminantSet) -> Result<Vec<f64>, BackendError> {
        Ok(self.cosine_scores(keywords))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    keywords: &'a [String],
    determinants: Vec<&'a str>,
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

/// Remote scorer: `POST {"keywords", "determinants"}` → `{"scores": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
}

pub const LLM_URL_VAR: &str = "SIDE_LLM_URL";
pub const LLM_KEY_VAR: &str = "SIDE_LLM_KEY";

impl HttpBackend {
    pub fn new(url: impl Into<String>, key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            key,
            agent,
            retries: 2,
            backoff: Duration::from_millis(250),
        }
    }

    /// Reads `SIDE_LLM_URL` and optional `SIDE_LLM_KEY`.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(LLM_URL_VAR).ok().filter(|u| !u.is_empty())?;
        let key = std::env::var(LLM_KEY_VAR).ok().filter(|k| !k.is_empty());
        Some(Self::new(url, key, timeout))
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    fn request_once(
        &self,
        keywords: &[String],
        determinants: &DeterminantSet,
    ) -> Result<Vec<f64>, BackendError> {
        let body = ScoreRequest {
            keywords,
            determinants: determinants.names().collect(),
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let reply: ScoreReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Reply(e.to_string()))?;
        if reply.scores.len() != determinants.len() {
            return Err(BackendError::Reply(format!(
                "expected {} scores, got {}",
                determinants.len(),
                reply.scores.len()
            )));
        }
        if reply.scores.iter().any(|s| !s.is_finite()) {
            return Err(BackendError::Reply("non-finite score".into()));
        }
        Ok(reply.scores)
    }
}

impl ScoringBackend for HttpBackend {
    fn scores(
        &self,
        keywords: &[String],
        determinants: &DeterminantSet,
    ) -> Result<Vec<f64>, BackendError> {
        let mut attempt = 0;
        loop {
            match self.request_once(keywords, determinants) {
                Ok(s) => return Ok(s),
                Err(e) if attempt >= self.retries => return Err(e),
                Err(e) => {
                    log::warn!("scoring request failed (attempt {}): {e}", attempt + 1);
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// Argmax with lowest-index tie breaking; "Other" when the best score is
/// below `threshold` (which includes the all-zero case).
pub fn pick_determinant(scores: &[f64], threshold: f64) -> usize {
    let mut best = (OTHER_INDEX, f64::NEG_INFINITY);
    for (i, &s) in scores.iter().enumerate().take(DETERMINANT_COUNT) {
        if s > best.1 {
            best = (i, s);
        }
    }
    if best.1 <= 0.0 || best.1 < threshold {
        OTHER_INDEX
    } else {
        best.0
    }
}

/// Maps one keyword list, falling back to the lexicon if the backend fails.
pub fn map_topic(
    keywords: &[String],
    determinants: &DeterminantSet,
    backend: &dyn ScoringBackend,
    fallback: &Lexicon,
    threshold: f64,
) -> usize {
    if keywords.is_empty() {
        return OTHER_INDEX;
    }
    let scores = backend.scores(keywords, determinants).unwrap_or_else(|e| {
        log::warn!("backend unavailable ({e}); using lexicon scores");
        fallback.cosine_scores(keywords)
    });
    pick_determinant(&scores, threshold)
}

/// Maps many keyword lists with at most `max_in_flight` concurrent backend
/// calls. Output order matches input order.
pub fn map_topics(
    keyword_lists: &[Vec<String>],
    determinants: &DeterminantSet,
    backend: &dyn ScoringBackend,
    fallback: &Lexicon,
    threshold: f64,
    max_in_flight: usize,
) -> Vec<usize> {
    let n = keyword_lists.len();
    let results = Mutex::new(vec![OTHER_INDEX; n]);
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let idx = map_topic(&keyword_lists[i], determinants, backend, fallback, threshold);
                results.lock().expect("no poisoned workers")[i] = idx;
            });
        }
    });
    results.into_inner().expect("workers joined")
}

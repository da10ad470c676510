//! Answer generation behind a small trait: a deterministic oracle for
//! simulation and an HTTP client for chat-completion endpoints.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::corpus::Query;
use crate::text;
use crate::{Error, Result};

/// Reply used when there is no context at all.
pub const EMPTY_CONTEXT_ANSWER: &str = "unknown";

/// Environment variable holding the bearer token for [`HttpAnswerer`].
pub const API_KEY_ENV: &str = "DRAG_API_KEY";

pub trait Answerer {
    /// Answers `query` from `context`, ordered least to most reliable.
    ///
    /// Must be deterministic for fixed inputs; an empty context is allowed.
    fn answer(&self, query: &Query, context: &[&str]) -> Result<String>;
}

impl<A: Answerer + ?Sized> Answerer for &A {
    fn answer(&self, query: &Query, context: &[&str]) -> Result<String> {
        (**self).answer(query, context)
    }
}

impl<A: Answerer + ?Sized> Answerer for Box<A> {
    fn answer(&self, query: &Query, context: &[&str]) -> Result<String> {
        (**self).answer(query, context)
    }
}

/// Returns the first gold alias found verbatim in the context, scanning
/// documents in order; otherwise a context-derived wrong answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleAnswerer;

pub fn oracle_answer(query: &Query, context: &[&str]) -> String {
    if context.is_empty() {
        return EMPTY_CONTEXT_ANSWER.to_string();
    }
    for doc in context {
        for alias in &query.gold_answers {
            if text::contains_alias(doc, alias) {
                return alias.clone();
            }
        }
    }
    let mut h = Sha256::new();
    for doc in context {
        h.update(doc.as_bytes());
    }
    let digest = hex::encode(h.finalize());
    format!("unk:{}", &digest[..8])
}

impl Answerer for OracleAnswerer {
    fn answer(&self, query: &Query, context: &[&str]) -> Result<String> {
        Ok(oracle_answer(query, context))
    }
}

/// Case-folded, whitespace-normalized exact match against any alias.
pub fn is_correct(answer: &str, gold_answers: &[String]) -> bool {
    let a = text::normalize_answer(answer);
    !a.is_empty() && gold_answers.iter().any(|g| text::normalize_answer(g) == a)
}

/// The single prompt template sent to chat endpoints.
pub fn render_prompt(question: &str, context: &[&str]) -> String {
    let mut p = String::from(
        "Answer the question using the context documents below. \
         Documents appear in increasing order of reliability, so later documents are more trustworthy. \
         Reply with the answer only.\n\nContext:\n",
    );
    for (i, doc) in context.iter().enumerate() {
        p.push_str(&format!("[{}] {}\n", i + 1, doc.trim()));
    }
    if context.is_empty() {
        p.push_str("(none)\n");
    }
    p.push_str(&format!("\nQuestion: {}\nAnswer:", question.trim()));
    p
}

/// Client for an OpenAI-style `/chat/completions` endpoint at temperature 0.
#[derive(Debug, Clone)]
pub struct HttpAnswerer {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpAnswerer {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpAnswerer {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
        }
    }

    /// Picks up the bearer token from `DRAG_API_KEY` if set.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let mut a = Self::new(endpoint, model);
        a.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        a
    }

    pub fn request_body(&self, query: &Query, context: &[&str]) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": render_prompt(&query.text, context)}],
        })
    }
}

impl Answerer for HttpAnswerer {
    fn answer(&self, query: &Query, context: &[&str]) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let transport = |e: ureq::Error| Error::Transport(format!("{}: {e}", self.endpoint));
        let mut resp = req.send_json(self.request_body(query, context)).map_err(transport)?;
        let body: ChatResponse = resp.body_mut().read_json().map_err(transport)?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| Error::Transport(format!("{}: response has no completion", self.endpoint)))
    }
}

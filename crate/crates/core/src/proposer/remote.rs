use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::aux::parse_aux_requests;
use super::parse::parse_tagged;
use super::prompt::{build_prompt_with, PromptOptions};
use super::{check_inputs, CandidateBatch, ContextPolicy, Proposer};
use crate::domain::Trajectory;
use crate::error::{Error, Result};
use crate::simulators::TaskInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token; empty for none.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_key_env() -> String {
    "BILEVEL_API_KEY".into()
}
fn default_timeout() -> f64 {
    60.0
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            max_tokens: default_max_tokens(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() || self.model.trim().is_empty() {
            return Err(Error::Config("remote endpoint needs base_url and model".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            )));
        }
        if !(1..=3).contains(&self.max_attempts) {
            return Err(Error::Config(format!(
                "max_attempts must be 1..=3, got {}",
                self.max_attempts
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    fn token(&self) -> Result<Option<String>> {
        if self.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.api_key_env) {
            Ok(t) if !t.is_empty() => Ok(Some(t)),
            _ => Err(Error::Auth(format!(
                "environment variable {} is not set",
                self.api_key_env
            ))),
        }
    }
}

/// Replaces every occurrence of `secret` in `text`.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "[REDACTED]"),
        _ => text.to_string(),
    }
}

enum Failure {
    Retry(String),
    Fatal(Error),
}

/// Sends one chat-completion request asking for `n` choices and returns
/// their texts. Timeouts, connection errors, 429 and 5xx are retried with
/// exponential backoff up to `max_attempts` in total.
pub fn llm_request(config: &RemoteConfig, prompt: &str, temperature: f64, n: usize) -> Result<Vec<String>> {
    config.validate()?;
    let token = config.token()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(config.timeout_secs))
        .build()
        .map_err(|e| Error::Transport {
            attempts: 0,
            message: e.to_string(),
        })?;
    let body = json!({
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
        "n": n,
        "max_tokens": config.max_tokens,
    });
    log::debug!(
        "POST {} body={}",
        config.base_url,
        redact(&body.to_string(), token.as_deref())
    );
    let mut last = String::new();
    for attempt in 1..=config.max_attempts {
        if attempt > 1 {
            let delay = config.backoff_ms.saturating_mul(1 << (attempt - 2));
            std::thread::sleep(Duration::from_millis(delay));
        }
        match send_once(&client, config, token.as_deref(), &body) {
            Ok(texts) => return Ok(texts),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Retry(msg)) => {
                let msg = redact(&msg, token.as_deref());
                log::warn!("attempt {attempt}/{} failed: {msg}", config.max_attempts);
                last = msg;
            }
        }
    }
    Err(Error::Transport {
        attempts: config.max_attempts,
        message: last,
    })
}

fn send_once(
    client: &reqwest::blocking::Client,
    config: &RemoteConfig,
    token: Option<&str>,
    body: &Value,
) -> std::result::Result<Vec<String>, Failure> {
    let mut req = client.post(&config.base_url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().map_err(|e| Failure::Retry(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| Failure::Retry(e.to_string()))?;
    log::debug!("response {status}: {}", redact(&text, token));
    if status.as_u16() == 401 || status.as_u16() == 403 {
        return Err(Failure::Fatal(Error::Auth(format!("endpoint answered {status}"))));
    }
    if status.as_u16() == 429 || status.is_server_error() {
        return Err(Failure::Retry(format!("endpoint answered {status}")));
    }
    if !status.is_success() {
        return Err(Failure::Fatal(Error::Transport {
            attempts: 1,
            message: format!("endpoint answered {status}: {}", redact(&text, token)),
        }));
    }
    choice_texts(&text).map_err(Failure::Fatal)
}

fn choice_texts(body: &str) -> Result<Vec<String>> {
    let v: Value = serde_json::from_str(body).map_err(|e| Error::MalformedResponse(e.to_string()))?;
    let choices = v
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MalformedResponse("missing `choices` array".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::MalformedResponse("choice without message.content".into()))
        })
        .collect()
}

/// Proposer backed by a chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct RemoteProposer {
    pub config: RemoteConfig,
    pub max_candidates: usize,
    pub policy: ContextPolicy,
    pub prompt: PromptOptions,
}

impl RemoteProposer {
    pub fn new(config: RemoteConfig, max_candidates: usize, policy: ContextPolicy, prompt: PromptOptions) -> Self {
        RemoteProposer {
            config,
            max_candidates,
            policy,
            prompt,
        }
    }
}

impl Proposer for RemoteProposer {
    fn propose(&mut self, task: &TaskInstance, trajectory: &Trajectory, temperature: f64) -> Result<CandidateBatch> {
        check_inputs(trajectory, temperature)?;
        let prompt = build_prompt_with(task, trajectory, self.policy, &self.prompt);
        let texts = llm_request(&self.config, &prompt, temperature, self.max_candidates)?;
        let mut batch = CandidateBatch::default();
        let mut seen = std::collections::HashSet::new();
        for text in &texts {
            let reqs = parse_aux_requests(text);
            batch.aux_requests.extend(reqs.queries);
            batch.malformed_requests += reqs.malformed;
            match parse_tagged(text, task.kind()) {
                Ok(s) if batch.candidates.len() < self.max_candidates => {
                    if seen.insert(s.descriptor()) {
                        batch.offer(task, s, text.clone());
                    }
                }
                Ok(_) => batch.rejected.push((text.clone(), "over the candidate limit".into())),
                Err(e) => batch.rejected.push((text.clone(), e.to_string())),
            }
        }
        batch.raw_texts = texts;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choice_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"a"}},{"message":{"content":"b"}}]}"#;
        assert_eq!(choice_texts(body).unwrap(), vec!["a", "b"]);
        assert!(matches!(choice_texts("{}"), Err(Error::MalformedResponse(_))));
        assert!(matches!(
            choice_texts(r#"{"choices":[{}]}"#),
            Err(Error::MalformedResponse(_))
        ));
        assert!(matches!(choice_texts("not json"), Err(Error::MalformedResponse(_))));
    }

    #[test]
    fn redaction() {
        assert_eq!(redact("Bearer sk-1 sk-1", Some("sk-1")), "Bearer [REDACTED] [REDACTED]");
        assert_eq!(redact("x", None), "x");
    }

    #[test]
    fn config_checks() {
        let mut c = RemoteConfig::new("http://localhost:1/v1/chat/completions", "m");
        c.validate().unwrap();
        c.max_attempts = 4;
        assert!(c.validate().is_err());
        c.max_attempts = 3;
        c.api_key_env = "BILEVEL_TEST_SURELY_UNSET_VAR".into();
        assert!(matches!(llm_request(&c, "hi", 0.5, 1), Err(Error::Auth(_))));
    }
}

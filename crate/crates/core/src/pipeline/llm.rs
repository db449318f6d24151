//! Text-completion providers.
//!
//! [`MockProvider`] is deterministic and needs no network. The HTTP client
//! (feature `http`) talks to any endpoint accepting
//! `{model, prompt, temperature, max_tokens}` and answering `{text}`.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("provider returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("could not decode provider reply: {0}")]
    Decode(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("scripted provider has no replies left")]
    ScriptExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    /// Stable identifier recorded with every result.
    fn id(&self) -> String;

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ProviderError>;
}

type ReplyFn = dyn Fn(&str) -> Result<String, ProviderError> + Send + Sync;

enum MockMode {
    Echo,
    Script(Mutex<VecDeque<Result<String, ProviderError>>>),
    Func(Box<ReplyFn>),
}

/// Offline provider for tests and dry runs.
pub struct MockProvider {
    name: String,
    mode: MockMode,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider").field("name", &self.name).finish()
    }
}

impl MockProvider {
    /// Replies with the prompt itself.
    pub fn echo() -> Self {
        MockProvider {
            name: "mock:echo".into(),
            mode: MockMode::Echo,
        }
    }

    /// Replies with `replies` in order, then fails with `ScriptExhausted`.
    pub fn scripted<I>(replies: I) -> Self
    where
        I: IntoIterator<Item = Result<String, ProviderError>>,
    {
        MockProvider {
            name: "mock:scripted".into(),
            mode: MockMode::Script(Mutex::new(replies.into_iter().collect())),
        }
    }

    /// Replies computed from the prompt. Order-independent, so safe for
    /// concurrent batches.
    pub fn from_fn<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&str) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        MockProvider {
            name: format!("mock:{}", name.into()),
            mode: MockMode::Func(Box::new(f)),
        }
    }
}

impl LlmProvider for MockProvider {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, prompt: &str, _params: &DecodingParams) -> Result<String, ProviderError> {
        match &self.mode {
            MockMode::Echo => Ok(prompt.to_string()),
            MockMode::Script(queue) => queue
                .lock()
                .expect("mock script lock")
                .pop_front()
                .unwrap_or(Err(ProviderError::ScriptExhausted)),
            MockMode::Func(f) => f(prompt),
        }
    }
}

#[cfg(feature = "http")]
pub use http::{HttpConfig, HttpProvider};

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{DecodingParams, LlmProvider, ProviderError};

    pub const ENV_URL: &str = "IDIOMCE_LLM_URL";
    pub const ENV_MODEL: &str = "IDIOMCE_LLM_MODEL";
    pub const ENV_KEY: &str = "IDIOMCE_LLM_KEY";

    #[derive(Debug, Clone, PartialEq)]
    pub struct HttpConfig {
        pub url: String,
        pub model: String,
        pub key: Option<String>,
        pub timeout: Duration,
        /// Extra attempts after a transport error, timeout or 5xx status.
        pub max_retries: u32,
    }

    impl HttpConfig {
        pub fn from_env() -> Result<Self, ProviderError> {
            let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
            let url = var(ENV_URL).ok_or_else(|| ProviderError::Config(format!("{ENV_URL} is not set")))?;
            let model = var(ENV_MODEL).ok_or_else(|| ProviderError::Config(format!("{ENV_MODEL} is not set")))?;
            Ok(HttpConfig {
                url,
                model,
                key: var(ENV_KEY),
                timeout: Duration::from_secs(60),
                max_retries: 2,
            })
        }
    }

    #[derive(Serialize)]
    struct Request<'a> {
        model: &'a str,
        prompt: &'a str,
        temperature: f64,
        max_tokens: u32,
    }

    #[derive(Deserialize)]
    struct Response {
        text: String,
    }

    #[derive(Debug)]
    pub struct HttpProvider {
        config: HttpConfig,
        client: reqwest::blocking::Client,
    }

    impl HttpProvider {
        pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| ProviderError::Config(e.to_string()))?;
            Ok(HttpProvider { config, client })
        }

        pub fn from_env() -> Result<Self, ProviderError> {
            HttpProvider::new(HttpConfig::from_env()?)
        }

        fn attempt(&self, prompt: &str, params: &DecodingParams) -> Result<String, ProviderError> {
            let body = Request {
                model: &self.config.model,
                prompt,
                temperature: params.temperature,
                max_tokens: params.max_tokens,
            };
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.config.key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout
                } else {
                    ProviderError::Transport(e.to_string())
                }
            })?;
            let status = resp.status();
            if !status.is_success() {
                let body = resp.text().unwrap_or_default();
                return Err(ProviderError::Status {
                    code: status.as_u16(),
                    body,
                });
            }
            let parsed: Response = resp.json().map_err(|e| ProviderError::Decode(e.to_string()))?;
            Ok(parsed.text)
        }
    }

    fn retryable(e: &ProviderError) -> bool {
        match e {
            ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Status { code, .. } => *code >= 500 || *code == 429,
            _ => false,
        }
    }

    impl LlmProvider for HttpProvider {
        fn id(&self) -> String {
            format!("http:{}", self.config.model)
        }

        fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ProviderError> {
            let mut tries = 0;
            loop {
                match self.attempt(prompt, params) {
                    Err(e) if retryable(&e) && tries < self.config.max_retries => {
                        tries += 1;
                        log::warn!("provider attempt {tries} failed: {e}; retrying");
                        std::thread::sleep(Duration::from_millis(200 * u64::from(tries)));
                    }
                    other => return other,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replies_in_order_then_exhausted() {
        let p = MockProvider::scripted([Ok("a".to_string()), Err(ProviderError::Timeout)]);
        let d = DecodingParams::default();
        assert_eq!(p.complete("x", &d).unwrap(), "a");
        assert_eq!(p.complete("x", &d), Err(ProviderError::Timeout));
        assert_eq!(p.complete("x", &d), Err(ProviderError::ScriptExhausted));
    }

    #[test]
    fn echo_returns_prompt() {
        assert_eq!(MockProvider::echo().complete("hi", &DecodingParams::default()).unwrap(), "hi");
    }
}

//! Chat-completions transport.
//!
//! The judge logic is written against the [`ChatClient`] trait so the whole
//! harness runs against scripted stubs in tests. The HTTP implementation
//! speaks the common chat-completions JSON shape: a `messages` array in,
//! `choices[0].message.content` out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One chat turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// Minimal chat-completions client surface.
pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ClientError>;
}

/// Where and how to reach the judge model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full chat-completions URL, e.g. `http://host:8000/v1/chat/completions`.
    pub url: String,
    /// Model identifier sent in the request body.
    pub model: String,
    /// Environment variable holding the bearer token; unset means no auth.
    pub api_key_env: String,
    /// Requested sampling temperature (0 for reproducibility).
    pub temperature: f64,
    /// Attempts per item before it is marked failed.
    pub max_attempts: u32,
    /// Concurrent in-flight requests.
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "judge".into(),
            api_key_env: "SPEECHWORTHY_API_KEY".into(),
            temperature: 0.0,
            max_attempts: 3,
            concurrency: 4,
            timeout_secs: 60,
        }
    }
}

#[cfg(feature = "http")]
pub use http_impl::HttpChatClient;

#[cfg(feature = "http")]
mod http_impl {
    use super::{ChatClient, ChatMessage, ClientError, EndpointConfig};
    use std::time::Duration;

    /// Blocking HTTP client for OpenAI-compatible endpoints.
    pub struct HttpChatClient {
        config: EndpointConfig,
        api_key: Option<String>,
        client: reqwest::blocking::Client,
    }

    impl HttpChatClient {
        /// Reads the API key from the configured environment variable; a
        /// missing key simply omits the Authorization header.
        pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
            let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.timeout_secs))
                .build()
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            Ok(Self { config, api_key, client })
        }
    }

    impl ChatClient for HttpChatClient {
        fn complete(
            &self,
            messages: &[ChatMessage],
            temperature: f64,
        ) -> Result<String, ClientError> {
            let body = serde_json::json!({
                "model": self.config.model,
                "messages": messages,
                "temperature": temperature,
            });
            let mut req = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Err(ClientError::Transport(format!("status {status}: {text}")));
            }
            let value: serde_json::Value =
                resp.json().map_err(|e| ClientError::Protocol(e.to_string()))?;
            value["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| {
                    ClientError::Protocol("reply missing choices[0].message.content".into())
                })
        }
    }
}

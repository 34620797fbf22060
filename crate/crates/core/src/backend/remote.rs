//! Generic chat-completion client.
//!
//! Speaks one wire shape: `{model, messages, temperature, max_tokens, seed}` in,
//! `{choices: [{message: {content}}]}` out. Provider differences belong in a
//! proxy or adapter in front of the endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatTurn, GenerationParams, Role};
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_VAR: &str = "DAE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_api_key_var")]
    pub api_key_var: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_api_key_var() -> String {
    DEFAULT_API_KEY_VAR.to_string()
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: default_timeout_secs(),
            api_key_var: default_api_key_var(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Debug, Deserialize)]
struct WireReply {
    content: Option<String>,
}

pub fn encode_request(
    model: &str,
    history: &[ChatTurn],
    params: &GenerationParams,
) -> Result<String> {
    let req = WireRequest {
        model,
        messages: history
            .iter()
            .map(|t| WireMessage {
                role: t.role,
                content: &t.content,
            })
            .collect(),
        temperature: params.temperature,
        max_tokens: params.max_tokens,
        seed: params.seed,
    };
    Ok(serde_json::to_string(&req)?)
}

/// Pulls the first choice's text out of a response body.
pub fn decode_response(body: &str) -> Result<String> {
    let resp: WireResponse = serde_json::from_str(body)?;
    resp.choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or(Error::GenerationEmpty {
            what: "choice in completion response",
        })
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

impl RemoteBackend {
    /// Reads the API key from the configured environment variable; a missing
    /// key is allowed for endpoints that need none.
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_var).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.is_success() {
            match decode_response(&text) {
                Ok(s) => Attempt::Done(s),
                Err(e) => Attempt::Fatal(format!("bad response body: {e}")),
            }
        } else if status.is_server_error() || status.as_u16() == 429 {
            Attempt::Retry(format!("HTTP {status}"))
        } else {
            Attempt::Fatal(format!("HTTP {status}: {text}"))
        }
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, history: &[ChatTurn], params: &GenerationParams) -> Result<String> {
        let body = encode_request(&self.config.model, history, params)?;
        let max_attempts = self.config.max_retries + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(s) => return Ok(s),
                Attempt::Fatal(message) => return Err(Error::Transport { attempts, message }),
                Attempt::Retry(message) => {
                    if attempts >= max_attempts {
                        return Err(Error::Transport { attempts, message });
                    }
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempts - 1));
                    tracing::warn!(attempts, %message, "retrying completion in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }

    fn name(&self) -> &str {
        &self.config.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    #[test]
    fn request_shape() {
        let h = vec![ChatTurn::system("s"), ChatTurn::user("q")];
        let body = encode_request("m", &h, &GenerationParams::sampled(0.7, 3)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["model"], "m");
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "q");
        assert_eq!(v["temperature"], 0.7);
        assert_eq!(v["seed"], 3);
    }

    #[test]
    fn response_decoding() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Paris"}}]}"#;
        assert_eq!(decode_response(body).unwrap(), "Paris");
        assert!(decode_response(r#"{"choices":[]}"#).is_err());
        assert!(decode_response("not json").is_err());
    }

    /// Serves the given (status, body) pairs to successive connections.
    fn serve(replies: Vec<(u16, &'static str)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn fast_config(endpoint: String) -> RemoteConfig {
        RemoteConfig {
            backoff_ms: 1,
            api_key_var: "DAE_TEST_KEY_UNSET".into(),
            ..RemoteConfig::new(endpoint, "test-model")
        }
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"content":"Budapest"}}]}"#;
        let url = serve(vec![(500, "{}"), (503, "{}"), (200, ok)]);
        let backend = RemoteBackend::new(fast_config(url)).unwrap();
        let out = backend
            .complete(&[ChatTurn::user("q")], &GenerationParams::greedy())
            .unwrap();
        assert_eq!(out, "Budapest");
    }

    #[test]
    fn gives_up_after_three_retries() {
        let url = serve(vec![(500, "{}"); 4]);
        let backend = RemoteBackend::new(fast_config(url)).unwrap();
        let err = backend
            .complete(&[ChatTurn::user("q")], &GenerationParams::greedy())
            .unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 4, .. }), "{err}");
        assert!(err.is_retriable());
    }

    #[test]
    fn client_errors_are_not_retried() {
        let url = serve(vec![(400, "{\"error\":\"bad\"}")]);
        let backend = RemoteBackend::new(fast_config(url)).unwrap();
        let err = backend
            .complete(&[ChatTurn::user("q")], &GenerationParams::greedy())
            .unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 1, .. }), "{err}");
    }
}

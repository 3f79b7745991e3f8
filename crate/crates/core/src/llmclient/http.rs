use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, CompletionBackend, FinishReason, GenMode, GenRequest, GenResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `{prompt, max_tokens, temperature, stop}` in,
    /// `{text, finish_reason, usage.completion_tokens}` (or OpenAI-style
    /// `choices[0].text`) out.
    Completion,
    /// Lossy adapter for chat-only endpoints: the prompt (including a
    /// partial transcript) is sent as one user message, so the model starts
    /// a new assistant turn instead of continuing mid-thought.
    Chat,
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub model: Option<String>,
    /// Bearer token; typically read from an environment variable.
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub format: WireFormat,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            api_key: None,
            timeout: Duration::from_secs(600),
            format: WireFormat::Completion,
        }
    }

    /// Read the bearer token from `var` if set.
    pub fn with_api_key_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn body(&self, req: &GenRequest) -> Value {
        let mut body = match self.cfg.format {
            WireFormat::Completion => serde_json::json!({
                "prompt": req.prompt,
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
                "stop": req.stop,
            }),
            WireFormat::Chat => {
                if req.mode == GenMode::Continuation {
                    tracing::debug!("continuation sent through chat adapter; transcript becomes a user turn");
                }
                serde_json::json!({
                    "messages": [{"role": "user", "content": req.prompt}],
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                    "stop": req.stop,
                })
            }
        };
        if let Some(seed) = req.seed {
            body["seed"] = seed.into();
        }
        if let Some(model) = &self.cfg.model {
            body["model"] = model.clone().into();
        }
        body
    }
}

/// Parse either the native response shape or an OpenAI-compatible one.
pub(crate) fn parse_response(v: &Value, max_tokens: u32) -> Result<GenResponse, BackendError> {
    let choice = v.get("choices").and_then(|c| c.get(0));
    let text = v
        .get("text")
        .or_else(|| choice.and_then(|c| c.get("text")))
        .or_else(|| choice.and_then(|c| c.get("message")).and_then(|m| m.get("content")))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("no completion text".into()))?
        .to_string();
    let reason = v
        .get("finish_reason")
        .or_else(|| choice.and_then(|c| c.get("finish_reason")))
        .and_then(Value::as_str)
        .unwrap_or("stop");
    let finish_reason = match reason {
        "length" | "max_tokens" => FinishReason::Length,
        "error" => FinishReason::Error,
        _ => FinishReason::Stop,
    };
    let generated_tokens = match v.pointer("/usage/completion_tokens").and_then(Value::as_u64) {
        Some(n) => n as u32,
        None if finish_reason == FinishReason::Length => max_tokens,
        None => text.split_whitespace().count() as u32,
    };
    Ok(GenResponse {
        text,
        finish_reason,
        generated_tokens,
    })
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let mut call = self.agent.post(&self.cfg.url);
        if let Some(key) = &self.cfg.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(self.body(req))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}: {text}"))),
            _ => return Err(BackendError::Rejected(format!("HTTP {status}: {text}"))),
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        parse_response(&v, req.max_tokens)
    }

    fn model_id(&self) -> String {
        self.cfg.model.clone().unwrap_or_else(|| self.cfg.url.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn native_shape() {
        let r = parse_response(
            &json!({"text": "abc", "finish_reason": "length", "usage": {"completion_tokens": 7}}),
            7,
        )
        .unwrap();
        assert_eq!(r, GenResponse { text: "abc".into(), finish_reason: FinishReason::Length, generated_tokens: 7 });
    }

    #[test]
    fn openai_shapes() {
        let r = parse_response(&json!({"choices": [{"text": "x y", "finish_reason": "stop"}]}), 9).unwrap();
        assert_eq!((r.text.as_str(), r.generated_tokens), ("x y", 2));
        let r = parse_response(&json!({"choices": [{"message": {"content": "hi"}, "finish_reason": "length"}]}), 4).unwrap();
        assert_eq!((r.finish_reason, r.generated_tokens), (FinishReason::Length, 4));
    }

    #[test]
    fn missing_text_is_malformed() {
        assert!(matches!(parse_response(&json!({"foo": 1}), 1), Err(BackendError::Malformed(_))));
    }
}

//! OpenAI-compatible HTTP adapters. Wire formats stay inside this file.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, ProviderError};

pub(crate) fn http_agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// Maps HTTP status codes onto provider errors. 429 and 5xx are treated as
/// transient so the gateway retries them.
fn classify(status: u16, body: String) -> ProviderError {
    match status {
        401 | 403 => ProviderError::Auth(format!("HTTP {status}")),
        408 | 429 | 500..=599 => ProviderError::Transport(format!("HTTP {status}: {body}")),
        _ => ProviderError::InvalidRequest(format!("HTTP {status}: {body}")),
    }
}

/// POSTs a JSON body with a bearer credential and returns the raw response
/// bytes together with the declared content type.
pub(crate) fn post_json_bytes(
    agent: &Agent,
    url: &str,
    key: &str,
    body: &Value,
) -> Result<(Vec<u8>, Option<String>), ProviderError> {
    let mut response = agent
        .post(url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(body)
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let content_type = response
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let bytes = response
        .body_mut()
        .read_to_vec()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(classify(status, String::from_utf8_lossy(&bytes).into_owned()));
    }
    Ok((bytes, content_type))
}

fn post_json(agent: &Agent, url: &str, key: &str, body: &Value) -> Result<Value, ProviderError> {
    let (bytes, _) = post_json_bytes(agent, url, key, body)?;
    serde_json::from_slice(&bytes).map_err(|e| ProviderError::Protocol(e.to_string()))
}

pub struct RemoteChat {
    agent: Agent,
    url: String,
    key: String,
    model: String,
}

impl RemoteChat {
    pub fn new(endpoint: &str, key: &str, model: &str, timeout: Duration) -> Self {
        Self {
            agent: http_agent(timeout),
            url: join_url(endpoint, "chat/completions"),
            key: key.to_string(),
            model: model.to_string(),
        }
    }
}

impl ChatProvider for RemoteChat {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_instruction},
                {"role": "user", "content": request.user_content},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let response = post_json(&self.agent, &self.url, &self.key, &body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Protocol("response has no choices[0].message.content".into()))
    }
}

pub struct RemoteEmbedder {
    agent: Agent,
    url: String,
    key: String,
    model: String,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, key: &str, model: &str, timeout: Duration) -> Self {
        Self {
            agent: http_agent(timeout),
            url: join_url(endpoint, "embeddings"),
            key: key.to_string(),
            model: model.to_string(),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let body = json!({ "model": self.model, "input": text });
        let response = post_json(&self.agent, &self.url, &self.key, &body)?;
        let values = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Protocol("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::Protocol("non-numeric embedding".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(EmbeddingVector::new(values))
    }
}

#[cfg(test)]
mod tests {
    use std::net::TcpListener;
    use std::sync::Arc;

    use super::*;
    use crate::provider::{Gateway, MockEmbedder, RetryPolicy};

    fn closed_port() -> u16 {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    }

    #[test]
    fn network_down_is_unavailable_after_retries() {
        let endpoint = format!("http://127.0.0.1:{}/v1", closed_port());
        let chat = Arc::new(RemoteChat::new(&endpoint, "k", "m", Duration::from_secs(2)));
        let gw = Gateway::new(chat, Arc::new(MockEmbedder::new(0, 8))).with_retry(RetryPolicy {
            max_attempts: 2,
            backoff_ms: 0,
        });
        let err = gw.complete_chat(&ChatRequest::new("x", "s", "u")).unwrap_err();
        assert!(
            matches!(err, crate::provider::ProviderError::Unavailable { attempts: 2, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify(401, String::new()), ProviderError::Auth(_)));
        assert!(matches!(classify(503, String::new()), ProviderError::Transport(_)));
        assert!(matches!(classify(400, String::new()), ProviderError::InvalidRequest(_)));
    }

    #[test]
    fn url_joining() {
        assert_eq!(join_url("http://h/v1/", "/embeddings"), "http://h/v1/embeddings");
    }
}

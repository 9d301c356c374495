//! Client for chat-completions style text models, shared by the harmonizer
//! and the topic labeler.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::http::HttpClient;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChatError {
    #[error("text model unreachable: {0}")]
    Unavailable(String),
    #[error("text model returned status {0}")]
    Status(u16),
    #[error("text model returned an unreadable reply")]
    BadPayload,
}

pub struct ChatModel {
    http: Arc<dyn HttpClient>,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl ChatModel {
    pub fn new(http: Arc<dyn HttpClient>, endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        ChatModel { http, endpoint: endpoint.into(), model: model.into(), api_key }
    }

    /// Sends a single user message at temperature 0 and returns the reply text.
    pub fn complete(&self, prompt: &str) -> Result<String, ChatError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let auth = self.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let headers: Vec<(&str, &str)> = auth.iter().map(|a| ("authorization", a.as_str())).collect();
        let resp = self
            .http
            .post_json(&self.endpoint, &headers, &body)
            .map_err(|e| ChatError::Unavailable(e.0))?;
        if !resp.is_success() {
            return Err(ChatError::Status(resp.status));
        }
        let doc: Value = serde_json::from_slice(&resp.body).map_err(|_| ChatError::BadPayload)?;
        doc.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_string())
            .ok_or(ChatError::BadPayload)
    }
}

/// Fills `{name}` placeholders verbatim (no encoding).
pub fn render_prompt(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

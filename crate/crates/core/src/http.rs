//! Minimal blocking HTTP abstraction so every network call can be swapped for
//! canned responses in tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
    /// Parsed `Retry-After` header, in seconds.
    pub retry_after: Option<u64>,
}

impl HttpResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        HttpResponse { status: 200, body: body.into(), retry_after: None }
    }

    pub fn status(status: u16) -> Self {
        HttpResponse { status, body: Vec::new(), retry_after: None }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("http transport error: {0}")]
pub struct HttpError(pub String);

pub trait HttpClient: Send + Sync {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, HttpError>;
    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, &str)],
        body: &serde_json::Value,
    ) -> Result<HttpResponse, HttpError>;
}

/// Real client backed by `ureq`. Non-2xx statuses are returned as responses,
/// not errors, so callers can react to 404/429.
pub struct UreqClient {
    agent: ureq::Agent,
}

impl UreqClient {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        UreqClient { agent: config.into() }
    }
}

impl Default for UreqClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(20))
    }
}

fn convert(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<HttpResponse, HttpError> {
    let mut resp = resp.map_err(|e| HttpError(e.to_string()))?;
    let status = resp.status().as_u16();
    let retry_after = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok());
    let body = resp
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| HttpError(e.to_string()))?;
    Ok(HttpResponse { status, body, retry_after })
}

impl HttpClient for UreqClient {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, HttpError> {
        let mut req = self.agent.get(url);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        convert(req.call())
    }

    fn post_json(
        &self,
        url: &str,
        headers: &[(&str, &str)],
        body: &serde_json::Value,
    ) -> Result<HttpResponse, HttpError> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let bytes = serde_json::to_vec(body).map_err(|e| HttpError(e.to_string()))?;
        convert(req.send(&bytes[..]))
    }
}

/// Canned responses keyed by URL. Unknown URLs answer 404. Every call is
/// counted so tests can assert on network usage.
#[derive(Default)]
pub struct FixtureHttp {
    routes: Mutex<HashMap<String, Vec<HttpResponse>>>,
    calls: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl FixtureHttp {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a response. Several responses for one URL are served in
    /// order; the last one repeats.
    pub fn route(self, url: impl Into<String>, resp: HttpResponse) -> Self {
        self.routes.lock().unwrap().entry(url.into()).or_default().push(resp);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requested_urls(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    fn answer(&self, url: &str) -> HttpResponse {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(url.to_string());
        let mut routes = self.routes.lock().unwrap();
        match routes.get_mut(url) {
            Some(queue) if queue.len() > 1 => queue.remove(0),
            Some(queue) => queue[0].clone(),
            None => HttpResponse::status(404),
        }
    }
}

impl HttpClient for FixtureHttp {
    fn get(&self, url: &str, _headers: &[(&str, &str)]) -> Result<HttpResponse, HttpError> {
        Ok(self.answer(url))
    }

    fn post_json(
        &self,
        url: &str,
        _headers: &[(&str, &str)],
        _body: &serde_json::Value,
    ) -> Result<HttpResponse, HttpError> {
        Ok(self.answer(url))
    }
}

/// Substitutes `{name}` placeholders with percent-encoded values.
pub fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        let encoded: String = url::form_urlencoded::byte_serialize(value.as_bytes()).collect();
        out = out.replace(&format!("{{{name}}}"), &encoded);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_queue_and_default_404() {
        let http = FixtureHttp::new()
            .route("u", HttpResponse::status(429))
            .route("u", HttpResponse::ok("x"));
        assert_eq!(http.get("u", &[]).unwrap().status, 429);
        assert_eq!(http.get("u", &[]).unwrap().status, 200);
        assert_eq!(http.get("u", &[]).unwrap().status, 200);
        assert_eq!(http.get("other", &[]).unwrap().status, 404);
        assert_eq!(http.calls(), 4);
    }

    #[test]
    fn template_encoding() {
        assert_eq!(
            fill_template("https://x/search?query={query}&k={key}", &[("query", "Alice in Borderland"), ("key", "a&b")]),
            "https://x/search?query=Alice+in+Borderland&k=a%26b"
        );
    }
}

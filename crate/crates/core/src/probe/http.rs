use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use log::warn;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ModelEndpoint, ProbeError};

/// Blocking client for `POST {base_url}/v1/chat/completions`.
pub struct HttpBackend {
    endpoint: ModelEndpoint,
    agent: ureq::Agent,
    attempts: AtomicUsize,
}

impl HttpBackend {
    pub fn new(endpoint: ModelEndpoint) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.request_timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpBackend {
            endpoint,
            agent,
            attempts: AtomicUsize::new(0),
        }
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Number of HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::Relaxed)
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, ProbeError> {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.agent.post(self.url());
        if let Some(token) = &self.endpoint.api_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProbeError::HttpError { status, body });
        }
        let value: Value = resp.body_mut().read_json().map_err(transport_error)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProbeError::BadResponse(value.to_string()))
    }
}

fn transport_error(e: ureq::Error) -> ProbeError {
    match e {
        ureq::Error::Timeout(_) => ProbeError::Timeout,
        ureq::Error::Json(e) => ProbeError::BadResponse(e.to_string()),
        ureq::Error::StatusCode(status) => ProbeError::HttpError {
            status,
            body: String::new(),
        },
        other => ProbeError::Transport(other.to_string()),
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProbeError> {
        let policy = &self.endpoint.retry;
        let mut backoff = policy.initial_backoff;
        let mut attempt = 0u32;
        loop {
            match self.attempt(request) {
                Ok(reply) => return Ok(reply),
                Err(e) if e.is_transient() && attempt < policy.retries => {
                    warn!("attempt {} failed ({e}); retrying in {:?}", attempt + 1, backoff);
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(e) if e.is_transient() && policy.retries > 0 => {
                    return Err(ProbeError::ExhaustedRetries {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

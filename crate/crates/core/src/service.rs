//! JSON-over-HTTP client for the language-model service.
//!
//! The service exposes four endpoints:
//!
//! | method | path                 | request                                   | response                      |
//! |--------|----------------------|-------------------------------------------|-------------------------------|
//! | POST   | `/v1/next_logprobs`  | `{context: [w], candidates: [w] \| "all"}` | `{logprobs: [f64]}`           |
//! | POST   | `/v1/masked`         | `{tokens: [w \| MASK], target_index, candidate}` | `{prob}` or `{multi_token: true}` |
//! | POST   | `/v1/span_tokens`    | `{span}`                                  | `{k}`                         |
//! | GET    | `/health`            |                                           | `{status, fingerprints}`      |
//!
//! Error responses carry `{error, word?}` with a non-2xx status. The client is
//! `Send + Sync` and may be shared across worker threads; it never retries.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mask sentinel used on the wire.
pub const WIRE_MASK: &str = "[MASK]";

/// End-of-sentence candidate understood by `/v1/next_logprobs`.
pub const WIRE_END: &str = "</s>";

/// Environment variable consulted for a default service URL.
pub const SERVICE_URL_ENV: &str = "NCGP_SERVICE_URL";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("transport error talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("{url} returned HTTP {status}: {body}")]
    Status {
        url: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {url}: {message}")]
    Protocol { url: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidates {
    All(AllMarker),
    List(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllMarker {
    #[serde(rename = "all")]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextLogprobsRequest {
    pub context: Vec<String>,
    pub candidates: Candidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextLogprobsResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedRequest {
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MaskedResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_token: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanTokensRequest {
    pub span: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanTokensResponse {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(default)]
    pub fingerprints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
}

#[derive(Clone)]
pub struct ServiceClient {
    agent: ureq::Agent,
    base: String,
}

impl std::fmt::Debug for ServiceClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceClient").field("base", &self.base).finish()
    }
}

impl ServiceClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base: base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn next_logprobs(
        &self,
        req: &NextLogprobsRequest,
    ) -> Result<NextLogprobsResponse, ServiceError> {
        self.post("/v1/next_logprobs", req)
    }

    pub fn masked(&self, req: &MaskedRequest) -> Result<MaskedResponse, ServiceError> {
        self.post("/v1/masked", req)
    }

    pub fn span_tokens(&self, span: &str) -> Result<SpanTokensResponse, ServiceError> {
        self.post(
            "/v1/span_tokens",
            &SpanTokensRequest {
                span: span.to_string(),
            },
        )
    }

    pub fn health(&self) -> Result<HealthResponse, ServiceError> {
        let url = format!("{}/health", self.base);
        let resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| ServiceError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
        Self::decode(url, resp)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ServiceError> {
        let url = format!("{}{}", self.base, path);
        let resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| ServiceError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
        Self::decode(url, resp)
    }

    fn decode<Resp: DeserializeOwned>(
        url: String,
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<Resp, ServiceError> {
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ServiceError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(ServiceError::Status {
                url,
                status,
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ServiceError::Protocol {
            url,
            message: e.to_string(),
        })
    }
}

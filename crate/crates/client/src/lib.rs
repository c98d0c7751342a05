//! Async client for the qapt HTTP service.

use serde::de::DeserializeOwned;
use serde::Serialize;

use qapt_core::wire::{
    ErrorBody, ExecuteRequest, Health, QaResponse, TranslateRequest, TranslateResponse,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// The server answered with a non-2xx status.
    #[error("server returned {status}: {} ({})", body.message, body.error)]
    Api { status: u16, body: ErrorBody },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn translate(
        &self,
        req: &TranslateRequest,
    ) -> Result<TranslateResponse, ClientError> {
        self.post("/api/translate", req).await
    }

    pub async fn execute(&self, program: &str) -> Result<QaResponse, ClientError> {
        self.post(
            "/api/execute",
            &ExecuteRequest {
                program: program.to_string(),
            },
        )
        .await
    }

    pub async fn qa(&self, req: &TranslateRequest) -> Result<QaResponse, ClientError> {
        self.post("/api/qa", req).await
    }

    /// The registry export, as returned by the server.
    pub async fn forms(&self) -> Result<Vec<serde_json::Value>, ClientError> {
        self.get("/api/forms").await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/healthz").await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await?;
        Self::decode(resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(resp).await
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body =
            serde_json::from_str(&text).unwrap_or_else(|_| ErrorBody::new("http_error", text));
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }
}

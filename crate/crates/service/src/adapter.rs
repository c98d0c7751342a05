//! Client side of the model-adapter protocol (`POST {url}/predict`).

use std::time::Duration;

use qapt_core::dsl::{parse, ParseError, Program};
use qapt_core::metrics::Direction;
use qapt_core::textcodec::{decode, encode_as, Mode, TokenSequence, Vocab};
use qapt_core::wire::PredictMessage;

use crate::api::ApiError;

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("no model adapter is configured")]
    NotConfigured,
    #[error("model adapter unreachable: {0}")]
    Unreachable(String),
    #[error("model adapter returned an unusable reply: {0}")]
    BadReply(String),
    #[error("model output `{text}` does not parse: {source}")]
    Unparseable { text: String, source: ParseError },
}

impl From<AdapterError> for ApiError {
    fn from(e: AdapterError) -> Self {
        match &e {
            AdapterError::NotConfigured => {
                ApiError::new(503, "model_not_configured", e.to_string())
            }
            AdapterError::Unreachable(_) | AdapterError::BadReply(_) => {
                ApiError::new(502, "model_unavailable", e.to_string())
            }
            AdapterError::Unparseable { source, .. } => {
                let mut err = ApiError::new(422, "model_output_invalid", e.to_string());
                err.body.position = Some(source.position());
                err.body.expected = source.expected().to_vec();
                err
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelAdapter {
    endpoint: String,
    http: reqwest::Client,
}

impl ModelAdapter {
    pub fn new(base_url: String, timeout: Duration) -> Self {
        let endpoint = format!("{}/predict", base_url.trim_end_matches('/'));
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .unwrap_or_default();
        ModelAdapter { endpoint, http }
    }

    /// Sends the tokenized question and parses the decoded reply. Decoder
    /// warnings are returned alongside the program.
    pub async fn translate(
        &self,
        question: &str,
        vocab: &Vocab,
    ) -> Result<(Program, Vec<String>), AdapterError> {
        let seq = encode_as(question, Mode::Question, vocab);
        let request = PredictMessage {
            direction: Direction::Qtp,
            tokens: seq.ids,
            values: seq.value_dict,
        };
        let reply = self
            .http
            .post(&self.endpoint)
            .json(&request)
            .send()
            .await
            .map_err(|e| AdapterError::Unreachable(e.to_string()))?;
        if !reply.status().is_success() {
            return Err(AdapterError::BadReply(format!("status {}", reply.status())));
        }
        let reply: PredictMessage = reply
            .json()
            .await
            .map_err(|e| AdapterError::BadReply(e.to_string()))?;
        let decoded = decode(
            &TokenSequence {
                ids: reply.tokens,
                value_dict: reply.values,
            },
            vocab,
        );
        let program = parse(&decoded.text).map_err(|source| AdapterError::Unparseable {
            text: decoded.text.clone(),
            source,
        })?;
        Ok((program, decoded.warnings))
    }
}

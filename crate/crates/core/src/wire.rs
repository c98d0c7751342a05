//! JSON bodies of the HTTP API and of the model-adapter protocol.

use serde::{Deserialize, Serialize};

use crate::boxmodel::BoxModelParams;
use crate::dsl::Variable;
use crate::executor::Answer;
use crate::metrics::Direction;

/// Which translator produced a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Reference,
    Model,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reference" => Ok(Engine::Reference),
            "model" => Ok(Engine::Model),
            other => Err(format!(
                "unknown engine `{other}` (expected reference or model)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<Engine>,
    /// Overrides the server's fallback policy for unusable model output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub program: String,
    pub source: Engine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form_id: Option<u8>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub program: String,
}

/// Down-sampled series of the queried variable and of `M_n`, indexed by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPayload {
    pub variable: Variable,
    pub steps: Vec<u32>,
    pub values: Vec<f64>,
    pub m_n: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResponse {
    pub program: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Engine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form_id: Option<u8>,
    pub answer: Answer,
    pub series: SeriesPayload,
    pub params_used: BoxModelParams,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Error body returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable kind, e.g. `no_match` or `parse_error`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected: Vec<String>,
}

impl ErrorBody {
    pub fn new(error: &str, message: impl Into<String>) -> Self {
        ErrorBody {
            error: error.into(),
            message: message.into(),
            position: None,
            expected: Vec::new(),
        }
    }
}

/// Body of `POST /predict` on a model adapter, in both directions of the
/// exchange: token ids plus the literal values the VALUE tokens stand for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictMessage {
    pub direction: Direction,
    pub tokens: Vec<u32>,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: bool,
}

/// Indices that keep at most `max` points of a series of length `len`,
/// always including the first and last.
pub fn downsample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max || len == 0 {
        return (0..len).collect();
    }
    let max = max.max(2);
    let span = (len - 1) as f64;
    let mut out: Vec<usize> = (0..max)
        .map(|i| (i as f64 * span / (max - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_keeps_endpoints() {
        assert_eq!(downsample_indices(5, 10), vec![0, 1, 2, 3, 4]);
        let idx = downsample_indices(4001, 2000);
        assert_eq!(idx.len(), 2000);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 4000);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(downsample_indices(0, 10).is_empty());
        assert_eq!(downsample_indices(10, 1), vec![0, 9]);
    }

    #[test]
    fn translate_request_engine_optional() {
        let r: TranslateRequest = serde_json::from_str(r#"{"question":"q"}"#).unwrap();
        assert_eq!(r.engine, None);
        let r: TranslateRequest =
            serde_json::from_str(r#"{"question":"q","engine":"model"}"#).unwrap();
        assert_eq!(r.engine, Some(Engine::Model));
    }

    #[test]
    fn predict_message_shape() {
        let m = PredictMessage {
            direction: Direction::Qtp,
            tokens: vec![1, 2],
            values: vec!["5".into()],
        };
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"direction":"QTP","tokens":[1,2],"values":["5"]}"#
        );
    }
}

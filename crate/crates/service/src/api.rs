//! Request handling independent of the HTTP layer. The axum handlers and the
//! CLI's local mode both call into [`Service`].

use std::fmt;
use std::time::Duration;

use qapt_core::boxmodel::{BoxModelError, Constants, ConstantsError, Simulator};
use qapt_core::dsl::{parse, print_program, ParseError, Program};
use qapt_core::executor::{series, ExecError, Executor};
use qapt_core::qforms::{FormExport, QformError, Registry};
use qapt_core::textcodec::{registry_vocab, Vocab};
use qapt_core::wire::{
    downsample_indices, Engine, ErrorBody, ExecuteRequest, Health, QaResponse, SeriesPayload,
    TranslateRequest, TranslateResponse,
};

use crate::adapter::{AdapterError, ModelAdapter};

/// Largest number of points returned per series.
pub const MAX_SERIES_POINTS: usize = 2000;

/// Static configuration, fixed for the life of the process.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub constants: Constants,
    /// Base URL of a model adapter serving `POST /predict`.
    pub model_url: Option<String>,
    /// Whether unusable model output falls back to the reference translator.
    pub fallback: bool,
    pub model_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            constants: Constants::default(),
            model_url: None,
            fallback: true,
            model_timeout: Duration::from_secs(10),
        }
    }
}

impl ServiceConfig {
    /// Reads `QAPT_CONSTANTS` and `QAPT_MODEL_URL`.
    pub fn from_env() -> Result<Self, ConstantsError> {
        let model_url = std::env::var("QAPT_MODEL_URL")
            .ok()
            .filter(|s| !s.trim().is_empty());
        Ok(ServiceConfig {
            constants: Constants::from_env()?,
            model_url,
            ..Self::default()
        })
    }
}

/// An error response: HTTP status plus JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: u16, error: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody::new(error, message),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, "bad_request", message)
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}): {}",
            self.body.error, self.status, self.body.message
        )
    }
}

impl std::error::Error for ApiError {}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        let kind = match e {
            ParseError::Syntax { .. } => "parse_error",
            ParseError::Validation { .. } => "invalid_program",
        };
        let mut err = ApiError::new(422, kind, e.to_string());
        err.body.position = Some(e.position());
        err.body.expected = e.expected().to_vec();
        err
    }
}

impl From<ExecError> for ApiError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Invalid(_) => ApiError::new(422, "invalid_program", e.to_string()),
            ExecError::BoxModel(BoxModelError::InvalidParams(_)) => {
                ApiError::new(422, "invalid_params", e.to_string())
            }
            ExecError::BoxModel(BoxModelError::NumericalBlowup { .. }) => {
                ApiError::new(500, "numerical_blowup", e.to_string())
            }
        }
    }
}

impl From<QformError> for ApiError {
    fn from(e: QformError) -> Self {
        match e {
            QformError::NoMatch => ApiError::new(422, "no_match", e.to_string()),
            other => ApiError::new(422, "form_error", other.to_string()),
        }
    }
}

/// Shared, immutable request-handling state.
#[derive(Debug)]
pub struct Service {
    registry: Registry,
    executor: Executor,
    vocab: Vocab,
    model: Option<ModelAdapter>,
    fallback: bool,
}

impl Service {
    pub fn new(config: ServiceConfig) -> Self {
        let registry = Registry::new();
        let vocab = registry_vocab(&registry);
        let model = config
            .model_url
            .map(|url| ModelAdapter::new(url, config.model_timeout));
        Service {
            registry,
            executor: Executor::new(Simulator::new(config.constants)),
            vocab,
            model,
            fallback: config.fallback,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            model: self.model.is_some(),
        }
    }

    pub fn forms(&self) -> Vec<FormExport> {
        self.registry.export()
    }

    pub async fn translate(&self, req: &TranslateRequest) -> Result<TranslateResponse, ApiError> {
        if req.question.trim().is_empty() {
            return Err(ApiError::bad_request("question must not be empty"));
        }
        match req.engine.unwrap_or_default() {
            Engine::Reference => self.reference(&req.question, Vec::new()),
            Engine::Model => {
                let fallback = req.fallback.unwrap_or(self.fallback);
                let outcome = match &self.model {
                    Some(model) => model.translate(&req.question, &self.vocab).await,
                    None => Err(AdapterError::NotConfigured),
                };
                match outcome {
                    Ok((program, warnings)) => Ok(TranslateResponse {
                        program: print_program(&program),
                        source: Engine::Model,
                        form_id: None,
                        warnings,
                    }),
                    Err(e) if fallback => self.reference(
                        &req.question,
                        vec![format!("{e}; used the reference translator")],
                    ),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    fn reference(
        &self,
        question: &str,
        warnings: Vec<String>,
    ) -> Result<TranslateResponse, ApiError> {
        let m = self.registry.match_question(question)?;
        Ok(TranslateResponse {
            program: print_program(&m.program),
            source: Engine::Reference,
            form_id: Some(m.form_id),
            warnings,
        })
    }

    /// Parses and runs a program. The simulation is CPU-bound, so callers
    /// on an async runtime should go through [`Service::execute_blocking`].
    pub fn execute(&self, req: &ExecuteRequest) -> Result<QaResponse, ApiError> {
        if req.program.trim().is_empty() {
            return Err(ApiError::bad_request("program must not be empty"));
        }
        let program = parse(&req.program)?;
        self.run(&program)
    }

    pub fn run(&self, program: &Program) -> Result<QaResponse, ApiError> {
        let (answer, run) = self.executor.execute_with_run(program)?;
        let values = series(&run, program.variable);
        let idx = downsample_indices(values.len(), MAX_SERIES_POINTS);
        let payload = SeriesPayload {
            variable: program.variable,
            steps: idx.iter().map(|&i| i as u32).collect(),
            values: idx.iter().map(|&i| values[i]).collect(),
            m_n: idx.iter().map(|&i| run.m_n[i]).collect(),
        };
        Ok(QaResponse {
            program: print_program(program),
            source: None,
            form_id: None,
            answer,
            series: payload,
            params_used: run.params,
            warnings: Vec::new(),
        })
    }

    pub async fn qa(
        self: &std::sync::Arc<Self>,
        req: &TranslateRequest,
    ) -> Result<QaResponse, ApiError> {
        let translated = self.translate(req).await?;
        let mut resp = self
            .execute_blocking(ExecuteRequest {
                program: translated.program,
            })
            .await?;
        resp.source = Some(translated.source);
        resp.form_id = translated.form_id;
        resp.warnings = translated.warnings;
        Ok(resp)
    }

    pub async fn execute_blocking(
        self: &std::sync::Arc<Self>,
        req: ExecuteRequest,
    ) -> Result<QaResponse, ApiError> {
        let this = std::sync::Arc::clone(self);
        tokio::task::spawn_blocking(move || this.execute(&req))
            .await
            .unwrap_or_else(|e| {
                Err(ApiError::new(
                    500,
                    "internal",
                    format!("execution task failed: {e}"),
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qapt_core::dsl::Variable;

    #[test]
    fn execute_downsamples_long_runs() {
        let svc = Service::new(ServiceConfig::default());
        let resp = svc
            .execute(&ExecuteRequest {
                program: "FinalValue(four_box_model(SetTo(N,9999)),S_north)".into(),
            })
            .unwrap();
        assert_eq!(resp.series.variable, Variable::SNorth);
        assert_eq!(resp.series.steps.len(), MAX_SERIES_POINTS);
        assert_eq!(resp.series.values.len(), MAX_SERIES_POINTS);
        assert_eq!(resp.series.m_n.len(), MAX_SERIES_POINTS);
        assert_eq!(*resp.series.steps.last().unwrap(), 9999);
        assert_eq!(resp.answer.as_number(), resp.series.values.last().copied());
        assert_eq!(resp.params_used.n, 9999);
    }

    #[test]
    fn parse_errors_carry_position() {
        let svc = Service::new(ServiceConfig::default());
        let err = svc
            .execute(&ExecuteRequest {
                program: "FinalValue(four_box_model(),M_n".into(),
            })
            .unwrap_err();
        assert_eq!(err.status, 422);
        assert_eq!(err.body.error, "parse_error");
        assert_eq!(err.body.position, Some(31));
        assert!(!err.body.expected.is_empty());

        let err = svc
            .execute(&ExecuteRequest {
                program: "FinalValue(bad".into(),
            })
            .unwrap_err();
        assert_eq!(err.status, 422);
        assert_eq!(err.body.position, Some(11));
    }

    #[test]
    fn blank_program_is_bad_request() {
        let svc = Service::new(ServiceConfig::default());
        assert_eq!(
            svc.execute(&ExecuteRequest {
                program: "  ".into()
            })
            .unwrap_err()
            .status,
            400
        );
    }
}

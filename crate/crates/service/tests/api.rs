use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use qapt_core::dsl::parse;
use qapt_core::qforms::Registry;
use qapt_core::textcodec::{encode_as, registry_vocab, Mode};
use qapt_core::wire::PredictMessage;
use qapt_service::{router, Service, ServiceConfig};

const ROW1_Q: &str = "What is the value of M_n at time step 4000 if Fwn is 5000?";
const ROW1_P: &str = "FinalValue(four_box_model(SetTo(N,4000),SetTo(Fwn,5000)),M_n)";

fn app_with(config: ServiceConfig) -> Router {
    router(Arc::new(Service::new(config)), true)
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: &str,
) -> (StatusCode, Value, axum::http::HeaderMap) {
    let mut req = Request::builder()
        .method(method)
        .uri(uri)
        .header("origin", "http://console.test");
    if method == "POST" {
        req = req.header("content-type", "application/json");
    }
    let resp = app
        .clone()
        .oneshot(req.body(Body::from(body.to_string())).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value, headers)
}

/// Starts a stub adapter on an ephemeral port and returns its base URL.
async fn stub(handler: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, handler).await.unwrap() });
    format!("http://{addr}")
}

fn model_config(url: String, fallback: bool) -> ServiceConfig {
    ServiceConfig {
        model_url: Some(url),
        fallback,
        model_timeout: Duration::from_secs(2),
        ..ServiceConfig::default()
    }
}

/// Answers every question with a fixed program, encoded the way a trained
/// model's output would be.
fn fixed_answer(program: &'static str) -> Router {
    Router::new().route(
        "/predict",
        post(move |Json(msg): Json<PredictMessage>| async move {
            assert_eq!(msg.direction, qapt_core::metrics::Direction::Qtp);
            let vocab = registry_vocab(&Registry::new());
            let seq = encode_as(program, Mode::Program, &vocab);
            Json(PredictMessage {
                direction: msg.direction,
                tokens: seq.ids,
                values: seq.value_dict,
            })
        }),
    )
}

#[tokio::test]
async fn translate_table_row() {
    let (status, body, _) = call(
        &app(),
        "POST",
        "/api/translate",
        &json!({ "question": ROW1_Q }).to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["program"], ROW1_P);
    assert_eq!(body["source"], "reference");
    assert_eq!(body["form_id"], 1);
}

#[tokio::test]
async fn translate_rejects_bad_input() {
    let app = app();
    let (status, body, _) = call(
        &app,
        "POST",
        "/api/translate",
        r#"{"question":"what's for lunch"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "no_match");
    for bad in ["{not json", r#"{"q":"x"}"#, r#"{"question":"   "}"#, ""] {
        let (status, body, _) = call(&app, "POST", "/api/translate", bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(body["error"], "bad_request");
    }
}

#[tokio::test]
async fn execute_boolean_and_defaults() {
    let app = app();
    let p = "ChangeSign(four_box_model(SetTo(Fwn,45113),SetTo(M_ek,2.7e7)),M_n)";
    let (status, body, _) = call(
        &app,
        "POST",
        "/api/execute",
        &json!({ "program": p }).to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["answer"]["kind"], "bool");
    assert!(body["answer"]["value"].is_boolean());
    assert_eq!(body["program"], p);

    let (status, body, _) = call(
        &app,
        "POST",
        "/api/execute",
        r#"{"program":"FinalValue(four_box_model(),M_n)"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        body["params_used"],
        serde_json::to_value(qapt_core::boxmodel::default_params()).unwrap()
    );
    let steps = body["series"]["steps"].as_array().unwrap();
    let values = body["series"]["values"].as_array().unwrap();
    assert!(steps.len() <= 2000);
    assert_eq!(steps.len(), values.len());
    assert_eq!(steps.len(), body["series"]["m_n"].as_array().unwrap().len());
    assert_eq!(steps[0], 0);
    assert_eq!(*steps.last().unwrap(), body["params_used"]["N"]);
    assert_eq!(values.last().unwrap(), &body["answer"]["value"]);
}

#[tokio::test]
async fn execute_series_endpoints_match_full_run() {
    let program = parse("FinalValue(four_box_model(SetTo(N,5001)),T_low)").unwrap();
    let run = qapt_core::boxmodel::Simulator::default()
        .run(&qapt_core::executor::resolve(&program.run).unwrap())
        .unwrap();
    let (_, body, _) = call(
        &app(),
        "POST",
        "/api/execute",
        &json!({ "program": program.to_string() }).to_string(),
    )
    .await;
    let values = body["series"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 2000);
    assert_eq!(values[0].as_f64().unwrap(), run.t_low[0]);
    assert_eq!(
        values.last().unwrap().as_f64().unwrap(),
        *run.t_low.last().unwrap()
    );
    let m_n = body["series"]["m_n"].as_array().unwrap();
    assert_eq!(
        m_n.last().unwrap().as_f64().unwrap(),
        *run.m_n.last().unwrap()
    );
}

#[tokio::test]
async fn execute_errors() {
    let app = app();
    let (status, body, _) = call(
        &app,
        "POST",
        "/api/execute",
        r#"{"program":"FinalValue(bad"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_program");
    assert_eq!(body["position"], 11);
    assert!(!body["expected"].as_array().unwrap().is_empty());

    let (status, body, _) = call(
        &app,
        "POST",
        "/api/execute",
        r#"{"program":"FinalValue(four_box_model(SetTo(D_low0,99999)),M_n)"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_params");

    let (status, _, _) = call(&app, "POST", "/api/execute", r#"{"prog":"x"}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn qa_composes_and_is_deterministic() {
    let app = app();
    let req = json!({ "question": "If I increase Fwn by 2052, will M_n increase?" }).to_string();
    let (status, first, _) = call(&app, "POST", "/api/qa", &req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        first["program"],
        "IncreaseOf(four_box_model(IncreaseBy(Fwn,2052)),M_n)"
    );
    assert_eq!(first["answer"]["kind"], "bool");
    assert_eq!(first["source"], "reference");
    let (_, second, _) = call(&app, "POST", "/api/qa", &req).await;
    assert_eq!(first, second);

    let (status, body, _) = call(
        &app,
        "POST",
        "/api/qa",
        r#"{"question":"what's for lunch"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "no_match");
}

#[tokio::test]
async fn forms_health_and_cors() {
    let app = app();
    let (status, forms, headers) = call(&app, "GET", "/api/forms", "").await;
    assert_eq!(status, StatusCode::OK);
    let forms = forms.as_array().unwrap();
    assert_eq!(forms.len(), 10);
    for f in forms {
        parse(f["program_example"].as_str().unwrap()).unwrap();
    }
    assert_eq!(headers.get("access-control-allow-origin").unwrap(), "*");

    let (status, health, _) = call(&app, "GET", "/healthz", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health, json!({ "status": "ok", "model": false }));

    let prod = router(Arc::new(Service::new(ServiceConfig::default())), false);
    let (_, _, headers) = call(&prod, "GET", "/healthz", "").await;
    assert!(headers.get("access-control-allow-origin").is_none());
}

#[tokio::test]
async fn model_engine_uses_adapter_output() {
    let url = stub(fixed_answer(
        "FinalValue(four_box_model(SetTo(Fwn,49243)),M_n)",
    ))
    .await;
    let app = app_with(model_config(url, true));
    let req = json!({ "question": ROW1_Q, "engine": "model" }).to_string();
    let (status, body, _) = call(&app, "POST", "/api/translate", &req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["source"], "model");
    assert_eq!(
        body["program"],
        "FinalValue(four_box_model(SetTo(Fwn,49243)),M_n)"
    );
    assert!(body.get("form_id").is_none());

    let (_, health, _) = call(&app, "GET", "/healthz", "").await;
    assert_eq!(health["model"], true);
}

#[tokio::test]
async fn model_adapter_echo_round_trips_values() {
    // An adapter that echoes its input sends the question back; the question
    // is not a program, so the service must fall back.
    let echo = Router::new().route(
        "/predict",
        post(|Json(msg): Json<PredictMessage>| async move { Json(msg) }),
    );
    let url = stub(echo).await;
    let app = app_with(model_config(url, true));
    let (status, body, _) = call(
        &app,
        "POST",
        "/api/translate",
        &json!({ "question": ROW1_Q, "engine": "model" }).to_string(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["source"], "reference");
    assert_eq!(body["program"], ROW1_P);
    assert!(body["warnings"][0]
        .as_str()
        .unwrap()
        .contains("does not parse"));
}

#[tokio::test]
async fn model_garbage_without_fallback_is_422() {
    let url = stub(fixed_answer("FinalValue(four_box_model(SetTo(Fwn,1)")).await;
    let app = app_with(model_config(url.clone(), false));
    let req = json!({ "question": ROW1_Q, "engine": "model" }).to_string();
    let (status, body, _) = call(&app, "POST", "/api/translate", &req).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "model_output_invalid");

    // The per-request flag overrides the server policy.
    let req = json!({ "question": ROW1_Q, "engine": "model", "fallback": true }).to_string();
    let (status, body, _) = call(&app, "POST", "/api/translate", &req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["source"], "reference");
}

#[tokio::test]
async fn model_adapter_down() {
    // Bind and drop a listener to get a port with nothing behind it.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let req = json!({ "question": ROW1_Q, "engine": "model" }).to_string();

    let (status, body, _) = call(
        &app_with(model_config(url.clone(), true)),
        "POST",
        "/api/translate",
        &req,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["source"], "reference");
    assert_eq!(body["program"], ROW1_P);
    assert!(body["warnings"][0]
        .as_str()
        .unwrap()
        .contains("unreachable"));

    let (status, body, _) = call(
        &app_with(model_config(url, false)),
        "POST",
        "/api/translate",
        &req,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "model_unavailable");
}

#[tokio::test]
async fn model_engine_without_adapter() {
    let req = json!({ "question": ROW1_Q, "engine": "model" }).to_string();
    let (status, body, _) = call(&app(), "POST", "/api/translate", &req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["source"], "reference");
    assert!(!body["warnings"].as_array().unwrap().is_empty());

    let strict = app_with(ServiceConfig {
        fallback: false,
        ..ServiceConfig::default()
    });
    let (status, body, _) = call(&strict, "POST", "/api/translate", &req).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "model_not_configured");
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let app = app();
    let req = json!({ "question": ROW1_Q }).to_string();
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let app = app.clone();
            let req = req.clone();
            tokio::spawn(async move { call(&app, "POST", "/api/qa", &req).await.1 })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

use std::sync::Arc;

use qapt_client::{Client, ClientError};
use qapt_core::wire::{Engine, TranslateRequest};
use qapt_service::{router, serve, Service, ServiceConfig};

async fn start() -> (Client, tokio::sync::oneshot::Sender<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(Arc::new(Service::new(ServiceConfig::default())), false);
    tokio::spawn(serve(listener, app, async {
        let _ = rx.await;
    }));
    (Client::new(format!("http://{addr}/")), tx)
}

fn question(q: &str) -> TranslateRequest {
    TranslateRequest {
        question: q.into(),
        engine: None,
        fallback: None,
    }
}

#[tokio::test]
async fn round_trip_against_live_server() {
    let (client, stop) = start().await;
    assert!(!client.base_url().ends_with('/'));

    let health = client.health().await.unwrap();
    assert_eq!(health.status, "ok");
    assert!(!health.model);

    let t = client
        .translate(&question("If I increase Fwn by 2052, will M_n increase?"))
        .await
        .unwrap();
    assert_eq!(
        t.program,
        "IncreaseOf(four_box_model(IncreaseBy(Fwn,2052)),M_n)"
    );
    assert_eq!(t.source, Engine::Reference);

    let run = client.execute(&t.program).await.unwrap();
    let qa = client
        .qa(&question("If I increase Fwn by 2052, will M_n increase?"))
        .await
        .unwrap();
    assert_eq!(qa.answer, run.answer);
    assert_eq!(qa.series, run.series);
    assert_eq!(qa.form_id, t.form_id);

    assert_eq!(client.forms().await.unwrap().len(), 10);
    stop.send(()).unwrap();
}

#[tokio::test]
async fn api_errors_surface_status_and_body() {
    let (client, _stop) = start().await;
    match client.execute("FinalValue(four_box_model(),M_n").await {
        Err(ClientError::Api { status, body }) => {
            assert_eq!(status, 422);
            assert_eq!(body.error, "parse_error");
            assert_eq!(body.position, Some(31));
        }
        other => panic!("unexpected {other:?}"),
    }
    match client.translate(&question("what's for lunch")).await {
        Err(ClientError::Api { status: 422, body }) => assert_eq!(body.error, "no_match"),
        other => panic!("unexpected {other:?}"),
    }
}

#[tokio::test]
async fn unreachable_server_is_http_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let client = Client::new(format!("http://127.0.0.1:{port}"));
    assert!(matches!(client.health().await, Err(ClientError::Http(_))));
}

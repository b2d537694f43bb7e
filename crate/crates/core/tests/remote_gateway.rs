mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use common::FakeServer;
use ie_forge_core::gateway::{
    ChatBackend, ChatRequest, Gateway, GatewayError, RemoteBackend, RemoteConfig, RetryPolicy,
};

fn backend(url: &str, max_retries: u32) -> RemoteBackend {
    let mut cfg = RemoteConfig::new(url, "test-model");
    cfg.api_key = Some("k".into());
    cfg.retry = RetryPolicy { max_retries, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) };
    RemoteBackend::new(cfg)
}

fn ok_body(n: usize) -> String {
    let choices: Vec<Value> = (0..n).map(|i| json!({"message": {"content": format!("answer {i}")}})).collect();
    json!({ "choices": choices }).to_string()
}

#[test]
fn sends_model_messages_and_sampling() {
    let server = FakeServer::start(|_| (200, ok_body(3)));
    let req = ChatRequest::new("sys", "hello").with_samples(3).with_temperature(1.0).with_seed(5);
    let out = backend(&server.url, 0).complete(&req).unwrap();
    assert_eq!(out, ["answer 0", "answer 1", "answer 2"]);
    let sent = &server.requests()[0];
    let body: Value = serde_json::from_str(&sent.body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hello");
    assert_eq!(body["n"], 3);
    assert_eq!(body["seed"], 5);
    assert!(sent.headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer k"));
}

#[test]
fn retries_server_errors_then_succeeds() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let server =
        FakeServer::start(
            move |_| {
                if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                    (500, "{}".into())
                } else {
                    (200, ok_body(1))
                }
            },
        );
    let out = backend(&server.url, 3).complete(&ChatRequest::new("s", "u")).unwrap();
    assert_eq!(out, ["answer 0"]);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_retry_budget() {
    let server = FakeServer::start(|_| (502, "bad gateway".into()));
    let err = backend(&server.url, 2).complete(&ChatRequest::new("s", "u")).unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn rate_limit_is_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let server = FakeServer::start(move |_| {
        if seen.fetch_add(1, Ordering::SeqCst) == 0 {
            (429, "{}".into())
        } else {
            (200, ok_body(1))
        }
    });
    assert!(backend(&server.url, 1).complete(&ChatRequest::new("s", "u")).is_ok());
    let server = FakeServer::start(|_| (429, "{}".into()));
    assert!(matches!(
        backend(&server.url, 1).complete(&ChatRequest::new("s", "u")),
        Err(GatewayError::RateLimited { .. })
    ));
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(|_| (400, "{\"error\":\"bad\"}".into()));
    let err = backend(&server.url, 3).complete(&ChatRequest::new("s", "u")).unwrap_err();
    assert!(matches!(err, GatewayError::Rejected { status: 400, .. }));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn missing_content_is_an_error_not_an_empty_string() {
    let server = FakeServer::start(|_| (200, json!({"choices": [{"message": {"content": null}}]}).to_string()));
    let err = backend(&server.url, 0).complete(&ChatRequest::new("s", "u")).unwrap_err();
    assert!(matches!(err, GatewayError::InvalidResponse(_)));
}

#[test]
fn gateway_preserves_request_order() {
    let server = FakeServer::start(|req| {
        let body: Value = serde_json::from_str(&req.body).unwrap();
        let user = body["messages"][1]["content"].as_str().unwrap().to_string();
        (200, json!({"choices": [{"message": {"content": user}}]}).to_string())
    });
    let gw = Gateway::new(backend(&server.url, 0), 4).unwrap();
    let reqs: Vec<ChatRequest> = (0..12).map(|i| ChatRequest::new("s", format!("q{i}"))).collect();
    let out: Vec<String> = gw.complete_many(&reqs).into_iter().map(|r| r.unwrap().remove(0)).collect();
    let expected: Vec<String> = (0..12).map(|i| format!("q{i}")).collect();
    assert_eq!(out, expected);
}

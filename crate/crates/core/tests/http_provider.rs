use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use collab::provider::{
    ChatMessage, ChatParams, ChatProvider, ChatRequest, HttpProvider, ProviderError, RetryPolicy,
};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Stub {
    hits: Arc<AtomicU32>,
    last_body: Arc<Mutex<Option<Value>>>,
    last_auth: Arc<Mutex<Option<String>>>,
}

fn completion(text: &str) -> Value {
    json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 2}
    })
}

async fn record(stub: &Stub, headers: &HeaderMap, body: Value) -> u32 {
    *stub.last_body.lock().unwrap() = Some(body);
    *stub.last_auth.lock().unwrap() = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    stub.hits.fetch_add(1, Ordering::SeqCst) + 1
}

async fn start() -> (String, Stub) {
    let stub = Stub::default();
    let app = Router::new()
        .route(
            "/ok",
            post(
                |State(s): State<Stub>, h: HeaderMap, Json(b): Json<Value>| async move {
                    record(&s, &h, b).await;
                    Json(completion("ACTION: NONE"))
                },
            ),
        )
        .route(
            "/flaky",
            post(
                |State(s): State<Stub>, h: HeaderMap, Json(b): Json<Value>| async move {
                    if record(&s, &h, b).await <= 2 {
                        (
                            StatusCode::SERVICE_UNAVAILABLE,
                            Json(json!({"error": "busy"})),
                        )
                    } else {
                        (StatusCode::OK, Json(completion("6")))
                    }
                },
            ),
        )
        .route(
            "/limited",
            post(
                |State(s): State<Stub>, h: HeaderMap, Json(b): Json<Value>| async move {
                    record(&s, &h, b).await;
                    (StatusCode::TOO_MANY_REQUESTS, Json(json!({})))
                },
            ),
        )
        .route(
            "/denied",
            post(
                |State(s): State<Stub>, h: HeaderMap, Json(b): Json<Value>| async move {
                    record(&s, &h, b).await;
                    (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})))
                },
            ),
        )
        .route(
            "/garbage",
            post(
                |State(s): State<Stub>, h: HeaderMap, Json(b): Json<Value>| async move {
                    record(&s, &h, b).await;
                    Json(json!({"choices": []}))
                },
            ),
        )
        .with_state(stub.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (base, stub)
}

fn provider(base: &str, path: &str) -> HttpProvider {
    HttpProvider::new(
        format!("{base}{path}"),
        "test-model",
        Some("sk-test".into()),
    )
    .with_retry(RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 5,
    })
}

fn request() -> ChatRequest {
    ChatRequest {
        system_prompt: "You are Peter.".into(),
        messages: vec![ChatMessage::new("Benjamin (Client)", "hello")],
        params: ChatParams {
            temperature: 0.2,
            max_tokens: 64,
            model_name: String::new(),
        },
    }
}

#[tokio::test]
async fn sends_openai_shaped_body_with_bearer_key() {
    let (base, stub) = start().await;
    let resp = provider(&base, "/ok").complete(&request()).await.unwrap();
    assert_eq!(resp.text, "ACTION: NONE");
    assert_eq!(
        (resp.usage.prompt_tokens, resp.usage.completion_tokens),
        (11, 2)
    );
    let body = stub.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Benjamin (Client): hello");
    assert_eq!(
        stub.last_auth.lock().unwrap().as_deref(),
        Some("Bearer sk-test")
    );
}

#[tokio::test]
async fn retries_server_errors_then_succeeds() {
    let (base, stub) = start().await;
    let resp = provider(&base, "/flaky")
        .complete(&request())
        .await
        .unwrap();
    assert_eq!(resp.text, "6");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn gives_up_after_max_attempts_on_rate_limit() {
    let (base, stub) = start().await;
    let err = provider(&base, "/limited")
        .complete(&request())
        .await
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::Unavailable { attempts: 3, .. }),
        "{err:?}"
    );
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (base, stub) = start().await;
    let err = provider(&base, "/denied")
        .complete(&request())
        .await
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::Unavailable { attempts: 1, .. }),
        "{err:?}"
    );
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn malformed_completion_is_reported() {
    let (base, _) = start().await;
    let err = provider(&base, "/garbage")
        .complete(&request())
        .await
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::MalformedResponse(_)),
        "{err:?}"
    );
}

#[tokio::test]
async fn unreachable_endpoint_exhausts_retries() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = provider(&format!("http://{addr}"), "/x")
        .complete(&request())
        .await
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::Unavailable { attempts: 3, .. }),
        "{err:?}"
    );
}

#[tokio::test]
async fn invalid_params_fail_before_any_request() {
    let (base, stub) = start().await;
    let mut req = request();
    req.params.temperature = 5.0;
    let err = provider(&base, "/ok").complete(&req).await.unwrap_err();
    assert!(matches!(err, ProviderError::InvalidParams(_)));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 0);
}

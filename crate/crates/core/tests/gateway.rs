mod common;

use std::sync::Arc;
use std::time::Duration;

use collab::gateway::Gateway;
use collab::session::{Outcome, Session};
use collab::timeline::Event;
use common::*;
use futures::StreamExt;
use reqwest::StatusCode;
use serde_json::{json, Value};

async fn setup() -> (Arc<Session>, Served, reqwest::Client) {
    let session = Session::builder(small_config()).build().unwrap();
    let gw = Gateway::new(Some(ADMIN.into()));
    gw.insert(Arc::clone(&session));
    (session, serve(gw).await, reqwest::Client::new())
}

fn url(srv: &Served, path: &str) -> String {
    format!("{}/sessions/main{path}", srv.base)
}

async fn post_msg(http: &reqwest::Client, srv: &Served, author: &str, text: &str) -> StatusCode {
    http.post(url(srv, "/messages"))
        .json(&json!({"author": author, "text": text}))
        .send()
        .await
        .unwrap()
        .status()
}

fn sse_ids(body: &str) -> Vec<u64> {
    body.lines()
        .filter_map(|l| l.strip_prefix("id:"))
        .map(|v| v.trim().parse().unwrap())
        .collect()
}

#[tokio::test]
async fn message_posting_errors() {
    let (_s, srv, http) = setup().await;
    assert_eq!(
        post_msg(&http, &srv, "Benjamin", "hi").await,
        StatusCode::CREATED
    );
    assert_eq!(
        post_msg(&http, &srv, "Mallory", "hi").await,
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        post_msg(&http, &srv, "Peter", "impersonating").await,
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        post_msg(&http, &srv, "Benjamin", "   ").await,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let missing = http
        .get(format!("{}/sessions/nope", srv.base))
        .send()
        .await
        .unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    let body: Value = missing.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("nope"));
}

#[tokio::test]
async fn events_since_and_out_of_range() {
    let (_s, srv, http) = setup().await;
    for i in 0..3 {
        post_msg(&http, &srv, "Benjamin", &format!("m{i}")).await;
    }
    let tail: Vec<Event> = http
        .get(url(&srv, "/events?since=3"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(tail.iter().map(|e| e.seq).collect::<Vec<_>>(), [4, 5]);
    let bad = http
        .get(url(&srv, "/events?since=99"))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn admin_routes_require_token() {
    let (_s, srv, http) = setup().await;
    let add = json!({"name": "Jeff", "role_name": "QA", "persona": "You review code."});
    let anon = http
        .post(url(&srv, "/agents"))
        .json(&add)
        .send()
        .await
        .unwrap();
    assert_eq!(anon.status(), StatusCode::UNAUTHORIZED);
    let wrong = http
        .post(url(&srv, "/agents"))
        .bearer_auth("guess")
        .json(&add)
        .send()
        .await
        .unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    let reasoning = http
        .get(url(&srv, "/agents/Peter/reasoning"))
        .send()
        .await
        .unwrap();
    assert_eq!(reasoning.status(), StatusCode::UNAUTHORIZED);

    let ok = http
        .post(url(&srv, "/agents"))
        .bearer_auth(ADMIN)
        .json(&add)
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), StatusCode::CREATED);
    let dup = http
        .post(url(&srv, "/agents"))
        .bearer_auth(ADMIN)
        .json(&add)
        .send()
        .await
        .unwrap();
    assert_eq!(dup.status(), StatusCode::CONFLICT);
    let human = http
        .get(url(&srv, "/agents/Benjamin/reasoning"))
        .bearer_auth(ADMIN)
        .send()
        .await
        .unwrap();
    assert_eq!(human.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn gateway_without_token_has_no_admin() {
    let session = Session::builder(small_config()).build().unwrap();
    let gw = Gateway::new(None);
    gw.insert(session);
    let srv = serve(gw).await;
    let resp = reqwest::Client::new()
        .get(url(&srv, "/agents/Peter/reasoning"))
        .bearer_auth("")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn reasoning_log_after_step() {
    let (s, srv, http) = setup().await;
    s.step_agent("Peter").await.unwrap();
    let log: Value = http
        .get(url(&srv, "/agents/Peter/reasoning"))
        .bearer_auth(ADMIN)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(log.as_array().unwrap().len(), 1);
    assert_eq!(log[0]["reasoning"], "nothing to add");
}

#[tokio::test]
async fn create_session_over_http() {
    let (_s, srv, http) = setup().await;
    let config = json!({
        "seed": 3,
        "providers": {"s": {"kind": "scripted", "rules": [{"response": "ACTION: NONE", "repeat": true}]}},
        "agents": [
            {"name": "Peter", "role_name": "CEO", "persona": "asset:persona_ceo"},
            {"name": "Benjamin", "role_name": "Client", "is_human": true}
        ]
    });
    let body = json!({"id": "second", "config": config, "scripted": true});
    let anon = http
        .post(format!("{}/sessions", srv.base))
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(anon.status(), StatusCode::UNAUTHORIZED);
    let created = http
        .post(format!("{}/sessions", srv.base))
        .bearer_auth(ADMIN)
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(created.status(), StatusCode::CREATED);
    let v: Value = created.json().await.unwrap();
    assert_eq!(v["session_id"], "second");
    assert_eq!(v["status"], "running");
    let agents: Value = http
        .get(format!("{}/sessions/second/agents", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(agents.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn ended_session_rejects_posts_and_stream_closes() {
    let (s, srv, http) = setup().await;
    post_msg(&http, &srv, "Benjamin", "one").await;
    post_msg(&http, &srv, "Benjamin", "two").await;
    s.end(Outcome::Interrupted);
    assert_eq!(
        post_msg(&http, &srv, "Benjamin", "late").await,
        StatusCode::CONFLICT
    );

    let full = http
        .get(url(&srv, "/stream"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(sse_ids(&full), [1, 2, 3, 4]);
    let resumed = http
        .get(url(&srv, "/stream"))
        .header("Last-Event-ID", "2")
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(sse_ids(&resumed), [3, 4]);

    let session: Value = http
        .get(url(&srv, ""))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(session["status"], "ended");
    assert_eq!(session["outcome"], "interrupted");
}

#[tokio::test]
async fn live_stream_delivers_new_events() {
    let (_s, srv, http) = setup().await;
    let resp = http.get(url(&srv, "/stream?since=2")).send().await.unwrap();
    let mut stream = resp.bytes_stream();
    post_msg(&http, &srv, "Benjamin", "streamed hello").await;
    let mut buf = String::new();
    let found = tokio::time::timeout(Duration::from_secs(5), async {
        while let Some(chunk) = stream.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk.unwrap()));
            if buf.contains("streamed hello") {
                return true;
            }
        }
        false
    })
    .await
    .unwrap_or(false);
    assert!(found, "stream never delivered the message: {buf:?}");
    assert_eq!(sse_ids(&buf), [3]);
}

#[tokio::test]
async fn report_counts_activity() {
    let (s, srv, http) = setup().await;
    post_msg(&http, &srv, "Benjamin", "requirements").await;
    http.post(url(&srv, "/typing"))
        .json(&json!({"author": "Benjamin"}))
        .send()
        .await
        .unwrap();
    s.step_agent("Peter").await.unwrap();
    let report: Value = http
        .get(url(&srv, "/report"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let rows = report["activity"].as_array().unwrap();
    let ben = rows.iter().find(|r| r["name"] == "Benjamin").unwrap();
    assert_eq!(ben["messages"], 1);
    assert_eq!(report["turns"].as_array().unwrap().len(), 1);
    assert_eq!(report["head"], 4);
}

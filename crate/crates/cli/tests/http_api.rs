use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use litscope::{api, Hub};
use litscope_core::{Services, SessionStore, SystemClock};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

struct App {
    router: Router,
    _dir: tempfile::TempDir,
}

fn app() -> App {
    let dir = tempfile::tempdir().unwrap();
    let hub = Hub::open(SessionStore::open(dir.path()).unwrap(), Services::mock(Arc::new(SystemClock))).unwrap();
    App {
        router: api::router(Arc::new(hub)),
        _dir: dir,
    }
}

impl App {
    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(match body {
                Some(v) => Body::from(v.to_string()),
                None => Body::empty(),
            })
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    async fn session(&self) -> String {
        let (status, v) = self.post("/sessions", json!({})).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_owned()
    }

    /// Creates a pipeline and steps/approves it to its report.
    async fn explored(&self, sid: &str, query: &str) -> String {
        let (status, p) = self.post(&format!("/sessions/{sid}/pipelines"), json!({ "query_text": query })).await;
        assert_eq!(status, StatusCode::CREATED, "{p}");
        let pid = p["pipeline_id"].as_str().unwrap().to_owned();
        for i in 0..4 {
            let (s, v) = self.post(&format!("/pipelines/{pid}/step"), json!({})).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            assert_eq!(v["node"]["status"], "awaiting_approval", "{v}");
            let (s, v) = self.post(&format!("/pipelines/{pid}/nodes/{pid}.n{i}/approve"), json!({})).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        }
        pid
    }
}

fn code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

#[tokio::test]
async fn new_sessions_are_empty_and_distinct() {
    let app = app();
    let a = app.session().await;
    let b = app.session().await;
    assert_ne!(a, b);
    let (status, v) = app.get(&format!("/sessions/{a}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["pipelines"], json!([]));
    assert_eq!(v["paper_count"], 0);
    let (status, v) = app.get("/sessions/s404").await;
    assert_eq!((status, code(&v)), (StatusCode::NOT_FOUND, "UnknownSession"));
}

#[tokio::test]
async fn approving_a_pending_node_is_a_conflict_without_side_effects() {
    let app = app();
    let sid = app.session().await;
    let (_, p) = app.post(&format!("/sessions/{sid}/pipelines"), json!({ "query_text": "visualization for AI" })).await;
    let pid = p["pipeline_id"].as_str().unwrap();
    let (_, before) = app.get(&format!("/sessions/{sid}")).await;
    for _ in 0..2 {
        let (status, v) = app.post(&format!("/pipelines/{pid}/nodes/{pid}.n0/approve"), json!({})).await;
        assert_eq!((status, code(&v)), (StatusCode::CONFLICT, "InvalidStatus"));
    }
    let (_, after) = app.get(&format!("/sessions/{sid}")).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn repeated_approve_returns_the_same_conflict() {
    let app = app();
    let sid = app.session().await;
    let (_, p) = app.post(&format!("/sessions/{sid}/pipelines"), json!({ "query_text": "visualization for AI" })).await;
    let pid = p["pipeline_id"].as_str().unwrap();
    app.post(&format!("/pipelines/{pid}/step"), json!({})).await;
    let (status, _) = app.post(&format!("/pipelines/{pid}/nodes/{pid}.n0/approve"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    let (_, seq_before) = app.get(&format!("/sessions/{sid}")).await;
    let first = app.post(&format!("/pipelines/{pid}/nodes/{pid}.n0/approve"), json!({})).await;
    let second = app.post(&format!("/pipelines/{pid}/nodes/{pid}.n0/approve"), json!({})).await;
    assert_eq!(first.0, StatusCode::CONFLICT);
    assert_eq!(first, second);
    let (_, seq_after) = app.get(&format!("/sessions/{sid}")).await;
    assert_eq!(seq_before["last_seq"], seq_after["last_seq"]);
}

#[tokio::test]
async fn gets_are_idempotent() {
    let app = app();
    let sid = app.session().await;
    let pid = app.explored(&sid, "visualization for AI").await;
    for uri in [
        format!("/sessions/{sid}"),
        format!("/pipelines/{pid}"),
        format!("/pipelines/{pid}/nodes/{pid}.n2"),
        format!("/sessions/{sid}/tree"),
        format!("/sessions/{sid}/projection"),
    ] {
        let a = app.get(&uri).await;
        let b = app.get(&uri).await;
        assert_eq!(a.0, StatusCode::OK, "{uri}: {}", a.1);
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn tree_after_two_pipelines_has_two_explored_nodes_and_an_edge() {
    let app = app();
    let sid = app.session().await;
    app.explored(&sid, "visualization for AI").await;
    app.explored(&sid, "saliency maps for model debugging").await;
    let (status, tree) = app.get(&format!("/sessions/{sid}/tree")).await;
    assert_eq!(status, StatusCode::OK);
    let nodes = tree["nodes"].as_object().unwrap();
    assert_eq!(nodes.len(), 2);
    assert!(nodes.values().all(|n| n["state"] == "explored"));
    let child = &nodes[&format!("{sid}.t2")];
    assert_eq!(child["parent_id"], format!("{sid}.t1"));
    let offset = child["edge"]["semantic_offset_pct"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&offset));
    assert!(child["edge"]["delta"].as_str().unwrap().contains('+'));
}

#[tokio::test]
async fn propose_materialize_and_inspect() {
    let app = app();
    let sid = app.session().await;
    let pid = app.explored(&sid, "visualization for AI").await;
    let (status, v) = app.post(&format!("/tree/{sid}.t1/propose"), json!({ "n": 3 })).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let proposed = v["proposed"].as_array().unwrap();
    assert_eq!(proposed.len(), 3);
    let node = proposed[0]["node_id"].as_str().unwrap();
    let (status, run) = app
        .post(&format!("/tree/{node}/materialize"), json!({ "auto_approve": true, "run_to_next_checkpoint": true }))
        .await;
    assert_eq!(status, StatusCode::CREATED, "{run}");
    let pid2 = run["pipeline_id"].as_str().unwrap();
    let (_, v) = app.post(&format!("/pipelines/{pid2}/step"), json!({})).await;
    assert_eq!(v["node"]["kind"], "synthesis", "{v}");
    let (status, again) = app.post(&format!("/tree/{node}/materialize"), json!({})).await;
    assert_eq!((status, code(&again)), (StatusCode::CONFLICT, "AlreadyExplored"));

    let (status, view) = app.get(&format!("/pipelines/{pid}/nodes/{pid}.n3")).await;
    assert_eq!(status, StatusCode::OK);
    let links = view["provenance"].as_array().unwrap();
    assert!(!links.is_empty());
    for l in links {
        assert!(l["abs_url"].as_str().unwrap().starts_with("https://arxiv.org/abs/"));
        assert!(!l["markers"].as_array().unwrap().is_empty());
    }
    let (status, c) = app.get(&format!("/tree/{sid}.t1/centroid")).await;
    assert_eq!(status, StatusCode::OK, "{c}");
    assert_eq!(c["owner"]["query"], format!("{sid}.t1"));
}

#[tokio::test]
async fn paper_state_changes_colour_in_the_projection() {
    let app = app();
    let sid = app.session().await;
    let pid = app.explored(&sid, "visualization for AI").await;
    let (_, run) = app.get(&format!("/pipelines/{pid}")).await;
    let verdict = &run["nodes"][2]["output"]["value"]["verdicts"][0];
    let id = verdict["arxiv_id"].as_str().unwrap();
    let (status, v) = app.post(&format!("/papers/{id}/state"), json!({ "state": "rejected" })).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["user_state"], "rejected");
    let (_, proj) = app.get(&format!("/sessions/{sid}/projection?iterations={sid}.t1")).await;
    let point = proj["points"].as_array().unwrap().iter().find(|p| p["owner"]["paper"] == id).unwrap();
    assert_eq!(point["display_state"], "red");
    let (_, paper) = app.get(&format!("/sessions/{sid}/papers/{id}")).await;
    assert_eq!(paper["user_state"], "rejected");
    assert!(paper["year"].as_i64().unwrap() > 1990);

    let (status, v) = app.post("/papers/0000.00000/state", json!({ "state": "accepted" })).await;
    assert_eq!((status, code(&v)), (StatusCode::NOT_FOUND, "UnknownPaper"));
    let (status, v) = app.post(&format!("/papers/{id}/state"), json!({ "state": "maybe" })).await;
    assert_eq!((status, code(&v)), (StatusCode::BAD_REQUEST, "InvalidRequest"));
}

#[tokio::test]
async fn edits_invalidate_downstream_nodes() {
    let app = app();
    let sid = app.session().await;
    let pid = app.explored(&sid, "visualization for AI").await;
    let (status, v) = app
        .post(
            &format!("/pipelines/{pid}/nodes/{pid}.n0/edit"),
            json!({ "payload": { "kind": "keyword_set", "value": ["saliency"] } }),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["node"]["status"], "edited");
    let statuses: Vec<&str> = v["pipeline"]["nodes"].as_array().unwrap().iter().map(|n| n["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["edited", "pending", "pending", "pending"]);
    let (status, v) = app
        .post(&format!("/pipelines/{pid}/nodes/{pid}.n0/edit"), json!({ "payload": { "kind": "keyword_set", "value": [] } }))
        .await;
    assert_eq!((status, code(&v)), (StatusCode::BAD_REQUEST, "InvalidPayload"), "{v}");
}

#[tokio::test]
async fn malformed_requests_are_bad_requests() {
    let app = app();
    let sid = app.session().await;
    let (status, v) = app.post(&format!("/sessions/{sid}/pipelines"), json!({ "query_text": "  " })).await;
    assert_eq!((status, code(&v)), (StatusCode::BAD_REQUEST, "EmptyQuery"));
    let (status, v) = app.post(&format!("/sessions/{sid}/pipelines"), json!({ "nonsense": 1 })).await;
    assert_eq!((status, code(&v)), (StatusCode::BAD_REQUEST, "InvalidRequest"));
    let (status, v) = app.get("/pipelines/s1.p9").await;
    assert_eq!((status, code(&v)), (StatusCode::NOT_FOUND, "UnknownPipeline"));
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let open = || {
        let hub = Hub::open(SessionStore::open(dir.path()).unwrap(), Services::mock(Arc::new(SystemClock))).unwrap();
        App {
            router: api::router(Arc::new(hub)),
            _dir: tempfile::tempdir().unwrap(),
        }
    };
    let first = open();
    let sid = first.session().await;
    first.explored(&sid, "visualization for AI").await;
    let (_, before) = first.get(&format!("/sessions/{sid}")).await;
    drop(first);
    let second = open();
    let (_, after) = second.get(&format!("/sessions/{sid}")).await;
    assert_eq!(before, after);
    assert_ne!(second.session().await, sid);
}

/// Reads SSE frames from a raw socket until `want` data lines arrived.
async fn read_events(stream: &mut tokio::net::TcpStream, want: usize) -> Vec<Value> {
    let mut buf = Vec::new();
    let mut events = Vec::new();
    let mut chunk = [0u8; 4096];
    while events.len() < want {
        let n = tokio::time::timeout(Duration::from_secs(10), stream.read(&mut chunk)).await.unwrap().unwrap();
        assert!(n > 0, "stream closed");
        buf.extend_from_slice(&chunk[..n]);
        let text = String::from_utf8_lossy(&buf);
        events = text
            .lines()
            .filter_map(|l| l.strip_prefix("data: "))
            .filter_map(|d| serde_json::from_str(d).ok())
            .collect();
    }
    events
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn event_stream_delivers_node_events_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let hub = Arc::new(Hub::open(SessionStore::open(dir.path()).unwrap(), Services::mock(Arc::new(SystemClock))).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let router = api::router(hub.clone());
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });

    let app = App {
        router: api::router(hub),
        _dir: tempfile::tempdir().unwrap(),
    };
    let sid = app.session().await;
    let (_, p) = app.post(&format!("/sessions/{sid}/pipelines"), json!({ "query_text": "visualization for AI" })).await;
    let pid = p["pipeline_id"].as_str().unwrap().to_owned();

    let mut sock = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET /sessions/{sid}/events HTTP/1.1\r\nHost: {addr}\r\nAccept: text/event-stream\r\n\r\n");
    sock.write_all(req.as_bytes()).await.unwrap();
    // Give the subscription a moment to register before producing events.
    tokio::time::sleep(Duration::from_millis(200)).await;

    app.post(&format!("/pipelines/{pid}/step"), json!({})).await;
    app.post(&format!("/pipelines/{pid}/nodes/{pid}.n0/approve"), json!({})).await;
    let events = read_events(&mut sock, 3).await;
    let kinds: Vec<&str> = events.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["node_started", "node_finished", "node_approved"]);
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "{seqs:?}");
    assert!(events.iter().all(|e| e.get("payload").is_some()));

    let mut replay = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET /sessions/{sid}/events?from=0 HTTP/1.1\r\nHost: {addr}\r\n\r\n");
    replay.write_all(req.as_bytes()).await.unwrap();
    let backlog = read_events(&mut replay, 5).await;
    assert_eq!(backlog[0]["kind"], "session_created");
    assert_eq!(backlog[0]["seq"], 1);
}

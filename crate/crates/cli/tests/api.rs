use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null), text)
}

#[tokio::test]
async fn health() {
    let app = ebp_cli::api::router(None);
    let (status, body, _) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "status": "ok" }));
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let app = ebp_cli::api::router(None);
    let (status, body, _) = call(&app, "GET", "/sessions/42", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
    let (status, _, _) = call(&app, "POST", "/sessions/42/query", Some(json!({ "configKey": "x", "process": 1 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_task_is_rejected() {
    let app = ebp_cli::api::router(None);
    let (status, _, _) = call(&app, "POST", "/sessions", Some(json!({ "n": 3, "k": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn lifecycle_mirrors_the_library() {
    let app = ebp_cli::api::router(None);
    let (status, created, _) = call(&app, "POST", "/sessions", Some(json!({ "n": 3, "k": 2 }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["sessionId"].as_str().unwrap().to_string();
    let base = format!("/sessions/{id}");

    let (_, summary, _) = call(&app, "GET", &base, None).await;
    assert_eq!(summary["phase"], 1);
    assert_eq!(summary["committed"].as_array().unwrap().len(), 27);

    // The same moves through the library, for comparison.
    let mut lib = ebp_core::harness::Session::new(Box::new(
        ebp_core::adversary::Adversary::new(ebp_core::TaskSpec::new(3, 2).unwrap()).unwrap(),
    ));

    let start = "@012:";
    let (status, stepped, _) = call(&app, "POST", &format!("{base}/query"), Some(json!({ "configKey": start, "process": 1 }))).await;
    assert_eq!(status, StatusCode::OK);
    let c = lib.resolve(start).unwrap();
    let next = lib.step_query(&c, ebp_core::ProcessId(1)).unwrap();
    assert_eq!(stepped["configKey"], json!(lib.key_of(&next)));
    assert!(stepped["states"].is_array());

    let key = stepped["configKey"].as_str().unwrap().to_string();
    let (status, _, _) = call(&app, "POST", &format!("{base}/query"), Some(json!({ "configKey": key, "process": 1 }))).await;
    assert_eq!(status, StatusCode::OK);

    let (status, answer, _) = call(
        &app,
        "POST",
        &format!("{base}/output-query"),
        Some(json!({ "configKey": start, "processes": [1], "value": 1 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(answer["schedule"], Value::Null);

    let (status, _, _) = call(&app, "POST", &format!("{base}/query"), Some(json!({ "configKey": start, "process": 9 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, graph, _) = call(&app, "GET", &format!("{base}/graph?level=0"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(graph["vertices"].as_array().unwrap().len(), 9);
    let (status, _, _) = call(&app, "GET", &format!("{base}/graph?level=40"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, committed, _) = call(
        &app,
        "POST",
        &format!("{base}/commit"),
        Some(json!({ "configKey": start, "schedule": [1, 1] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{committed}");
    assert_eq!(committed["phase"], 2);
    assert!(committed["finalize"]["pivot"].is_number());

    let (_, _, transcript) = call(&app, "GET", &format!("{base}/transcript"), None).await;
    let kinds: Vec<String> = transcript
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds, ["step", "step", "output", "commit", "finalize"]);
    let first: Value = serde_json::from_str(transcript.lines().next().unwrap()).unwrap();
    assert_eq!(first["response"]["configKey"], stepped["configKey"]);
    assert_eq!(first["response"]["states"], stepped["states"]);

    let (_, summary, _) = call(&app, "GET", &base, None).await;
    assert_eq!(summary["phase"], 2);
    assert_eq!(summary["transcriptLength"], 5);
}

use std::sync::Arc;

use exaddis_service::{bind, serve, SessionStore};
use serde_json::Value;

async fn start() -> (String, tempfile::TempDir, tokio::sync::oneshot::Sender<()>) {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = SessionStore::open(dir.path()).unwrap();
    let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(serve(listener, Arc::new(store), async {
        let _ = rx.await;
    }));
    (format!("http://{addr}"), dir, tx)
}

/// The raw text of `"key":<number>` in a JSON body.
fn raw_field<'a>(body: &'a str, key: &str) -> &'a str {
    let start = body.find(&format!("\"{key}\":")).unwrap() + key.len() + 3;
    let rest = &body[start..];
    &rest[..rest.find([',', '}']).unwrap()]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_round_trip() {
    let (base, _dir, _stop) = start().await;
    let http = reqwest::Client::new();

    let resp = http
        .post(format!("{base}/sessions"))
        .body(r#"{"procedure":"e_addis_spending","alpha":0.2}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    let text = resp.text().await.unwrap();
    assert_eq!(raw_field(&text, "level"), "0.097268336296644262");
    let id = serde_json::from_str::<Value>(&text).unwrap()["id"].as_str().unwrap().to_string();

    let level = http.get(format!("{base}/sessions/{id}/level")).send().await.unwrap().text().await.unwrap();
    assert_eq!(raw_field(&level, "level"), "0.097268336296644262");
    assert_eq!(raw_field(&level, "remaining"), "0.20000000000000001");

    let before = http.get(format!("{base}/sessions/{id}/history")).send().await.unwrap().text().await.unwrap();
    let what = http.get(format!("{base}/sessions/{id}/whatif?p=0.5")).send().await.unwrap().text().await.unwrap();
    assert!(raw_field(&what, "next_remaining").starts_with("0.07841457962919"));
    let after = http.get(format!("{base}/sessions/{id}/history")).send().await.unwrap().text().await.unwrap();
    assert_eq!(before, after);

    let d = http
        .post(format!("{base}/sessions/{id}/pvalues"))
        .body(r#"{"p":0.5,"seq":1}"#)
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(raw_field(&d, "new_remaining"), raw_field(&what, "next_remaining"));
    assert_eq!(raw_field(&d, "rejected"), "false");

    let view: Value = http.get(format!("{base}/sessions/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(view["step"], 2);
    let hist: Value = http.get(format!("{base}/sessions/{id}/history")).send().await.unwrap().json().await.unwrap();
    assert_eq!(hist["decisions"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_have_codes_and_constraints() {
    let (base, _dir, _stop) = start().await;
    let http = reqwest::Client::new();

    let resp = http
        .post(format!("{base}/sessions"))
        .body(r#"{"procedure":"e_addis_graph","alpha":0.2,"tau":0.8,"lambda":0.1}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 422);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "invalid_config");
    assert_eq!(body["constraint"], "lambda_bound");

    let resp = http.get(format!("{base}/sessions/missing/level")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    assert_eq!(resp.json::<Value>().await.unwrap()["code"], "not_found");

    let created: Value = http
        .post(format!("{base}/sessions"))
        .body(r#"{"procedure":"addis_graph","alpha":0.1}"#)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = created["id"].as_str().unwrap();

    let resp = http.post(format!("{base}/sessions/{id}/pvalues")).body(r#"{"p":2}"#).send().await.unwrap();
    assert_eq!(resp.status(), 422);
    assert_eq!(resp.json::<Value>().await.unwrap()["constraint"], "p_range");

    let resp = http.post(format!("{base}/sessions/{id}/pvalues")).body("nonsense").send().await.unwrap();
    assert_eq!(resp.status(), 400);
    assert_eq!(resp.json::<Value>().await.unwrap()["code"], "bad_request");

    let resp = http.post(format!("{base}/sessions/{id}/pvalues")).body(r#"{"p":0.2,"seq":4}"#).send().await.unwrap();
    assert_eq!(resp.status(), 409);
    assert_eq!(resp.json::<Value>().await.unwrap()["code"], "sequence_gap");

    let resp = http.get(format!("{base}/sessions/{id}/whatif")).send().await.unwrap();
    assert_eq!(resp.status(), 400);
}

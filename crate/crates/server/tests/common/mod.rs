#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use narrativeplay::progression::Action;
use narrativeplay::provider::Gateway;
use narrativeplay_server::clock::FixedClock;
use narrativeplay_server::config::{ProviderFile, ServiceConfig};
use narrativeplay_server::{router, App};
use serde::Deserialize;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const FIXED_NOW: u64 = 1_700_000_000_000;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/gullhaven")
}

pub fn golden_path() -> PathBuf {
    fixture_dir().join("golden_envelope.json")
}

pub fn narrative() -> String {
    std::fs::read_to_string(fixture_dir().join("narrative.txt")).unwrap()
}

#[derive(Debug, Deserialize)]
pub struct Script {
    pub title: String,
    pub seed: u64,
    pub actions: Vec<Action>,
}

pub fn script() -> Script {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("script.json")).unwrap()).unwrap()
}

pub fn provider() -> ProviderFile {
    ProviderFile::load(&fixture_dir().join("provider.toml")).unwrap()
}

/// An in-process service over `root`, driven through the router.
pub struct Harness {
    pub app: Arc<App>,
    pub router: Router,
    pub root: PathBuf,
}

impl Harness {
    pub fn open(root: &Path, provider: &ProviderFile) -> Self {
        Self::open_with(root, provider, |_| {})
    }

    pub fn open_with(root: &Path, provider: &ProviderFile, tweak: impl FnOnce(&mut ServiceConfig)) -> Self {
        Self::open_parts(root, provider, provider.gateway().unwrap(), tweak)
    }

    pub fn open_parts(
        root: &Path,
        provider: &ProviderFile,
        gateway: Gateway,
        tweak: impl FnOnce(&mut ServiceConfig),
    ) -> Self {
        let mut config = ServiceConfig::new(root.join("data"), root.join("media"));
        tweak(&mut config);
        let media = provider.media_store(&config.media_dir).unwrap();
        let app = Arc::new(
            App::new(config, gateway, media, provider.voices(), Arc::new(FixedClock(FIXED_NOW))).unwrap(),
        );
        Self {
            router: router(Arc::clone(&app)),
            app,
            root: root.to_path_buf(),
        }
    }

    pub async fn raw(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, String, Vec<u8>) {
        let builder = Request::builder().method(method).uri(path);
        let req = match body {
            Some(v) => builder
                .header("content-type", "application/json")
                .body(Body::from(v.to_string()))
                .unwrap(),
            None => builder.body(Body::empty()).unwrap(),
        };
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, content_type, bytes)
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, _, bytes) = self.raw(method, path, body).await;
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, Some(body)).await
    }

    /// Uploads a narrative and polls its job until it settles.
    pub async fn ingest(&self, title: &str, body: &str) -> Value {
        let (status, job) = self.post("/narratives", json!({"title": title, "body": body})).await;
        assert!(status == StatusCode::ACCEPTED || status == StatusCode::OK, "{status}: {job}");
        let id = job["narrative_id"].as_str().unwrap().to_string();
        for _ in 0..3000 {
            let (_, job) = self.get(&format!("/narratives/{id}/job")).await;
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("ingestion of {id} did not finish");
    }

    pub async fn act(&self, session_id: &str, action: &Action) -> (StatusCode, Value) {
        match action {
            Action::Advance => self.post(&format!("/sessions/{session_id}/advance"), json!({})).await,
            Action::Leave => self.post(&format!("/sessions/{session_id}/leave"), json!({})).await,
            Action::Approach { agent_id } => {
                self.post(&format!("/sessions/{session_id}/approach"), json!({"agent_id": agent_id}))
                    .await
            }
            Action::Say { agent_id, text } => {
                self.post(
                    &format!("/sessions/{session_id}/say"),
                    json!({"agent_id": agent_id, "text": text}),
                )
                .await
            }
        }
    }

    pub fn envelope_bytes(&self, session_id: &str) -> Vec<u8> {
        std::fs::read(self.app.store().session_path(session_id)).unwrap()
    }
}

/// Result of the scripted run.
pub struct GoldenRun {
    pub session_id: String,
    pub player: String,
    pub envelope: Vec<u8>,
    pub responses: Vec<Value>,
}

/// Ingests the fixture, starts a session as the top playable character
/// and plays the script. With `restart_after = Some(k)` the service is
/// dropped and reopened over the same directory after the k-th action.
pub async fn golden_run(root: &Path, restart_after: Option<usize>) -> GoldenRun {
    let provider = provider();
    let script = script();
    let mut h = Harness::open(root, &provider);
    let job = h.ingest(&script.title, &narrative()).await;
    assert_eq!(job["state"], "done", "{job}");
    let nid = job["narrative_id"].as_str().unwrap().to_string();

    let (status, chars) = h.get(&format!("/narratives/{nid}/characters")).await;
    assert_eq!(status, StatusCode::OK);
    let top = chars["characters"][0].clone();
    assert_eq!(top["playable"], true);
    let player = top["id"].as_str().unwrap().to_string();

    let (status, created) = h
        .post("/sessions", json!({"narrative_id": nid, "character_id": player, "seed": script.seed}))
        .await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    let session_id = created["session_id"].as_str().unwrap().to_string();
    let mut responses = vec![created];

    for (k, action) in script.actions.iter().enumerate() {
        if restart_after == Some(k) {
            drop(h);
            h = Harness::open(root, &provider);
            let (status, state) = h.get(&format!("/sessions/{session_id}")).await;
            assert_eq!(status, StatusCode::OK, "{state}");
        }
        let (status, resp) = h.act(&session_id, action).await;
        assert_eq!(status, StatusCode::OK, "action {k} {action:?}: {resp}");
        responses.push(resp);
    }
    GoldenRun {
        envelope: h.envelope_bytes(&session_id),
        session_id,
        player,
        responses,
    }
}

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use pushgrasp::files::SceneDocument;
use pushgrasp::server::serve;
use pushgrasp::service::{Service, SessionView, TeleopApi};
use pushgrasp_core::geometry::Point2;
use pushgrasp_core::policy::{pretrain_cae, CaeConfig, Policy, PolicyConfig};
use pushgrasp_core::session::Direction;
use pushgrasp_core::sim::{Scene, TableSpec};
use serde_json::{json, Value};

/// A small, quickly trained policy for API plumbing tests.
pub fn quick_policy(seed: u64) -> Policy {
    let cfg = CaeConfig { num_images: 64, epochs: 1, batch_size: 16, ..CaeConfig::default() };
    let (cae, _) = pretrain_cae(&cfg, seed, |_, _| {}).unwrap();
    Policy::new(cae.encoder, TableSpec::default(), PolicyConfig::default(), seed).unwrap()
}

/// Starts a server on an ephemeral port in a background runtime.
pub fn spawn_server(service: Arc<Service>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(serve(service, "127.0.0.1:0".parse().unwrap(), move |a| tx.send(a).unwrap())).unwrap();
    });
    rx.recv().unwrap()
}

/// Blocking [`TeleopApi`] over the HTTP API.
pub struct HttpApi {
    pub base: String,
    client: reqwest::Client,
    rt: tokio::runtime::Runtime,
}

impl HttpApi {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            base: format!("http://{addr}"),
            client: reqwest::Client::new(),
            rt: tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap(),
        }
    }

    /// Raw request returning status and JSON body.
    pub fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (u16, Value) {
        self.rt.block_on(async {
            let mut req = self.client.request(method, format!("{}{path}", self.base));
            if let Some(b) = body {
                req = req.json(&b);
            }
            let resp = req.send().await.unwrap();
            let status = resp.status().as_u16();
            let bytes = resp.bytes().await.unwrap();
            (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
        })
    }

    pub fn bytes(&self, path: &str) -> (u16, Vec<u8>) {
        self.rt.block_on(async {
            let resp = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
            (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
        })
    }

    fn post(&self, path: &str, body: Value) -> anyhow::Result<Value> {
        let (status, v) = self.call(reqwest::Method::POST, path, Some(body));
        if !(200..300).contains(&status) {
            anyhow::bail!("POST {path} returned {status}: {v}");
        }
        Ok(v)
    }
}

fn view(v: Value) -> anyhow::Result<SessionView> {
    Ok(serde_json::from_value(v)?)
}

impl TeleopApi for HttpApi {
    fn create(&mut self, scene: &Scene, seed: u64) -> anyhow::Result<SessionView> {
        view(self.post("/sessions", json!({ "seed": seed, "scene": SceneDocument::from(scene) }))?)
    }
    fn set_target(&mut self, id: u64, click: Point2) -> anyhow::Result<SessionView> {
        view(self.post(&format!("/sessions/{id}/target"), json!({ "x": click.x, "y": click.y }))?)
    }
    fn candidates(&mut self, id: u64, k: usize) -> anyhow::Result<SessionView> {
        view(self.post(&format!("/sessions/{id}/candidates"), json!({ "k": k }))?)
    }
    fn execute(&mut self, id: u64, candidate_id: u32) -> anyhow::Result<SessionView> {
        view(self.post(&format!("/sessions/{id}/execute"), json!({ "candidate_id": candidate_id }))?["session"].take())
    }
    fn manual(&mut self, id: u64, direction: Direction) -> anyhow::Result<SessionView> {
        view(self.post(&format!("/sessions/{id}/manual"), json!({ "direction": direction }))?["session"].take())
    }
    fn grasp(&mut self, id: u64) -> anyhow::Result<SessionView> {
        view(self.post(&format!("/sessions/{id}/grasp"), json!({}))?["session"].take())
    }
}

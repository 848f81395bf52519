#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use embref_core::adversary::AdversaryPolicy;
use embref_platform::config::{PlatformConfig, SplitCounts};
use embref_platform::dataset::dataset_build;
use embref_platform::service::{run, AppState};
use embref_platform::store::{write_dataset, Dataset, EpisodeLog};
use serde_json::Value;

/// 7 angles, 2 placements each, paired: 28 scenes.
pub fn small_config() -> PlatformConfig {
    PlatformConfig {
        angles: (0..=6).map(|i| 30.0 * i as f64).collect(),
        splits: SplitCounts {
            train: 8,
            validation: 2,
            test: 4,
        },
        render_width: 96,
        render_height: 64,
        session_scenes: 4,
        ..PlatformConfig::default()
    }
}

/// Builds `cfg` with an untrained adversary and writes it under `root`.
pub fn write_small_dataset(root: &Path, cfg: &PlatformConfig) -> Dataset {
    let built = dataset_build(cfg, Some(&AdversaryPolicy::default())).expect("small build succeeds");
    write_dataset(root, &built.scenes, &built.splits, &built.manifest).unwrap();
    Dataset::load(root).unwrap()
}

/// Serves on an ephemeral port from a background runtime.
pub fn spawn_state(state: Arc<AppState>) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(listener).unwrap();
            run(state, l).await.unwrap();
        });
    });
    format!("http://{addr}")
}

pub fn spawn(cfg: &PlatformConfig, dataset: Dataset, log_path: &Path) -> String {
    let log = EpisodeLog::open(log_path).unwrap();
    spawn_state(AppState::new(cfg.clone(), dataset, log).unwrap())
}

pub struct Client {
    agent: ureq::Agent,
    pub base: String,
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            agent,
            base: base.to_string(),
        }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap_or(Value::Null))
    }

    pub fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        let bytes = r.body_mut().with_config().limit(64 << 20).read_to_vec().unwrap();
        (r.status().as_u16(), bytes)
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut r = self.agent.post(&format!("{}{path}", self.base)).send_json(&body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap_or(Value::Null))
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(&format!("{}{path}", self.base))
            .content_type("application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap_or(Value::Null))
    }
}

pub fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

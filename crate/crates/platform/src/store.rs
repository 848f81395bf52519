//! Flat-file persistence: scene JSONL, split manifests and an append-only
//! episode log.
//!
//! A dataset directory looks like
//!
//! ```text
//! manifest.json
//! scenes.jsonl
//! splits/train.json
//! splits/validation.json
//! splits/test.json
//! episodes.jsonl
//! ```
//!
//! Scenes and splits never change after a build. Episodes are appended by a
//! single writer thread that assigns ids; a failed write is rolled back so
//! the log never holds a partial line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use embref_core::agents::Episode;
use embref_core::scenegen::Scene;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate {kind} id {id}")]
    Duplicate { kind: &'static str, id: String },
    #[error("split {split} references unknown scene {scene}")]
    UnknownScene { split: String, scene: String },
    #[error("scene {0} appears in more than one split")]
    SplitOverlap(String),
    #[error("episode writer has shut down")]
    WriterGone,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub scene_ids: Vec<String>,
}

/// Build record written next to the scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub modes: crate::config::BuildModes,
    pub angles: Vec<f64>,
    pub placements_per_angle: usize,
    pub placements: usize,
    pub scenes: usize,
    pub attempts: usize,
    pub failures: usize,
    /// Generation failures by violated constraint.
    pub failure_histogram: BTreeMap<String, usize>,
    /// Schema version and weights hash of the adversary used, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<String>,
}

/// Scenes and splits of a built dataset; immutable once loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Option<Manifest>,
    scenes: Vec<Scene>,
    index: HashMap<String, usize>,
    pub splits: Vec<DatasetSplit>,
}

impl Dataset {
    pub fn from_parts(root: &Path, manifest: Option<Manifest>, scenes: Vec<Scene>, splits: Vec<DatasetSplit>) -> Result<Self, StoreError> {
        let mut index = HashMap::with_capacity(scenes.len());
        for (i, s) in scenes.iter().enumerate() {
            if index.insert(s.scene_id.clone(), i).is_some() {
                return Err(StoreError::Duplicate {
                    kind: "scene",
                    id: s.scene_id.clone(),
                });
            }
        }
        let mut seen = HashSet::new();
        for sp in &splits {
            for id in &sp.scene_ids {
                if !index.contains_key(id) {
                    return Err(StoreError::UnknownScene {
                        split: sp.name.clone(),
                        scene: id.clone(),
                    });
                }
                if !seen.insert(id.clone()) {
                    return Err(StoreError::SplitOverlap(id.clone()));
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            scenes,
            index,
            splits,
        })
    }

    /// Loads `scenes.jsonl` and whichever split files exist.
    pub fn load(root: &Path) -> Result<Self, StoreError> {
        let scenes = read_jsonl::<Scene>(&root.join("scenes.jsonl"))?;
        let mut splits = Vec::new();
        for name in SPLIT_NAMES {
            let p = root.join("splits").join(format!("{name}.json"));
            if p.exists() {
                let text = fs::read_to_string(&p).map_err(io_err(&p))?;
                splits.push(serde_json::from_str(&text).map_err(|source| StoreError::Parse { path: p, line: 1, source })?);
            }
        }
        let mp = root.join("manifest.json");
        let manifest = if mp.exists() {
            let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
            Some(serde_json::from_str(&text).map_err(|source| StoreError::Parse { path: mp, line: 1, source })?)
        } else {
            None
        };
        Self::from_parts(root, manifest, scenes, splits)
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.index.get(id).map(|&i| &self.scenes[i])
    }

    pub fn split(&self, name: &str) -> Option<&DatasetSplit> {
        self.splits.iter().find(|s| s.name == name)
    }

    /// Scenes of a split in manifest order; all scenes when the split is absent.
    pub fn split_scenes(&self, name: &str) -> Vec<&Scene> {
        match self.split(name) {
            Some(sp) => sp.scene_ids.iter().filter_map(|id| self.scene(id)).collect(),
            None => self.scenes.iter().collect(),
        }
    }

    pub fn episodes_path(&self) -> PathBuf {
        self.root.join("episodes.jsonl")
    }
}

/// Writes scenes, splits and manifest. Output bytes depend only on the inputs.
pub fn write_dataset(root: &Path, scenes: &[Scene], splits: &[DatasetSplit], manifest: &Manifest) -> Result<(), StoreError> {
    let split_dir = root.join("splits");
    fs::create_dir_all(&split_dir).map_err(io_err(&split_dir))?;
    let mut body = String::new();
    for s in scenes {
        body.push_str(&s.to_json_line());
        body.push('\n');
    }
    let p = root.join("scenes.jsonl");
    fs::write(&p, body).map_err(io_err(&p))?;
    for sp in splits {
        let p = split_dir.join(format!("{}.json", sp.name));
        fs::write(&p, serde_json::to_string_pretty(sp).expect("split serializes") + "\n").map_err(io_err(&p))?;
    }
    let p = root.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n").map_err(io_err(&p))?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), StoreError> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&serde_json::to_string(r).expect("row serializes"));
        body.push('\n');
    }
    fs::write(path, body).map_err(io_err(path))
}

/// Episodes already in a log. A missing path or a device such as
/// `/dev/full` reads as empty.
pub fn read_episodes(path: &Path) -> Result<Vec<Episode>, StoreError> {
    if !fs::metadata(path).map(|m| m.is_file()).unwrap_or(false) {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

type Request = (Episode, mpsc::SyncSender<Result<Episode, StoreError>>);

/// Handle to the single writer of an episode log. Cloning shares the writer.
#[derive(Clone)]
pub struct EpisodeLog {
    path: PathBuf,
    tx: mpsc::Sender<Request>,
}

impl EpisodeLog {
    /// Opens (creating if needed) a log; ids continue after the largest
    /// stored id.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let existing = read_episodes(path)?;
        let mut ids = HashSet::new();
        for e in &existing {
            if !ids.insert(e.episode_id) {
                return Err(StoreError::Duplicate {
                    kind: "episode",
                    id: e.episode_id.to_string(),
                });
            }
        }
        let next = existing.iter().map(|e| e.episode_id + 1).max().unwrap_or(0);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        let (tx, rx) = mpsc::channel::<Request>();
        let p = path.to_path_buf();
        thread::Builder::new()
            .name("episode-writer".into())
            .spawn(move || writer_loop(file, p, next, rx))
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            tx,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one episode, returning it with its assigned id. Blocks until
    /// the line is flushed or the write has been rolled back.
    pub fn append(&self, episode: Episode) -> Result<Episode, StoreError> {
        let (reply, rx) = mpsc::sync_channel(1);
        self.tx.send((episode, reply)).map_err(|_| StoreError::WriterGone)?;
        rx.recv().map_err(|_| StoreError::WriterGone)?
    }

    pub fn read_all(&self) -> Result<Vec<Episode>, StoreError> {
        read_episodes(&self.path)
    }
}

fn writer_loop(mut file: File, path: PathBuf, mut next: u64, rx: mpsc::Receiver<Request>) {
    for (mut ep, reply) in rx {
        ep.episode_id = next;
        let mut line = serde_json::to_string(&ep).expect("episode serializes");
        line.push('\n');
        let before = file.seek(SeekFrom::End(0)).ok();
        let res = file.write_all(line.as_bytes()).and_then(|_| file.flush());
        let out = match res {
            Ok(()) => {
                next += 1;
                Ok(ep)
            }
            Err(source) => {
                if let Some(len) = before {
                    // Best effort: drop whatever part of the line landed.
                    let _ = file.set_len(len);
                }
                Err(StoreError::Io { path: path.clone(), source })
            }
        };
        let _ = reply.send(out);
    }
}

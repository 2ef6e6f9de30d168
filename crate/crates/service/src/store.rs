//! On-disk layout of the service's data directory.
//!
//! ```text
//! config.json                 experiment configuration jobs start from
//! ids.json                    id counter
//! robot/                      robot trajectories of the last dynamics job
//! dynamics/{idm,fdm}.json     model checkpoints
//! sessions/active.json        id of the active session
//! sessions/{id}/              one demonstration session
//! policies/{id}.json          policy checkpoints
//! jobs/{id}.json              job records
//! evaluations/{id}.json       evaluation results
//! rollouts/{id}.json          recorded rollouts, replayed over the socket
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ApiError, ApiResult};

pub struct Store {
    root: PathBuf,
    ids: Mutex<()>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        for d in ["dynamics", "sessions", "policies", "jobs", "evaluations", "rollouts"] {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Self { root, ids: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Next id with the given prefix. The counter is shared by all prefixes
    /// and persisted, so ids stay unique across restarts.
    pub fn next_id(&self, prefix: &str) -> ApiResult<String> {
        let _guard = self.ids.lock().expect("id lock");
        let p = self.path("ids.json");
        let last: u64 = match fs::read_to_string(&p) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| ApiError::internal(format!("corrupt {}: {e}", p.display())))?,
            Err(_) => 0,
        };
        write_atomic(&p, (last + 1).to_string().as_bytes())?;
        Ok(format!("{prefix}-{:06}", last + 1))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> ApiResult<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&self.path(rel), &bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> ApiResult<Option<T>> {
        let p = self.path(rel);
        match fs::read_to_string(&p) {
            Ok(s) => serde_json::from_str(&s)
                .map(Some)
                .map_err(|e| ApiError::internal(format!("corrupt {}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ApiError::internal(format!("{}: {e}", p.display()))),
        }
    }

    /// File stems of `*.json` entries in a subdirectory, sorted.
    pub fn list(&self, dir: &str) -> Vec<String> {
        let mut out: Vec<String> = fs::read_dir(self.path(dir))
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_string)
            })
            .collect();
        out.sort();
        out
    }
}

/// Ids name files, so they are restricted to a safe alphabet.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> ApiResult<()> {
    let io = |e: std::io::Error| ApiError::internal(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

//! File-system job store. Each job owns a directory holding `request.json`,
//! `config-hash`, `job.json` and its output artifacts.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use colorize_core::sampler::ColorizationResult;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::ops::JobRequest;

pub const REQUEST_FILE: &str = "request.json";
pub const HASH_FILE: &str = "config-hash";
pub const JOB_FILE: &str = "job.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Colorize,
    Enhance,
    Rank,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    /// Status only moves forward: queued → running → done or failed. A
    /// queued job may also fail without running.
    pub fn can_become(self, next: JobStatus) -> bool {
        use JobStatus::*;
        matches!(
            (self, next),
            (Queued, Running) | (Queued, Failed) | (Running, Done) | (Running, Failed)
        )
    }

    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub created_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub config_hash: String,
    /// Artifact file names inside the job directory.
    pub artifacts: Vec<String>,
    pub timings: Timings,
    pub error: Option<String>,
    pub result: Option<serde_json::Value>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Artifact names are flat file names; anything that could escape the job
/// directory is refused.
pub fn valid_artifact_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && ![REQUEST_FILE, HASH_FILE, JOB_FILE].contains(&name)
}

#[derive(Debug)]
pub struct JobStore {
    root: PathBuf,
    jobs: Mutex<HashMap<String, Job>>,
    /// Finished colorizations kept in memory so rescaling skips diffusion.
    results: Mutex<HashMap<String, Arc<ColorizationResult>>>,
}

impl JobStore {
    /// Opens `root`, creating it if needed and loading any jobs already
    /// recorded there.
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let mut jobs = HashMap::new();
        for entry in std::fs::read_dir(root)? {
            let path = entry?.path().join(JOB_FILE);
            if !path.is_file() {
                continue;
            }
            match serde_json::from_slice::<Job>(&std::fs::read(&path)?) {
                Ok(job) => {
                    jobs.insert(job.id.clone(), job);
                }
                Err(e) => log::warn!("skipping unreadable job record {}: {e}", path.display()),
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            jobs: Mutex::new(jobs),
            results: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn persist(&self, job: &Job) -> Result<()> {
        let path = self.dir(&job.id).join(JOB_FILE);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(job)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Records a new queued job with its request and config hash.
    pub fn create(&self, request: &JobRequest, config_hash: &str) -> Result<Job> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.dir(&id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(REQUEST_FILE), serde_json::to_vec_pretty(request)?)?;
        std::fs::write(dir.join(HASH_FILE), config_hash)?;
        let job = Job {
            id: id.clone(),
            kind: request.kind(),
            status: JobStatus::Queued,
            config_hash: config_hash.into(),
            artifacts: Vec::new(),
            timings: Timings {
                created_ms: now_ms(),
                ..Timings::default()
            },
            error: None,
            result: None,
        };
        self.persist(&job)?;
        self.jobs.lock().expect("job table poisoned").insert(id, job.clone());
        Ok(job)
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().expect("job table poisoned").get(id).cloned()
    }

    /// Moves a job to `to`, applying `update` to the record first.
    pub fn transition(&self, id: &str, to: JobStatus, update: impl FnOnce(&mut Job)) -> Result<Job> {
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        let job = jobs.get_mut(id).ok_or_else(|| ServiceError::NotFound(id.into()))?;
        if !job.status.can_become(to) {
            return Err(ServiceError::Transition {
                id: id.into(),
                from: job.status,
                to,
            });
        }
        let mut next = job.clone();
        update(&mut next);
        next.status = to;
        match to {
            JobStatus::Running => next.timings.started_ms = Some(now_ms()),
            JobStatus::Done | JobStatus::Failed => next.timings.finished_ms = Some(now_ms()),
            JobStatus::Queued => {}
        }
        self.persist(&next)?;
        *job = next.clone();
        Ok(next)
    }

    /// Writes an artifact file and lists it on the job.
    pub fn add_artifact(&self, id: &str, name: &str, bytes: &[u8]) -> Result<()> {
        if !valid_artifact_name(name) {
            return Err(ServiceError::BadRequest(format!("bad artifact name {name:?}")));
        }
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        let job = jobs.get_mut(id).ok_or_else(|| ServiceError::NotFound(id.into()))?;
        std::fs::write(self.root.join(id).join(name), bytes)?;
        if !job.artifacts.iter().any(|a| a == name) {
            job.artifacts.push(name.into());
            let snapshot = job.clone();
            drop(jobs);
            self.persist(&snapshot)?;
        }
        Ok(())
    }

    /// Path of a listed artifact, or `None` for anything not produced by the
    /// job.
    pub fn artifact_path(&self, id: &str, name: &str) -> Option<PathBuf> {
        let job = self.get(id)?;
        job.artifacts.iter().any(|a| a == name).then(|| self.dir(id).join(name))
    }

    pub fn request(&self, id: &str) -> Result<JobRequest> {
        let path = self.dir(id).join(REQUEST_FILE);
        let bytes = std::fs::read(&path).map_err(|_| ServiceError::NotFound(id.into()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn cache_result(&self, id: &str, result: Arc<ColorizationResult>) {
        self.results
            .lock()
            .expect("result cache poisoned")
            .insert(id.into(), result);
    }

    pub fn cached_result(&self, id: &str) -> Option<Arc<ColorizationResult>> {
        self.results.lock().expect("result cache poisoned").get(id).cloned()
    }
}

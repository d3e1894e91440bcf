//! Application configuration: one TOML or JSON file, then environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use colorize_core::nn::checkpoint_paths;
use colorize_core::sampler::{SamplerConfig, DEFAULT_COLOR_SCALE, DEFAULT_GUIDANCE_SCALE, DEFAULT_STEPS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Jobs that may execute at once; the rest wait queued.
    pub workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            workers: 2,
        }
    }
}

/// Checkpoint stems (`<stem>.safetensors` + `<stem>.json`) except for the
/// ranker, which is a single JSON file. A missing codec means the identity
/// backend; a missing embedder means the built-in color statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub codec: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub ranker: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerDefaults {
    pub steps: usize,
    pub guidance_scale: f64,
    pub color_scale: f64,
}

impl Default for SamplerDefaults {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            color_scale: DEFAULT_COLOR_SCALE,
        }
    }
}

impl SamplerDefaults {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            color_scale: self.color_scale,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub jobs_dir: PathBuf,
    pub corpus: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            jobs_dir: PathBuf::from("jobs"),
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub server: ServerConfig,
    pub models: ModelPaths,
    pub sampler: SamplerDefaults,
    pub paths: DataPaths,
}

/// Environment variables that override file settings.
pub const ENV_KEYS: [&str; 8] = [
    "COLORIZE_BIND",
    "COLORIZE_WORKERS",
    "COLORIZE_JOBS_DIR",
    "COLORIZE_CORPUS",
    "COLORIZE_CODEC",
    "COLORIZE_DENOISER",
    "COLORIZE_RANKER",
    "COLORIZE_EMBEDDER",
];

impl AppConfig {
    /// Parses TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    /// Applies `COLORIZE_*` overrides from the given variables.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let value = value.as_ref();
            let path = || Some(PathBuf::from(value));
            match key.as_ref() {
                "COLORIZE_BIND" => self.server.bind = value.into(),
                "COLORIZE_WORKERS" => {
                    self.server.workers = value
                        .parse()
                        .map_err(|_| ServiceError::Config(format!("COLORIZE_WORKERS={value} is not a count")))?
                }
                "COLORIZE_JOBS_DIR" => self.paths.jobs_dir = PathBuf::from(value),
                "COLORIZE_CORPUS" => self.paths.corpus = path(),
                "COLORIZE_CODEC" => self.models.codec = path(),
                "COLORIZE_DENOISER" => self.models.denoiser = path(),
                "COLORIZE_RANKER" => self.models.ranker = path(),
                "COLORIZE_EMBEDDER" => self.models.embedder = path(),
                _ => {}
            }
        }
        Ok(())
    }

    /// File (if any), then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars().filter(|(k, _)| ENV_KEYS.contains(&k.as_str())))?;
        Ok(cfg)
    }

    /// Checks values and that every referenced checkpoint exists.
    pub fn validate(&self) -> Result<()> {
        if self.server.workers == 0 {
            return Err(ServiceError::Config("server.workers must be at least 1".into()));
        }
        self.sampler.sampler().validate()?;
        let stems = [
            ("codec", &self.models.codec),
            ("denoiser", &self.models.denoiser),
            ("embedder", &self.models.embedder),
        ];
        for (name, stem) in stems {
            if let Some(stem) = stem {
                let (weights, sidecar) = checkpoint_paths(stem);
                for p in [weights, sidecar] {
                    if !p.is_file() {
                        return Err(ServiceError::Config(format!(
                            "{name} checkpoint file {} not found",
                            p.display()
                        )));
                    }
                }
            }
        }
        if let Some(r) = &self.models.ranker {
            if !r.is_file() {
                return Err(ServiceError::Config(format!("ranker file {} not found", r.display())));
            }
        }
        Ok(())
    }

    /// Digest of everything that can change a job's output: sampler
    /// defaults and the bytes of every checkpoint file. Server address and
    /// storage paths are excluded.
    pub fn config_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.sampler)?);
        let files = |stem: &Option<PathBuf>, single: bool| -> Vec<Option<PathBuf>> {
            match stem {
                None => vec![None],
                Some(s) if single => vec![Some(s.clone())],
                Some(s) => {
                    let (w, j) = checkpoint_paths(s);
                    vec![Some(w), Some(j)]
                }
            }
        };
        let entries = [
            ("codec", files(&self.models.codec, false)),
            ("denoiser", files(&self.models.denoiser, false)),
            ("ranker", files(&self.models.ranker, true)),
            ("embedder", files(&self.models.embedder, false)),
        ];
        for (name, paths) in entries {
            h.update(name.as_bytes());
            for p in paths {
                match p {
                    None => h.update(b"builtin"),
                    Some(p) => {
                        let bytes =
                            std::fs::read(&p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                        h.update(Sha256::digest(&bytes));
                    }
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

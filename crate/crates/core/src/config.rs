//! Global harness configuration (TOML). Credentials never live here: backends
//! name the environment variable that holds their key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EmbeddingProvider, Evaluator, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, DEFAULT_MOTION_REF};
use crate::gateway::{BackendHandle, CallLog, HttpBackend, HttpBackendConfig, RetryPolicy, Scenario, ScriptedBackend};
use crate::mediacheck::MediaTools;
use crate::sandbox::SandboxPolicy;
use crate::smrf::{Agents, RunConfig};

/// Environment variable consulted when no `--config` is given.
pub const CONFIG_ENV: &str = "PHYSCODE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("no backend configured for role {0:?}")]
    MissingBackend(String),
    #[error("backend {name}: {message}")]
    Backend { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// OpenAI-compatible chat completions over HTTP.
    Openai {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_request_timeout")]
        request_timeout_secs: u64,
    },
    /// Canned replies from a scenario file.
    Scripted { scenario: PathBuf },
}

fn default_request_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hash {
        #[serde(default = "default_dim")]
        dimension: usize,
    },
    Http(HttpEmbedderConfig),
}

fn default_dim() -> usize {
    512
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash {
            dimension: default_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub frame_count: usize,
    pub motion_ref: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            frame_count: 10,
            motion_ref: DEFAULT_MOTION_REF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub profiles_dir: PathBuf,
    pub results_root: PathBuf,
    pub workers: usize,
    pub run: RunConfig,
    pub sandbox: SandboxPolicy,
    pub media: MediaTools,
    pub scoring: ScoringConfig,
    pub embedder: EmbedderConfig,
    /// Keyed by role: generator, corrector, refiner, judge. Missing
    /// corrector/refiner fall back to the generator.
    pub backends: BTreeMap<String, BackendConfig>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            profiles_dir: PathBuf::from("profiles"),
            results_root: PathBuf::from("results"),
            workers: 4,
            run: RunConfig::default(),
            sandbox: SandboxPolicy::default(),
            media: MediaTools::default(),
            scoring: ScoringConfig::default(),
            embedder: EmbedderConfig::default(),
            backends: BTreeMap::new(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl HarnessConfig {
    /// Parses TOML; relative paths resolve against the file's directory, as do
    /// media command arguments written as `./x` or `../x`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: HarnessConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        resolve(base, &mut cfg.profiles_dir);
        resolve(base, &mut cfg.results_root);
        resolve(base, &mut cfg.sandbox.workdir_root);
        for arg in cfg.media.probe_command.iter_mut().chain(cfg.media.decode_command.iter_mut()) {
            if arg.starts_with("./") || arg.starts_with("../") {
                *arg = base.join(&*arg).to_string_lossy().into_owned();
            }
        }
        for b in cfg.backends.values_mut() {
            if let BackendConfig::Scripted { scenario } = b {
                resolve(base, scenario);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `explicit`, else the file named by `PHYSCODE_CONFIG`, else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.run.validate().map_err(|e| e.to_string())?;
        self.sandbox.validate()?;
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.scoring.frame_count < 3 {
            return Err("scoring.frame_count must be at least 3".into());
        }
        if self.scoring.motion_ref.is_nan() || self.scoring.motion_ref <= 0.0 {
            return Err("scoring.motion_ref must be positive".into());
        }
        Ok(())
    }

    pub fn backend(&self, role: &str, log: &CallLog) -> Result<BackendHandle, ConfigError> {
        let cfg = self
            .backends
            .get(role)
            .ok_or_else(|| ConfigError::MissingBackend(role.to_string()))?;
        build_backend(role, cfg, log)
    }

    pub fn agents(&self, log: &CallLog) -> Result<Agents, ConfigError> {
        let generator = self.backend("generator", log)?;
        let or_gen = |role: &str| -> Result<BackendHandle, ConfigError> {
            if self.backends.contains_key(role) {
                self.backend(role, log)
            } else {
                Ok(generator.clone())
            }
        };
        Ok(Agents {
            corrector: or_gen("corrector")?,
            refiner: or_gen("refiner")?,
            generator: generator.clone(),
        })
    }

    pub fn embedder(&self) -> Arc<dyn EmbeddingProvider> {
        match &self.embedder {
            EmbedderConfig::Hash { dimension } => Arc::new(HashEmbedder::new(*dimension)),
            EmbedderConfig::Http(c) => Arc::new(HttpEmbedder::new(c.clone())),
        }
    }

    pub fn evaluator(&self) -> Evaluator {
        let mut ev = Evaluator::new(self.media.clone(), self.embedder());
        ev.frame_count = self.scoring.frame_count;
        ev.motion_ref = self.scoring.motion_ref;
        ev
    }
}

pub fn build_backend(name: &str, cfg: &BackendConfig, log: &CallLog) -> Result<BackendHandle, ConfigError> {
    Ok(match cfg {
        BackendConfig::Openai {
            endpoint,
            model,
            api_key_env,
            retry,
            request_timeout_secs,
        } => Arc::new(HttpBackend::new(
            HttpBackendConfig {
                name: name.to_string(),
                endpoint: endpoint.clone(),
                path: "/chat/completions".into(),
                model: model.clone(),
                api_key_env: api_key_env.clone(),
                retry: retry.clone(),
                request_timeout_secs: *request_timeout_secs,
            },
            log.clone(),
        )),
        BackendConfig::Scripted { scenario } => {
            let sc = Scenario::load(scenario).map_err(|e| ConfigError::Backend {
                name: name.to_string(),
                message: e.to_string(),
            })?;
            Arc::new(ScriptedBackend::new(name, sc, log.clone()))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_resolve() {
        let text = r#"
workers = 2
profiles_dir = "profiles"

[run]
mode = "single_agent"
passes = 3

[sandbox]
timeout_secs = 5.0

[backends.generator]
kind = "scripted"
scenario = "mocks/happy.json"

[backends.judge]
kind = "openai"
endpoint = "https://example.invalid/v1"
model = "vlm"
api_key_env = "JUDGE_KEY"
"#;
        let cfg = HarnessConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.run.passes, 3);
        assert_eq!(cfg.run.max_corrections, 3);
        assert_eq!(cfg.profiles_dir, Path::new("/base/profiles"));
        assert_eq!(
            cfg.backends["generator"],
            BackendConfig::Scripted {
                scenario: "/base/mocks/happy.json".into()
            }
        );
        assert!(matches!(cfg.backends["judge"], BackendConfig::Openai { .. }));

        let cfg = HarnessConfig::from_toml("[media]\nprobe_command = [\"python3\", \"../t.py\", \"{input}\"]", Path::new("/b/c")).unwrap();
        assert_eq!(cfg.media.probe_command[1], "/b/c/../t.py");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(HarnessConfig::from_toml("workers = 0", Path::new(".")).is_err());
        assert!(HarnessConfig::from_toml("[run]\npasses = 0", Path::new(".")).is_err());
        assert!(HarnessConfig::from_toml("api_key = \"sk\"", Path::new(".")).is_err());
    }

    #[test]
    fn agents_fall_back_to_generator() {
        let dir = tempfile::tempdir().unwrap();
        let sc = dir.path().join("s.json");
        std::fs::write(&sc, r#"{"rules": [], "default_reply": "x"}"#).unwrap();
        let mut cfg = HarnessConfig::default();
        let log = CallLog::new();
        assert!(matches!(cfg.agents(&log), Err(ConfigError::MissingBackend(_))));
        cfg.backends
            .insert("generator".into(), BackendConfig::Scripted { scenario: sc });
        let a = cfg.agents(&log).unwrap();
        assert_eq!(a.refiner.name(), "generator");
    }
}

//! Engine profiles: everything engine-specific the harness needs, as data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::OutputSpec;
use crate::sandbox::ErrorPatternTable;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("profile {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("profile {path}: {field} {target} does not exist")]
    Unresolvable {
        path: PathBuf,
        field: &'static str,
        target: PathBuf,
    },
    #[error("no profile named {0:?}")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineProfile {
    pub name: String,
    /// argv; `{script}` expands to the script path, `{workdir}` to the run directory.
    /// Without a `{script}` placeholder the script path is appended.
    pub interpreter_command: Vec<String>,
    pub script_filename: String,
    #[serde(default)]
    pub output_spec: OutputSpec,
    pub doc_corpus_path: PathBuf,
    /// Stderr pattern table; the built-in table is used when absent.
    #[serde(default)]
    pub error_pattern_table: Option<PathBuf>,
    /// Prepended to PYTHONPATH for the interpreter, e.g. an engine shim.
    #[serde(default)]
    pub module_path: Option<PathBuf>,
    /// Extra environment variables set for every execution.
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

impl EngineProfile {
    /// A profile running scripts with `python3` and the default output spec.
    /// Paths point at `dir`; nothing is checked.
    pub fn python(name: &str, dir: &Path) -> Self {
        Self {
            name: name.to_string(),
            interpreter_command: vec!["python3".into(), "{script}".into()],
            script_filename: "simulation.py".into(),
            output_spec: OutputSpec::default(),
            doc_corpus_path: dir.to_path_buf(),
            error_pattern_table: None,
            module_path: None,
            env: BTreeMap::new(),
        }
    }

    pub fn patterns(&self) -> Result<ErrorPatternTable, crate::sandbox::SandboxError> {
        match &self.error_pattern_table {
            Some(p) => ErrorPatternTable::load(p),
            None => Ok(ErrorPatternTable::builtin()),
        }
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<EngineProfile, ProfileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut profile: EngineProfile = toml::from_str(&text).map_err(|e| ProfileError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let invalid = |message: &str| ProfileError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if profile.interpreter_command.is_empty() || profile.interpreter_command[0].trim().is_empty() {
        return Err(invalid("interpreter_command is empty"));
    }
    if profile.script_filename.trim().is_empty() || profile.script_filename.contains('/') {
        return Err(invalid("script_filename must be a plain file name"));
    }
    profile
        .output_spec
        .validate()
        .map_err(|m| invalid(&format!("output_spec: {m}")))?;

    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |field: &'static str, p: &Path, must_exist: bool| -> Result<PathBuf, ProfileError> {
        let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        match std::fs::canonicalize(&joined) {
            Ok(abs) => Ok(abs),
            Err(_) if !must_exist => Ok(joined),
            Err(_) => Err(ProfileError::Unresolvable {
                path: path.to_path_buf(),
                field,
                target: joined,
            }),
        }
    };
    profile.doc_corpus_path = resolve("doc_corpus_path", &profile.doc_corpus_path, true)?;
    if let Some(t) = &profile.error_pattern_table {
        profile.error_pattern_table = Some(resolve("error_pattern_table", t, true)?);
    }
    if let Some(m) = &profile.module_path {
        // The engine shim may be installed later; only anchor the path.
        profile.module_path = Some(resolve("module_path", m, false)?);
    }
    profile.patterns().map_err(|e| invalid(&e.to_string()))?;
    Ok(profile)
}

/// Accepts a profile file path or a bare name looked up as `<dir>/<name>.toml`.
pub fn find_profile(name_or_path: &str, profiles_dir: &Path) -> Result<EngineProfile, ProfileError> {
    let as_path = Path::new(name_or_path);
    if as_path.extension().is_some() || as_path.components().count() > 1 {
        return load_profile(as_path);
    }
    let candidate = profiles_dir.join(format!("{name_or_path}.toml"));
    if !candidate.exists() {
        return Err(ProfileError::NotFound(name_or_path.to_string()));
    }
    load_profile(candidate)
}

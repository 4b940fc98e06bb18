//! Process-level execution of candidate scripts and failure classification.
//!
//! Each execution gets a fresh directory under the policy's workdir root, a
//! filtered environment, its own process group (killed wholesale on timeout
//! and after exit), and tail-truncated stream capture. The workdir is kept so
//! output files can be validated afterwards.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::gateway::{complete, ChatBackend, ChatMessage, ChatRequest, RequestMeta};
use crate::profile::EngineProfile;

const BUILTIN_PATTERNS: &str = include_str!("../data/error_patterns.json");

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("cannot prepare workdir under {root}: {source}")]
    Workdir {
        root: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("error pattern table {path}: {message}")]
    Patterns { path: String, message: String },
    #[error("classify_error called on a successful execution")]
    NotAFailure,
    #[error("model-assisted classification failed: {0}")]
    Assist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Syntax,
    ApiUsage,
    Parameter,
    BoundaryCondition,
    TemporalDiscretization,
    IncompatibleInteraction,
    Resource,
    Other,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 8] = [
        ErrorClass::Syntax,
        ErrorClass::ApiUsage,
        ErrorClass::Parameter,
        ErrorClass::BoundaryCondition,
        ErrorClass::TemporalDiscretization,
        ErrorClass::IncompatibleInteraction,
        ErrorClass::Resource,
        ErrorClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Syntax => "syntax",
            ErrorClass::ApiUsage => "api_usage",
            ErrorClass::Parameter => "parameter",
            ErrorClass::BoundaryCondition => "boundary_condition",
            ErrorClass::TemporalDiscretization => "temporal_discretization",
            ErrorClass::IncompatibleInteraction => "incompatible_interaction",
            ErrorClass::Resource => "resource",
            ErrorClass::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s.trim())
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxPolicy {
    pub timeout_secs: f64,
    /// Tail kept per stream.
    pub max_captured_bytes: usize,
    pub env_allowlist: Vec<String>,
    pub workdir_root: PathBuf,
    /// Also write complete streams to `stdout.log` / `stderr.log` in the workdir.
    pub spool_streams: bool,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            timeout_secs: 120.0,
            max_captured_bytes: 64 * 1024,
            env_allowlist: [
                "PATH",
                "HOME",
                "LANG",
                "LC_ALL",
                "TMPDIR",
                "PYTHONPATH",
                "STUB_FAIL",
            ]
            .map(String::from)
            .to_vec(),
            workdir_root: std::env::temp_dir().join("physcode-runs"),
            spool_streams: false,
        }
    }
}

impl SandboxPolicy {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_secs = timeout.as_secs_f64();
        self
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.workdir_root = root.into();
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err("timeout must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    NonzeroExit,
    Timeout,
    SpawnFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub outcome: Outcome,
    pub exit_code: Option<i32>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub wall_time_secs: f64,
    pub workdir: PathBuf,
    pub error_class: Option<ErrorClass>,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

/// Ordered regex → class rules; the first match wins.
#[derive(Debug, Clone)]
pub struct ErrorPatternTable {
    rules: Vec<(Regex, ErrorClass)>,
}

#[derive(Deserialize)]
struct PatternRule {
    class: String,
    pattern: String,
}

impl ErrorPatternTable {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PATTERNS, "<builtin>").expect("built-in pattern table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path).map_err(|e| SandboxError::Patterns {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, SandboxError> {
        let err = |message: String| SandboxError::Patterns {
            path: origin.to_string(),
            message,
        };
        let raw: Vec<PatternRule> = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        let rules = raw
            .into_iter()
            .map(|r| {
                let class = ErrorClass::parse(&r.class)
                    .ok_or_else(|| err(format!("unknown error class {:?}", r.class)))?;
                let re = Regex::new(&r.pattern).map_err(|e| err(e.to_string()))?;
                Ok((re, class))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    pub fn classify_text(&self, stderr: &str) -> ErrorClass {
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(stderr))
            .map_or(ErrorClass::Other, |(_, c)| *c)
    }
}

pub fn classify_error(report: &ExecutionReport, table: &ErrorPatternTable) -> Result<ErrorClass, SandboxError> {
    match report.outcome {
        Outcome::Success => Err(SandboxError::NotAFailure),
        Outcome::Timeout => Ok(ErrorClass::Resource),
        Outcome::NonzeroExit | Outcome::SpawnFailure => Ok(table.classify_text(&report.stderr_tail)),
    }
}

/// One extra model call returning a class label; used when stderr patterns
/// cannot separate behavioural classes. Off unless the caller opts in.
pub fn classify_with_model(
    backend: &dyn ChatBackend,
    report: &ExecutionReport,
) -> Result<ErrorClass, SandboxError> {
    if report.succeeded() {
        return Err(SandboxError::NotAFailure);
    }
    let labels: Vec<&str> = ErrorClass::ALL.iter().map(|c| c.as_str()).collect();
    let prompt = format!(
        "A physics simulation script failed. Classify the failure into exactly one of: {}.\n\
         Reply with the label only.\n\nSTDERR (tail):\n{}\n",
        labels.join(", "),
        last_lines(&report.stderr_tail, 20)
    );
    let req = ChatRequest {
        model: backend.model().to_string(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: 0.0,
        max_tokens: 16,
        meta: RequestMeta {
            agent: Some("classifier".into()),
            ..RequestMeta::default()
        },
    };
    let reply = complete(backend, &req).map_err(|e| SandboxError::Assist(e.to_string()))?;
    let cleaned = reply.content.trim().trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '_');
    ErrorClass::parse(&cleaned.to_ascii_lowercase())
        .ok_or_else(|| SandboxError::Assist(format!("unrecognised label {:?}", reply.content)))
}

pub(crate) fn last_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

/// Bounded tail buffer; keeps the last `cap` bytes and counts what was dropped.
struct Tail {
    cap: usize,
    buf: Vec<u8>,
    dropped: u64,
}

impl Tail {
    fn push(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
        if self.buf.len() > self.cap {
            let excess = self.buf.len() - self.cap;
            self.buf.drain(..excess);
            self.dropped += excess as u64;
        }
    }

    fn into_string(self) -> String {
        let text = String::from_utf8_lossy(&self.buf).into_owned();
        if self.dropped > 0 {
            format!("[... {} bytes truncated]\n{text}", self.dropped)
        } else {
            text
        }
    }
}

fn capture<R: Read + Send + 'static>(mut stream: R, cap: usize, spool: Option<PathBuf>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut tail = Tail {
            cap,
            buf: Vec::new(),
            dropped: 0,
        };
        let mut file = spool.and_then(|p| std::fs::File::create(p).ok());
        let mut chunk = [0u8; 8192];
        loop {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    tail.push(&chunk[..n]);
                    if let Some(f) = file.as_mut() {
                        let _ = f.write_all(&chunk[..n]);
                    }
                }
            }
        }
        tail.into_string()
    })
}

fn kill_group(pgid: u32) {
    // SAFETY: plain syscall; a stale or missing group only yields ESRCH.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}

fn expand_argv(profile: &EngineProfile, script: &Path, workdir: &Path) -> Vec<String> {
    let script_s = script.display().to_string();
    let workdir_s = workdir.display().to_string();
    let mut saw_script = false;
    let mut argv: Vec<String> = profile
        .interpreter_command
        .iter()
        .map(|a| {
            if a.contains("{script}") {
                saw_script = true;
            }
            a.replace("{script}", &script_s).replace("{workdir}", &workdir_s)
        })
        .collect();
    if !saw_script {
        argv.push(script_s);
    }
    argv
}

fn filtered_env(profile: &EngineProfile, policy: &SandboxPolicy) -> BTreeMap<String, String> {
    let mut env: BTreeMap<String, String> = policy
        .env_allowlist
        .iter()
        .filter_map(|k| std::env::var(k).ok().map(|v| (k.clone(), v)))
        .collect();
    for (k, v) in &profile.env {
        env.insert(k.clone(), v.clone());
    }
    if let Some(m) = &profile.module_path {
        let joined = match env.get("PYTHONPATH") {
            Some(existing) if !existing.is_empty() => format!("{}:{existing}", m.display()),
            _ => m.display().to_string(),
        };
        env.insert("PYTHONPATH".into(), joined);
    }
    env
}

/// Creates a fresh uniquely named directory under the policy root.
pub fn fresh_workdir(policy: &SandboxPolicy) -> Result<PathBuf, SandboxError> {
    let root = &policy.workdir_root;
    let werr = |source| SandboxError::Workdir {
        root: root.clone(),
        source,
    };
    std::fs::create_dir_all(root).map_err(werr)?;
    let dir = tempfile::Builder::new()
        .prefix("exec-")
        .tempdir_in(root)
        .map_err(werr)?
        .keep();
    Ok(dir)
}

/// Runs `code` as the profile's script in a fresh workdir.
///
/// Only workdir preparation can fail; everything about the script itself,
/// including an interpreter that cannot be started, lands in the report.
pub fn execute(
    code: &str,
    profile: &EngineProfile,
    policy: &SandboxPolicy,
    patterns: &ErrorPatternTable,
) -> Result<ExecutionReport, SandboxError> {
    let workdir = fresh_workdir(policy)?;
    let script = workdir.join(&profile.script_filename);
    std::fs::write(&script, code).map_err(|source| SandboxError::Workdir {
        root: policy.workdir_root.clone(),
        source,
    })?;
    let argv = expand_argv(profile, &script, &workdir);
    let started = Instant::now();

    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .current_dir(&workdir)
        .env_clear()
        .envs(filtered_env(profile, policy))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);

    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            let mut report = ExecutionReport {
                outcome: Outcome::SpawnFailure,
                exit_code: None,
                stdout_tail: String::new(),
                stderr_tail: format!("failed to start {:?}: {e}", argv[0]),
                wall_time_secs: started.elapsed().as_secs_f64(),
                workdir,
                error_class: None,
            };
            report.error_class = classify_error(&report, patterns).ok();
            return Ok(report);
        }
    };
    let pgid = child.id();
    let spool = |name: &str| policy.spool_streams.then(|| workdir.join(name));
    let out = capture(child.stdout.take().expect("piped"), policy.max_captured_bytes, spool("stdout.log"));
    let err = capture(child.stderr.take().expect("piped"), policy.max_captured_bytes, spool("stderr.log"));

    let waited = child.wait_timeout(policy.timeout());
    let (outcome, exit_code) = match waited {
        Ok(Some(status)) => {
            // Reap stragglers that still hold the pipes.
            kill_group(pgid);
            match status.code() {
                Some(0) => (Outcome::Success, Some(0)),
                code => (Outcome::NonzeroExit, code),
            }
        }
        Ok(None) | Err(_) => {
            kill_group(pgid);
            let _ = child.kill();
            let _ = child.wait();
            (Outcome::Timeout, None)
        }
    };
    // Paths inside the run directory are reported relative to it, so the
    // same failure reads the same in every run.
    let prefix = format!("{}/", workdir.display());
    let stdout_tail = out.join().unwrap_or_default().replace(&prefix, "");
    let stderr_tail = err.join().unwrap_or_default().replace(&prefix, "");
    let mut report = ExecutionReport {
        outcome,
        exit_code,
        stdout_tail,
        stderr_tail,
        wall_time_secs: started.elapsed().as_secs_f64(),
        workdir,
        error_class: None,
    };
    report.error_class = classify_error(&report, patterns).ok();
    Ok(report)
}

/// Bundles what an orchestrator needs to run scripts for one engine.
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub profile: EngineProfile,
    pub policy: SandboxPolicy,
    pub patterns: ErrorPatternTable,
}

impl Sandbox {
    pub fn new(profile: EngineProfile, policy: SandboxPolicy) -> Result<Self, SandboxError> {
        let patterns = profile.patterns()?;
        Ok(Self {
            profile,
            policy,
            patterns,
        })
    }

    pub fn run(&self, code: &str) -> Result<ExecutionReport, SandboxError> {
        execute(code, &self.profile, &self.policy, &self.patterns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sandbox(timeout: Duration) -> (tempfile::TempDir, Sandbox) {
        let root = tempfile::tempdir().unwrap();
        let profile = EngineProfile::python("test", root.path());
        let policy = SandboxPolicy::default()
            .with_timeout(timeout)
            .with_root(root.path().join("runs"));
        let sb = Sandbox::new(profile, policy).unwrap();
        (root, sb)
    }

    #[test]
    fn exit_zero_is_success() {
        let (_root, sb) = sandbox(Duration::from_secs(10));
        let r = sb.run("print('hello')").unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert_eq!(r.exit_code, Some(0));
        assert_eq!(r.stdout_tail.trim(), "hello");
        assert!(r.error_class.is_none());
        assert!(r.workdir.join("simulation.py").exists());
    }

    #[test]
    fn uncaught_exception_is_nonzero_exit() {
        let (_root, sb) = sandbox(Duration::from_secs(10));
        let r = sb.run("import genesis_missing_module\n").unwrap();
        assert_eq!(r.outcome, Outcome::NonzeroExit);
        assert_eq!(r.exit_code, Some(1));
        assert!(r.stderr_tail.contains("Traceback"));
        assert!(r.stderr_tail.contains("File \"simulation.py\""), "{}", r.stderr_tail);
        assert_eq!(r.error_class, Some(ErrorClass::ApiUsage));
    }

    #[test]
    fn timeout_kills_and_classifies_resource() {
        let (_root, sb) = sandbox(Duration::from_millis(500));
        let t = Instant::now();
        let r = sb.run("import time\ntime.sleep(30)\n").unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.error_class, Some(ErrorClass::Resource));
        assert!(t.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn grandchildren_do_not_outlive_timeout() {
        let (_root, sb) = sandbox(Duration::from_millis(500));
        let t = Instant::now();
        let r = sb
            .run("import subprocess\nsubprocess.Popen(['sleep', '30'])\nimport time\ntime.sleep(30)\n")
            .unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert!(t.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn missing_interpreter_is_spawn_failure() {
        let (_root, mut sb) = sandbox(Duration::from_secs(5));
        sb.profile.interpreter_command = vec!["/nonexistent/interpreter".into()];
        let r = sb.run("x").unwrap();
        assert_eq!(r.outcome, Outcome::SpawnFailure);
        assert!(r.exit_code.is_none());
    }

    #[test]
    fn env_is_filtered() {
        let (_root, mut sb) = sandbox(Duration::from_secs(10));
        sb.profile.env.insert("ENGINE_MODE".into(), "headless".into());
        std::env::set_var("PHYSCODE_SECRET_TEST", "leak");
        let r = sb
            .run("import os\nprint(os.environ.get('PHYSCODE_SECRET_TEST'), os.environ.get('ENGINE_MODE'))")
            .unwrap();
        assert_eq!(r.stdout_tail.trim(), "None headless");
    }

    #[test]
    fn output_is_tail_truncated() {
        let (_root, mut sb) = sandbox(Duration::from_secs(10));
        sb.policy.max_captured_bytes = 100;
        sb.policy.spool_streams = true;
        let r = sb.run("import sys\nsys.stderr.write('x' * 5000 + 'END')\n").unwrap();
        assert!(r.stderr_tail.ends_with("END"));
        assert!(r.stderr_tail.starts_with("[... 4903 bytes truncated]"));
        let full = std::fs::read_to_string(r.workdir.join("stderr.log")).unwrap();
        assert_eq!(full.len(), 5003);
    }

    #[test]
    fn classify_rejects_success_and_defaults_other() {
        let table = ErrorPatternTable::builtin();
        let mut r = ExecutionReport {
            outcome: Outcome::Success,
            exit_code: Some(0),
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            wall_time_secs: 0.0,
            workdir: PathBuf::new(),
            error_class: None,
        };
        assert!(matches!(classify_error(&r, &table), Err(SandboxError::NotAFailure)));
        r.outcome = Outcome::NonzeroExit;
        r.stderr_tail = "something odd happened".into();
        assert_eq!(classify_error(&r, &table).unwrap(), ErrorClass::Other);
        r.stderr_tail = "SyntaxError: invalid syntax".into();
        assert_eq!(classify_error(&r, &table).unwrap(), ErrorClass::Syntax);
        r.outcome = Outcome::Timeout;
        assert_eq!(classify_error(&r, &table).unwrap(), ErrorClass::Resource);
    }

    #[test]
    fn bad_pattern_tables_rejected() {
        assert!(ErrorPatternTable::from_json(r#"[{"class":"nope","pattern":"x"}]"#, "t").is_err());
        assert!(ErrorPatternTable::from_json(r#"[{"class":"syntax","pattern":"("}]"#, "t").is_err());
    }
}

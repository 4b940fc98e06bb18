//! Orchestration: the generator → corrector → refiner loop, the
//! single-agent baseline, zero-shot runs, and batch execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchdata::{BenchmarkEntry, Dataset, Split};
use crate::eval::{evaluate, Evaluator, ScoreCard};
use crate::gateway::{complete, BackendHandle, ChatMessage, ChatRequest, GatewayError, RequestMeta};
use crate::profile::EngineProfile;
use crate::promptkit::{
    extract_code, pack_context, render_correction_prompt, render_generation_prompt, render_refinement_prompt,
    DocCorpus, PromptError, PromptText,
};
use crate::sandbox::{ErrorClass, ExecutionReport, Outcome, Sandbox, SandboxError, SandboxPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Smrf,
    SingleAgent,
    ZeroShot,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Smrf => "smrf",
            Mode::SingleAgent => "single_agent",
            Mode::ZeroShot => "zero_shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Total corrector calls allowed per run.
    pub max_corrections: u32,
    pub passes: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Documentation budget in estimated tokens.
    pub context_budget: usize,
    pub refine_enabled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Smrf,
            max_corrections: 3,
            passes: 5,
            temperature: 0.1,
            max_tokens: 4096,
            context_budget: 100_000,
            refine_enabled: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.passes < 1 {
            return Err(RunError::Config("passes must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(RunError::Config("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(RunError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run configuration: {0}")]
    Config(String),
    #[error("{0} requires mode {1}")]
    WrongMode(&'static str, &'static str),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("results {path}: {message}")]
    Persist { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Generator,
    Corrector,
    Refiner,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Generator => "generator",
            AgentRole::Corrector => "corrector",
            AgentRole::Refiner => "refiner",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub role: AgentRole,
    pub prompt_digest: String,
    pub reply_digest: String,
    pub code_digest: Option<String>,
    pub execution: Option<ExecutionReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Scored,
    /// Code still failed after the correction budget.
    FrameworkFailure,
    /// A backend call or the sandbox itself failed; says nothing about the model.
    TransportFailure,
}

/// One prompt/reply exchange, kept for the raw artifact files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub role: AgentRole,
    pub prompt: PromptText,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub entry_id: String,
    pub pass: u32,
    pub mode: Mode,
    pub profile: String,
    pub steps: Vec<Step>,
    pub final_code: Option<String>,
    /// Run directory of the scored execution.
    pub final_workdir: Option<PathBuf>,
    pub outcome: RunOutcome,
    pub scorecard: ScoreCard,
    /// Transport or sandbox error text for `TransportFailure`.
    pub failure: Option<String>,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub transcript: Vec<Exchange>,
}

impl RunRecord {
    pub fn corrector_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.role == AgentRole::Corrector).count()
    }

    /// Class of the first failing generator/corrector execution, and whether
    /// the run got past it.
    pub fn first_failure(&self) -> Option<(ErrorClass, bool)> {
        let report = self
            .steps
            .iter()
            .filter(|s| s.role != AgentRole::Refiner)
            .filter_map(|s| s.execution.as_ref())
            .find(|r| !r.succeeded())?;
        Some((
            report.error_class.unwrap_or(ErrorClass::Other),
            self.outcome == RunOutcome::Scored,
        ))
    }

    /// Copy with run-specific noise removed: mode, workdirs and timings.
    pub fn normalized(&self) -> RunRecord {
        let mut r = self.clone();
        r.mode = Mode::Smrf;
        r.final_workdir = None;
        r.wall_time_secs = 0.0;
        r.transcript.clear();
        for s in &mut r.steps {
            if let Some(e) = &mut s.execution {
                e.workdir = PathBuf::new();
                e.wall_time_secs = 0.0;
            }
        }
        r
    }
}

/// Backends for each role; a single-agent run uses one for all.
#[derive(Clone)]
pub struct Agents {
    pub generator: BackendHandle,
    pub corrector: BackendHandle,
    pub refiner: BackendHandle,
}

impl Agents {
    pub fn single(backend: BackendHandle) -> Self {
        Self {
            generator: backend.clone(),
            corrector: backend.clone(),
            refiner: backend,
        }
    }

    fn for_role(&self, role: AgentRole) -> &BackendHandle {
        match role {
            AgentRole::Generator => &self.generator,
            AgentRole::Corrector => &self.corrector,
            AgentRole::Refiner => &self.refiner,
        }
    }
}

/// Engine-side state shared by every run: sandbox, docs and scorer.
pub struct Harness {
    pub sandbox: Sandbox,
    pub corpus: DocCorpus,
    pub evaluator: Evaluator,
}

impl Harness {
    pub fn new(profile: EngineProfile, policy: SandboxPolicy, evaluator: Evaluator) -> Result<Self, RunError> {
        let corpus = DocCorpus::load(&profile.doc_corpus_path)?;
        Ok(Self {
            sandbox: Sandbox::new(profile, policy)?,
            corpus,
            evaluator,
        })
    }

    pub fn profile(&self) -> &EngineProfile {
        &self.sandbox.profile
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

enum Halt {
    Transport(String),
    Prompt(PromptError),
}

impl From<GatewayError> for Halt {
    fn from(e: GatewayError) -> Self {
        Halt::Transport(e.to_string())
    }
}

impl From<SandboxError> for Halt {
    fn from(e: SandboxError) -> Self {
        Halt::Transport(format!("sandbox: {e}"))
    }
}

struct Run<'a> {
    entry: &'a BenchmarkEntry,
    agents: &'a Agents,
    harness: &'a Harness,
    cfg: &'a RunConfig,
    steps: Vec<Step>,
    transcript: Vec<Exchange>,
}

/// Stand-in report for a reply that held no usable code.
fn no_code_report(err: &PromptError) -> ExecutionReport {
    ExecutionReport {
        outcome: Outcome::NonzeroExit,
        exit_code: None,
        stdout_tail: String::new(),
        stderr_tail: format!("SyntaxError: no program in reply ({err})"),
        wall_time_secs: 0.0,
        workdir: PathBuf::new(),
        error_class: Some(ErrorClass::Syntax),
    }
}

impl Run<'_> {
    /// Asks the role's backend, extracts code and executes it.
    fn step(&mut self, role: AgentRole, prompt: PromptText) -> Result<(String, ExecutionReport), Halt> {
        let backend = self.agents.for_role(role);
        let mut messages = Vec::new();
        if !prompt.system.is_empty() {
            messages.push(ChatMessage::system(&prompt.system));
        }
        messages.push(ChatMessage::user(&prompt.user));
        let req = ChatRequest {
            model: backend.model().to_string(),
            messages,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            meta: RequestMeta {
                agent: Some(role.as_str().into()),
                entry_id: Some(self.entry.id.clone()),
                turn: self.steps.len() as u32,
            },
        };
        let prompt_digest = req.digest();
        let reply = complete(backend.as_ref(), &req)?.content;
        let (code, report) = match extract_code(&reply) {
            Ok(code) => {
                let report = self.harness.sandbox.run(&code)?;
                (code, report)
            }
            Err(e) => (String::new(), no_code_report(&e)),
        };
        self.steps.push(Step {
            role,
            prompt_digest,
            reply_digest: sha256_hex(&reply),
            code_digest: (!code.is_empty()).then(|| sha256_hex(&code)),
            execution: Some(report.clone()),
        });
        self.transcript.push(Exchange { role, prompt, reply });
        Ok((code, report))
    }

    fn drive(&mut self, refine: bool) -> Result<Option<(String, ExecutionReport)>, Halt> {
        let entry = self.entry;
        let profile = self.harness.profile();
        let ctx = pack_context(&self.harness.corpus, entry, self.cfg.context_budget);
        let gen = render_generation_prompt(entry, &ctx, &profile.output_spec);
        let (mut code, mut report) = self.step(AgentRole::Generator, gen)?;
        let mut corrections = 0;
        while !report.succeeded() {
            if corrections >= self.cfg.max_corrections {
                return Ok(None);
            }
            corrections += 1;
            let prompt = render_correction_prompt(entry, &code, &report).map_err(Halt::Prompt)?;
            (code, report) = self.step(AgentRole::Corrector, prompt)?;
        }
        if refine {
            let prompt = render_refinement_prompt(entry, &code).map_err(Halt::Prompt)?;
            let (refined, refined_report) = self.step(AgentRole::Refiner, prompt)?;
            if refined_report.succeeded() {
                return Ok(Some((refined, refined_report)));
            }
            // Refined code broke: keep the last passing version.
        }
        Ok(Some((code, report)))
    }
}

fn orchestrate(
    entry: &BenchmarkEntry,
    agents: &Agents,
    harness: &Harness,
    cfg: &RunConfig,
    mode: Mode,
    refine: bool,
) -> Result<RunRecord, RunError> {
    let started = Instant::now();
    let mut run = Run {
        entry,
        agents,
        harness,
        cfg,
        steps: Vec::new(),
        transcript: Vec::new(),
    };
    let result = run.drive(refine);
    let mut record = RunRecord {
        entry_id: entry.id.clone(),
        pass: 0,
        mode,
        profile: harness.profile().name.clone(),
        steps: std::mem::take(&mut run.steps),
        final_code: None,
        final_workdir: None,
        outcome: RunOutcome::FrameworkFailure,
        scorecard: ScoreCard::zero(),
        failure: None,
        wall_time_secs: 0.0,
        transcript: std::mem::take(&mut run.transcript),
    };
    match result {
        Ok(Some((code, report))) => {
            let spec = &harness.profile().output_spec;
            record.scorecard = evaluate(entry, &report, &report.workdir, spec, &harness.evaluator);
            record.final_code = Some(code);
            record.final_workdir = Some(report.workdir);
            record.outcome = RunOutcome::Scored;
        }
        Ok(None) => {}
        Err(Halt::Transport(msg)) => {
            record.outcome = RunOutcome::TransportFailure;
            record.failure = Some(msg);
        }
        Err(Halt::Prompt(e)) => return Err(e.into()),
    }
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(record)
}

pub fn run_smrf(
    entry: &BenchmarkEntry,
    agents: &Agents,
    harness: &Harness,
    cfg: &RunConfig,
) -> Result<RunRecord, RunError> {
    if cfg.mode != Mode::Smrf {
        return Err(RunError::WrongMode("run_smrf", "smrf"));
    }
    orchestrate(entry, agents, harness, cfg, Mode::Smrf, cfg.refine_enabled)
}

/// One backend generates and corrects; no refinement.
pub fn run_single_agent(
    entry: &BenchmarkEntry,
    backend: &BackendHandle,
    harness: &Harness,
    cfg: &RunConfig,
) -> Result<RunRecord, RunError> {
    if cfg.mode != Mode::SingleAgent {
        return Err(RunError::WrongMode("run_single_agent", "single_agent"));
    }
    orchestrate(entry, &Agents::single(backend.clone()), harness, cfg, Mode::SingleAgent, false)
}

/// The smrf loop with no corrections and no refinement.
pub fn run_zero_shot(
    entry: &BenchmarkEntry,
    generator: &BackendHandle,
    harness: &Harness,
    cfg: &RunConfig,
) -> Result<RunRecord, RunError> {
    if cfg.mode != Mode::ZeroShot {
        return Err(RunError::WrongMode("run_zero_shot", "zero_shot"));
    }
    let cfg = RunConfig {
        max_corrections: 0,
        refine_enabled: false,
        ..cfg.clone()
    };
    orchestrate(entry, &Agents::single(generator.clone()), harness, &cfg, Mode::ZeroShot, false)
}

/// Dispatches on `cfg.mode`; single-agent and zero-shot use the generator.
pub fn run_entry(
    entry: &BenchmarkEntry,
    agents: &Agents,
    harness: &Harness,
    cfg: &RunConfig,
) -> Result<RunRecord, RunError> {
    match cfg.mode {
        Mode::Smrf => run_smrf(entry, agents, harness, cfg),
        Mode::SingleAgent => run_single_agent(entry, &agents.generator, harness, cfg),
        Mode::ZeroShot => run_zero_shot(entry, &agents.generator, harness, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkOptions {
    pub workers: usize,
    /// Where records and raw exchanges are written, if anywhere.
    pub results_root: Option<PathBuf>,
    /// Re-run and replace runs that already have a record.
    pub overwrite: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            results_root: None,
            overwrite: false,
        }
    }
}

/// Runs every test-split entry `cfg.passes` times on a bounded pool.
///
/// A failing run never stops the batch: orchestration errors become
/// transport-failure records. With a results root, runs that already have a
/// record are loaded instead of re-run unless `overwrite` is set. Records are
/// returned in (entry, pass) order.
pub fn run_benchmark(
    ds: &Dataset,
    agents: &Agents,
    harness: &Harness,
    cfg: &RunConfig,
    opts: &BenchmarkOptions,
) -> Result<Vec<RunRecord>, RunError> {
    cfg.validate()?;
    let jobs: Vec<(&BenchmarkEntry, u32)> = ds
        .entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .flat_map(|e| (0..cfg.passes).map(move |p| (e, p)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let persist_err: Mutex<Option<RunError>> = Mutex::new(None);
    let workers = opts.workers.clamp(1, jobs.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(entry, pass)) = jobs.get(i) else { break };
                let existing = match (&opts.results_root, opts.overwrite) {
                    (Some(root), false) => load_record(root, &entry.id, pass).ok().flatten(),
                    _ => None,
                };
                let record = existing.unwrap_or_else(|| {
                    let mut r = run_entry(entry, agents, harness, cfg)
                        .unwrap_or_else(|e| failed_record(entry, harness, cfg.mode, e));
                    r.pass = pass;
                    if let Some(root) = &opts.results_root {
                        if let Err(e) = persist_record(root, &r, true) {
                            persist_err.lock().unwrap().get_or_insert(e);
                        }
                    }
                    r
                });
                slots.lock().unwrap()[i] = Some(record);
            });
        }
    });
    if let Some(e) = persist_err.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots.into_inner().unwrap().into_iter().flatten().collect())
}

fn failed_record(entry: &BenchmarkEntry, harness: &Harness, mode: Mode, err: RunError) -> RunRecord {
    RunRecord {
        entry_id: entry.id.clone(),
        pass: 0,
        mode,
        profile: harness.profile().name.clone(),
        steps: Vec::new(),
        final_code: None,
        final_workdir: None,
        outcome: RunOutcome::TransportFailure,
        scorecard: ScoreCard::zero(),
        failure: Some(err.to_string()),
        wall_time_secs: 0.0,
        transcript: Vec::new(),
    }
}

/// File-system safe directory name for an entry id. Ids that need changes
/// get a short hash suffix so distinct ids stay distinct.
pub fn entry_dir_name(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if clean == id && !id.starts_with('.') && !id.is_empty() {
        clean
    } else {
        let clean = clean.strip_prefix('.').map_or(clean.clone(), |rest| format!("_{rest}"));
        format!("{clean}-{}", &sha256_hex(id)[..8])
    }
}

pub fn record_dir(root: &Path, entry_id: &str, pass: u32) -> PathBuf {
    root.join(entry_dir_name(entry_id)).join(pass.to_string())
}

/// Writes `record.json`, the final code and each exchange as text files.
/// Returns false without writing when a record exists and `overwrite` is off.
pub fn persist_record(root: &Path, record: &RunRecord, overwrite: bool) -> Result<bool, RunError> {
    let dir = record_dir(root, &record.entry_id, record.pass);
    let perr = |e: &dyn std::fmt::Display| RunError::Persist {
        path: dir.clone(),
        message: e.to_string(),
    };
    let path = dir.join("record.json");
    if path.exists() && !overwrite {
        return Ok(false);
    }
    std::fs::create_dir_all(&dir).map_err(|e| perr(&e))?;
    for (i, ex) in record.transcript.iter().enumerate() {
        let stem = format!("{i:02}-{}", ex.role.as_str());
        let prompt = if ex.prompt.system.is_empty() {
            ex.prompt.user.clone()
        } else {
            format!("[system]\n{}\n\n[user]\n{}", ex.prompt.system, ex.prompt.user)
        };
        std::fs::write(dir.join(format!("{stem}.prompt.txt")), prompt).map_err(|e| perr(&e))?;
        std::fs::write(dir.join(format!("{stem}.reply.txt")), &ex.reply).map_err(|e| perr(&e))?;
    }
    if let Some(code) = &record.final_code {
        std::fs::write(dir.join("final_code.py"), code).map_err(|e| perr(&e))?;
    }
    let json = serde_json::to_string_pretty(record).map_err(|e| perr(&e))?;
    let tmp = dir.join("record.json.tmp");
    std::fs::write(&tmp, json + "\n").map_err(|e| perr(&e))?;
    std::fs::rename(&tmp, &path).map_err(|e| perr(&e))?;
    Ok(true)
}

pub fn load_record(root: &Path, entry_id: &str, pass: u32) -> Result<Option<RunRecord>, RunError> {
    let path = record_dir(root, entry_id, pass).join("record.json");
    if !path.exists() {
        return Ok(None);
    }
    read_record(&path).map(Some)
}

pub fn read_record(path: &Path) -> Result<RunRecord, RunError> {
    let perr = |e: &dyn std::fmt::Display| RunError::Persist {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let text = std::fs::read_to_string(path).map_err(|e| perr(&e))?;
    serde_json::from_str(&text).map_err(|e| perr(&e))
}

/// Every `record.json` under `root`, sorted by (entry_id, pass).
pub fn load_all_records(root: &Path) -> Result<Vec<RunRecord>, RunError> {
    let mut out = Vec::new();
    let perr = |p: &Path, e: &dyn std::fmt::Display| RunError::Persist {
        path: p.to_path_buf(),
        message: e.to_string(),
    };
    let entries = std::fs::read_dir(root).map_err(|e| perr(root, &e))?;
    for e in entries {
        let entry_dir = e.map_err(|e| perr(root, &e))?.path();
        if !entry_dir.is_dir() {
            continue;
        }
        for p in std::fs::read_dir(&entry_dir).map_err(|e| perr(&entry_dir, &e))? {
            let path = p.map_err(|e| perr(&entry_dir, &e))?.path().join("record.json");
            if path.is_file() {
                out.push(read_record(&path)?);
            }
        }
    }
    out.sort_by(|a, b| (&a.entry_id, a.pass).cmp(&(&b.entry_id, b.pass)));
    Ok(out)
}

/// Re-applies scoring to the archived workdir of a scored run. Other
/// outcomes are returned unchanged. Nothing is re-executed or re-queried.
pub fn rescore(record: &RunRecord, entry: &BenchmarkEntry, harness: &Harness) -> RunRecord {
    let mut out = record.clone();
    if record.outcome != RunOutcome::Scored {
        return out;
    }
    let Some(workdir) = &record.final_workdir else {
        return out;
    };
    let report = record
        .steps
        .iter()
        .rev()
        .filter_map(|s| s.execution.as_ref())
        .find(|r| &r.workdir == workdir);
    if let Some(report) = report {
        out.scorecard = evaluate(entry, report, workdir, &harness.profile().output_spec, &harness.evaluator);
    }
    out
}

/// Records grouped by entry id; handy for callers that aggregate by hand.
pub fn group_by_entry(records: &[RunRecord]) -> BTreeMap<&str, Vec<&RunRecord>> {
    let mut m: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.entry_id.as_str()).or_default().push(r);
    }
    m
}

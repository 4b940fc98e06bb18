#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use physcode::benchdata::{BenchmarkEntry, Domain};
use physcode::eval::{Evaluator, HashEmbedder, ScoreCard};
use physcode::gateway::{BackendHandle, CallLog, Scenario, ScriptRule, ScriptedBackend};
use physcode::mediacheck::MediaTools;
use physcode::profile::EngineProfile;
use physcode::sandbox::{ErrorClass, ExecutionReport, Outcome, SandboxPolicy};
use physcode::smrf::{AgentRole, Harness, Mode, RunOutcome, RunRecord, Step};

pub const PASS: &str = "```python\nprint('ok')\n```";
pub const FAIL: &str = "```python\nraise ValueError('mass must be positive')\n```";

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn mediatool() -> MediaTools {
    let tool = repo().join("tools/mediatool.py").display().to_string();
    MediaTools {
        probe_command: vec!["python3".into(), tool.clone(), "probe".into(), "{input}".into()],
        decode_command: vec!["python3".into(), tool, "decode".into(), "{input}".into(), "{indices}".into()],
    }
}

pub fn policy(dir: &Path, timeout: Duration) -> SandboxPolicy {
    SandboxPolicy::default().with_timeout(timeout).with_root(dir.join("runs"))
}

pub fn harness_named(dir: &Path, name: &str) -> Harness {
    let profile = EngineProfile::python(name, dir);
    let ev = Evaluator::new(MediaTools::default(), Arc::new(HashEmbedder::new(16)));
    Harness::new(profile, policy(dir, Duration::from_secs(10)), ev).unwrap()
}

pub fn harness(dir: &Path) -> Harness {
    harness_named(dir, "test")
}

pub fn scripted(rules: Vec<ScriptRule>) -> (BackendHandle, CallLog) {
    let log = CallLog::new();
    let b = ScriptedBackend::new(
        "mock",
        Scenario {
            rules,
            default_reply: None,
        },
        log.clone(),
    );
    (Arc::new(b), log)
}

pub fn entry(id: &str) -> BenchmarkEntry {
    BenchmarkEntry::new(id, "a rubber ball drops onto a table and bounces", Domain::RigidBody)
}

fn exec(outcome: Outcome, class: Option<ErrorClass>) -> ExecutionReport {
    ExecutionReport {
        outcome,
        exit_code: Some(if outcome == Outcome::Success { 0 } else { 1 }),
        stdout_tail: String::new(),
        stderr_tail: String::new(),
        wall_time_secs: 0.0,
        workdir: PathBuf::new(),
        error_class: class,
    }
}

fn step(role: AgentRole, report: ExecutionReport) -> Step {
    Step {
        role,
        prompt_digest: String::new(),
        reply_digest: String::new(),
        code_digest: None,
        execution: Some(report),
    }
}

/// A scored record whose only step passed.
pub fn scored(id: &str, pass: u32, card: ScoreCard) -> RunRecord {
    RunRecord {
        entry_id: id.to_string(),
        pass,
        mode: Mode::Smrf,
        profile: "test".into(),
        steps: vec![step(AgentRole::Generator, exec(Outcome::Success, None))],
        final_code: Some("print('ok')".into()),
        final_workdir: None,
        outcome: RunOutcome::Scored,
        scorecard: card,
        failure: None,
        wall_time_secs: 0.0,
        transcript: Vec::new(),
    }
}

/// A record whose generator failed with `class`; `fixed` decides whether
/// a corrector then succeeded.
pub fn classified(id: &str, pass: u32, class: ErrorClass, fixed: bool) -> RunRecord {
    let mut steps = vec![step(AgentRole::Generator, exec(Outcome::NonzeroExit, Some(class)))];
    if fixed {
        steps.push(step(AgentRole::Corrector, exec(Outcome::Success, None)));
    } else {
        for _ in 0..3 {
            steps.push(step(AgentRole::Corrector, exec(Outcome::NonzeroExit, Some(class))));
        }
    }
    RunRecord {
        steps,
        outcome: if fixed { RunOutcome::Scored } else { RunOutcome::FrameworkFailure },
        scorecard: if fixed { ScoreCard::compose(true, 10.0, 5.0, 5.0) } else { ScoreCard::zero() },
        final_code: fixed.then(|| "print('ok')".to_string()),
        ..scored(id, pass, ScoreCard::zero())
    }
}

/// Spearman by definition: ranks by counting, then Pearson.
pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx).powi(2);
        syy += (ry[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Fleiss' kappa by expanding every item into rater labels and counting
/// agreeing ordered rater pairs.
pub fn brute_kappa(votes: &[Vec<u64>]) -> f64 {
    let k = votes[0].len();
    let mut label_totals = vec![0u64; k];
    let mut agreement = 0.0;
    for row in votes {
        let labels: Vec<usize> = row
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n as usize))
            .collect();
        let raters = labels.len();
        let mut agree = 0usize;
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if i != j && labels[i] == labels[j] {
                    agree += 1;
                }
            }
            label_totals[labels[i]] += 1;
        }
        agreement += agree as f64 / (raters * (raters - 1)) as f64;
    }
    let p_bar = agreement / votes.len() as f64;
    let all: u64 = label_totals.iter().sum();
    let p_e: f64 = label_totals.iter().map(|&t| (t as f64 / all as f64).powi(2)).sum();
    (p_bar - p_e) / (1.0 - p_e)
}

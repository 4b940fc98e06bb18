mod common;

use std::sync::Arc;

use common::*;
use physcode::benchdata::{Dataset, Split};
use physcode::config::HarnessConfig;
use physcode::eval::{evaluate, Evaluator, HashEmbedder, OutputSpec};
use physcode::gateway::{ScriptRule, ScriptedFailure};
use physcode::reporting::{aggregate, render_report, Format};
use physcode::sandbox::ErrorClass;
use physcode::smrf::{
    load_all_records, rescore, run_benchmark, run_entry, run_single_agent, AgentRole, Agents, BenchmarkOptions,
    Mode, RunConfig, RunOutcome,
};

fn dataset(ids: &[&str]) -> Dataset {
    let mut entries: Vec<_> = ids.iter().map(|id| entry(id)).collect();
    for e in &mut entries {
        e.split = Split::Test;
    }
    Dataset::from_entries(entries, "memory").unwrap()
}

#[test]
fn benchmark_persists_and_reloads_records() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let (b, log) = scripted(vec![
        ScriptRule::always("generator", FAIL),
        ScriptRule::always("corrector", PASS),
        ScriptRule::always("refiner", PASS),
    ]);
    let ds = dataset(&["a", "b", "c"]);
    let cfg = RunConfig {
        passes: 2,
        ..RunConfig::default()
    };
    let opts = BenchmarkOptions {
        workers: 3,
        results_root: Some(dir.path().join("results")),
        overwrite: false,
    };
    let recs = run_benchmark(&ds, &Agents::single(b.clone()), &h, &cfg, &opts).unwrap();
    assert_eq!(recs.len(), 6);
    assert_eq!(log.len(), 18);
    assert!(recs.iter().all(|r| r.transcript.len() == 3));
    let loaded = load_all_records(&dir.path().join("results")).unwrap();
    // Transcripts live in the text files, not in record.json.
    let stripped: Vec<_> = recs
        .iter()
        .cloned()
        .map(|mut r| {
            r.transcript.clear();
            r
        })
        .collect();
    assert_eq!(loaded, stripped);
    let files: Vec<String> = std::fs::read_dir(dir.path().join("results/a/0"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for f in ["record.json", "final_code.py", "00-generator.prompt.txt", "01-corrector.reply.txt", "02-refiner.prompt.txt"] {
        assert!(files.iter().any(|x| x == f), "{f} missing from {files:?}");
    }

    // Rerunning reuses what is on disk.
    let again = run_benchmark(&ds, &Agents::single(b), &h, &cfg, &opts).unwrap();
    assert_eq!(log.len(), 18);
    assert_eq!(again, loaded);

    let rep = aggregate(&again, Some(&ds)).unwrap();
    assert_eq!(rep.error_histogram[&ErrorClass::Parameter].failures, 6);
    assert_eq!(rep.error_histogram[&ErrorClass::Parameter].success_rate, 1.0);
    let md = render_report(&rep, Format::Markdown).unwrap();
    assert!(md.starts_with("| Setting | Code-based | Visual-based | Total |"));
}

#[test]
fn transport_failures_are_kept_out_of_means() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let (b, _) = scripted(vec![
        ScriptRule {
            agent: Some("*".into()),
            entry_id: Some("down".into()),
            fail: Some(ScriptedFailure::Transport),
            ..ScriptRule::default()
        },
        ScriptRule::always("*", PASS),
    ]);
    let ds = dataset(&["up", "down"]);
    let recs = run_benchmark(&ds, &Agents::single(b), &h, &RunConfig::default(), &BenchmarkOptions::default()).unwrap();
    assert_eq!(recs.len(), 10);
    let down: Vec<_> = recs.iter().filter(|r| r.entry_id == "down").collect();
    assert!(down.iter().all(|r| r.outcome == RunOutcome::TransportFailure && r.failure.is_some()));
    let rep = aggregate(&recs, None).unwrap();
    assert_eq!(rep.transport_failures, 5);
    assert_eq!(rep.unscored_entries, ["down"]);
    assert_eq!(rep.per_entry.len(), 1);
    assert_eq!(rep.overall, rep.per_entry[0].total);
}

#[test]
fn swapping_profiles_changes_only_the_profile_name() {
    let dir = tempfile::tempdir().unwrap();
    let rules = vec![
        ScriptRule::always("generator", FAIL),
        ScriptRule::always("corrector", PASS),
        ScriptRule::always("refiner", PASS),
    ];
    let cfg = RunConfig::default();
    let run = |name: &str| {
        let h = harness_named(dir.path(), name);
        let (b, _) = scripted(rules.clone());
        run_entry(&entry("e"), &Agents::single(b), &h, &cfg).unwrap()
    };
    let (a, b) = (run("engine_a"), run("engine_b"));
    assert_eq!(a.profile, "engine_a");
    let mut b = b.normalized();
    b.profile = a.profile.clone();
    assert_eq!(a.normalized(), b);
}

#[test]
fn digests_are_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let rules = vec![ScriptRule::always("*", FAIL)];
    let digests = || {
        let (b, _) = scripted(rules.clone());
        let r = run_entry(&entry("e"), &Agents::single(b), &h, &RunConfig::default()).unwrap();
        r.steps
            .iter()
            .map(|s| (s.prompt_digest.clone(), s.reply_digest.clone(), s.code_digest.clone()))
            .collect::<Vec<_>>()
    };
    let first = digests();
    assert_eq!(first.len(), 4);
    assert_eq!(first, digests());
    // Corrector prompts carry the error, so they differ from the generator's.
    assert_ne!(first[0].0, first[1].0);
}

#[test]
fn single_agent_uses_one_backend_and_never_refines() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let (b, log) = scripted(vec![
        ScriptRule::always("generator", FAIL),
        ScriptRule::always("corrector", PASS),
    ]);
    let cfg = RunConfig {
        mode: Mode::SingleAgent,
        ..RunConfig::default()
    };
    let r = run_single_agent(&entry("e"), &b, &h, &cfg).unwrap();
    let roles: Vec<_> = r.steps.iter().map(|s| s.role).collect();
    assert_eq!(roles, [AgentRole::Generator, AgentRole::Corrector]);
    assert_eq!(r.mode, Mode::SingleAgent);
    assert_eq!(log.len(), 2);
    assert!(run_single_agent(&entry("e"), &b, &h, &RunConfig::default()).is_err());
}

#[test]
fn video_output_is_scored_on_every_component() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = harness(dir.path());
    h.evaluator = Evaluator::new(mediatool(), Arc::new(HashEmbedder::new(64)));
    let video = repo().join("fixtures/videos/none/genesis_video.mp4");
    let code = format!("```python\nimport shutil\nshutil.copy({:?}, 'genesis_video.mp4')\n```", video.display().to_string());
    let (b, _) = scripted(vec![ScriptRule::always("*", code.as_str())]);
    let r = run_entry(&entry("e"), &Agents::single(b), &h, &RunConfig::default()).unwrap();
    let c = &r.scorecard;
    assert_eq!(r.outcome, RunOutcome::Scored);
    assert_eq!((c.s_exec, c.s_file), (25.0, 25.0));
    assert!((0.0..=25.0).contains(&c.s_clip) && (0.0..=25.0).contains(&c.s_motion));
    assert!(c.notes.is_empty(), "{:?}", c.notes);
    assert_eq!(c.rubric_breakdown.len(), 5);

    // Rescoring the archived workdir reproduces the card without new calls.
    assert_eq!(rescore(&r, &entry("e"), &h).scorecard, r.scorecard);

    // Dropping the video from the archive drops the file points on rescore.
    std::fs::remove_file(r.final_workdir.as_ref().unwrap().join("genesis_video.mp4")).unwrap();
    let again = rescore(&r, &entry("e"), &h);
    assert_eq!(again.scorecard.s_exec, 25.0);
    assert_eq!(again.scorecard.s_file, 0.0);
}

#[test]
fn evaluate_zeroes_everything_without_execution() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let report = h.sandbox.run("raise SystemExit(2)").unwrap();
    let card = evaluate(&entry("e"), &report, &report.workdir, &OutputSpec::default(), &h.evaluator);
    assert_eq!(card.total, 0.0);
}

#[test]
fn checked_in_config_loads() {
    let cfg = HarnessConfig::load(&repo().join("fixtures/config.toml")).unwrap();
    assert!(cfg.media.probe_command[1].ends_with("tools/mediatool.py"));
    assert!(std::path::Path::new(&cfg.media.probe_command[1]).is_file());
    let log = physcode::gateway::CallLog::new();
    let agents = cfg.agents(&log).unwrap();
    assert_eq!(agents.corrector.name(), "generator");
    assert!(cfg.backend("judge", &log).is_ok());
    assert!(physcode::profile::find_profile("stub", &cfg.profiles_dir).is_ok());
    assert!(physcode::profile::find_profile("genesis", &cfg.profiles_dir).is_ok());
}

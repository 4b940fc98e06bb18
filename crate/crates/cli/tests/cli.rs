use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn physcode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physcode"))
        .args(args)
        .env_remove("PHYSCODE_CONFIG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Config with absolute paths and scripted backends written into `dir`.
fn write_config(dir: &Path, generator: &str) -> PathBuf {
    let root = repo();
    let scenario = dir.join("gen.json");
    std::fs::write(&scenario, generator).unwrap();
    let mediatool = root.join("tools/mediatool.py");
    let text = format!(
        r#"
profiles_dir = "{profiles}"
workers = 8

[sandbox]
timeout_secs = 30.0

[media]
probe_command = ["python3", "{tool}", "probe", "{{input}}"]
decode_command = ["python3", "{tool}", "decode", "{{input}}", "{{indices}}"]

[embedder]
kind = "hash"
dimension = 64

[backends.generator]
kind = "scripted"
scenario = "{scenario}"

[backends.judge]
kind = "scripted"
scenario = "{judge}"
"#,
        profiles = root.join("profiles").display(),
        tool = mediatool.display(),
        scenario = scenario.display(),
        judge = root.join("fixtures/mocks/judge.json").display(),
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn scenario_always(code: &str) -> String {
    let reply = format!("```python\n{code}\n```");
    serde_json::json!({"rules": [{"agent": "*", "reply": reply}]}).to_string()
}

/// The first `n` test entries of the distribution fixture.
fn small_dataset(dir: &Path, n: usize) -> PathBuf {
    let text = std::fs::read_to_string(repo().join("fixtures/bench.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.contains(r#""split":"test""#)).take(n).collect();
    let path = dir.join("small.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn record_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).unwrap() {
        let d = e.unwrap().path();
        if d.is_dir() && !d.file_name().unwrap().to_string_lossy().starts_with('.') {
            for p in std::fs::read_dir(&d).unwrap() {
                let f = p.unwrap().path().join("record.json");
                if f.is_file() {
                    out.push(f);
                }
            }
        }
    }
    out.sort();
    out
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = physcode(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_exits_2() {
    let o = physcode(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn credential_flags_do_not_exist() {
    let o = physcode(&["eval", "run", "--dataset", "x", "--api-key", "sk-123"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_stats_on_distribution_fixture() {
    let path = repo().join("fixtures/bench.jsonl");
    let o = physcode(&["dataset", "stats", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for row in [
        "| rigid_body | 144 | 96 | 240 |",
        "| soft_body | 108 | 72 | 180 |",
        "| fluid | 84 | 76 | 160 |",
        "| mechanics | 72 | 48 | 120 |",
        "| multi-domain | 82 | 138 | 220 |",
        "entries: 700  train: 600  test: 100",
    ] {
        assert!(out.contains(row), "missing {row:?} in\n{out}");
    }
}

#[test]
fn dataset_validate_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let good = small_dataset(dir.path(), 3);
    let o = physcode(&["dataset", "validate", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("3 entries ok"));

    let bad = dir.path().join("bad.jsonl");
    let mut text = std::fs::read_to_string(&good).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&bad, text).unwrap();
    let o = physcode(&["dataset", "validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn kappa_from_votes_file_and_dataset() {
    let root = repo();
    let o = physcode(&["kappa", root.join("fixtures/kappa_votes.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("fleiss_kappa = 0.7120 over 100 items"), "{}", stdout(&o));
    let o = physcode(&["kappa", "--dataset", root.join("fixtures/bench.jsonl").to_str().unwrap()]);
    assert!(stdout(&o).contains("fleiss_kappa = 0.7120"));
    assert_eq!(physcode(&["kappa"]).status.code(), Some(2));
}

#[test]
fn eval_run_writes_five_records_per_test_entry_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &scenario_always("print('simulated')"));
    let results = dir.path().join("results");
    let dataset = small_dataset(dir.path(), 10);
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "eval",
        "run",
        "--mode",
        "smrf",
        "--profile",
        "stub",
        "--passes",
        "5",
        "--dataset",
        dataset.to_str().unwrap(),
        "--results",
        results.to_str().unwrap(),
    ];
    let t = Instant::now();
    let o = physcode(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let files = record_files(&results);
    assert_eq!(files.len(), 5 * 10);
    assert!(stderr(&o).contains("50 runs (50 scored"), "{}", stderr(&o));
    eprintln!("50 runs in {:?}", t.elapsed());

    let before: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let o = physcode(&args);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("0 backend calls"), "{}", stderr(&o));
    let after: Vec<Vec<u8>> = record_files(&results).iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(before, after);

    let rec: serde_json::Value = serde_json::from_slice(&before[0]).unwrap();
    assert_eq!(rec["profile"], "stub");
    assert_eq!(rec["mode"], "smrf");
}

#[test]
fn strict_mode_fails_on_framework_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &scenario_always("raise ValueError('mass must be positive')"));
    let dataset = small_dataset(dir.path(), 2);
    let results = dir.path().join("results");
    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "eval",
        "run",
        "--passes",
        "1",
        "--dataset",
        dataset.to_str().unwrap(),
        "--results",
        results.to_str().unwrap(),
    ];
    let o = physcode(&base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut strict = base.to_vec();
    strict.insert(0, "--strict");
    assert_eq!(physcode(&strict).status.code(), Some(1));

    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(&record_files(&results)[0]).unwrap()).unwrap();
    assert_eq!(rec["outcome"], "framework_failure");
    assert_eq!(rec["steps"].as_array().unwrap().len(), 4);

    let o = physcode(&["--config", cfg.to_str().unwrap(), "report", "--results", results.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("| parameter | 100 | 0 |"), "{}", stdout(&o));
}

#[test]
fn report_formats_and_output_guard() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &scenario_always("print('ok')"));
    let dataset = small_dataset(dir.path(), 3);
    let results = dir.path().join("results");
    let c = cfg.to_str().unwrap();
    let r = results.to_str().unwrap();
    let d = dataset.to_str().unwrap();
    let o = physcode(&["--config", c, "eval", "run", "--passes", "2", "--dataset", d, "--results", r]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = physcode(&["--config", c, "report", "--results", r, "--dataset", d, "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["records"], 6);
    assert_eq!(v["overall"], 25.0);
    assert!(v["by_difficulty"]["easy"].is_number());

    let o = physcode(&["--config", c, "report", "--results", r, "--format", "csv"]);
    assert!(stdout(&o).lines().count() > 3);

    let out = dir.path().join("report.md");
    let o = physcode(&["--config", c, "report", "--results", r, "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = physcode(&["--config", c, "report", "--results", r, "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--overwrite"));
    assert_eq!(physcode(&["report", "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn video_run_scores_rescoring_is_stable_and_judge_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let video = repo().join("fixtures/videos/none/genesis_video.mp4");
    let code = format!("import shutil\nshutil.copy({:?}, 'genesis_video.mp4')", video.display().to_string());
    let cfg = write_config(dir.path(), &scenario_always(&code));
    let dataset = small_dataset(dir.path(), 2);
    let results = dir.path().join("results");
    let c = cfg.to_str().unwrap();
    let r = results.to_str().unwrap();
    let d = dataset.to_str().unwrap();

    let o = physcode(&["--config", c, "eval", "run", "--passes", "1", "--dataset", d, "--results", r]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(&record_files(&results)[0]).unwrap()).unwrap();
    assert_eq!(rec["scorecard"]["s_exec"], 25.0);
    assert_eq!(rec["scorecard"]["s_file"], 25.0);

    let o = physcode(&["--config", c, "eval", "score-only", "--dataset", d, "--results", r]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("2 records, 0 would change"), "{}", stderr(&o));

    let o = physcode(&["--config", c, "judge", "--dataset", d, "--results", r]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("judge_overall = 4.4000 over 2 runs"), "{}", stdout(&o));
    let judged: Vec<PathBuf> = record_files(&results).iter().map(|f| f.with_file_name("judge.json")).collect();
    assert!(judged.iter().all(|p| p.is_file()));

    // A second pass reuses the stored verdicts.
    let o = physcode(&["--config", c, "judge", "--dataset", d, "--results", r]);
    assert!(stdout(&o).starts_with("judge_overall = 4.4000 over 2 runs"), "{}", stdout(&o));
}

#[test]
fn correlate_joins_ratings_per_prompt() {
    let dir = tempfile::tempdir().unwrap();
    // Exec fails for the first entry only, so totals differ.
    let first = {
        let text = std::fs::read_to_string(small_dataset(dir.path(), 3)).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        v["id"].as_str().unwrap().to_string()
    };
    let scenario = serde_json::json!({"rules": [
        {"agent": "*", "entry_id": first, "reply": "```python\nraise ValueError('mass must be positive')\n```"},
        {"agent": "*", "reply": "```python\nprint('ok')\n```"}
    ]});
    let cfg = write_config(dir.path(), &scenario.to_string());
    let dataset = dir.path().join("small.jsonl");
    let results = dir.path().join("results");
    let c = cfg.to_str().unwrap();
    let r = results.to_str().unwrap();
    let o = physcode(&["--config", c, "eval", "run", "--passes", "1", "--dataset", dataset.to_str().unwrap(), "--results", r]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let text = std::fs::read_to_string(&dataset).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .collect();
    let ratings = dir.path().join("ratings.csv");
    std::fs::write(&ratings, format!("entry_id,rating\n{},1\n{},4\n{},5\n", ids[0], ids[1], ids[2])).unwrap();
    let o = physcode(&["--config", c, "correlate", "--results", r, "--ratings", ratings.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // Scores tie on the two passing entries: ranks (1, 2.5, 2.5) vs (1, 2, 3).
    assert!(stdout(&o).contains("spearman_rho = 0.8660 over 3 points"), "{}", stdout(&o));

    let sys = format!("base={r}");
    let o = physcode(&[
        "correlate",
        "--system",
        &sys,
        "--granularity",
        "prompt-system",
        "--ratings",
        ratings.to_str().unwrap(),
    ]);
    // Ratings carry no system column, so nothing joins per system.
    assert_eq!(o.status.code(), Some(1));
}

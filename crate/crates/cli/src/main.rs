//! `physcode` command-line entry point.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use physcode::benchdata::{dataset_stats, load_dataset, Dataset};
use physcode::config::HarnessConfig;
use physcode::eval::{judge_vlm, JudgeInput, JudgeReport};
use physcode::gateway::CallLog;
use physcode::mediacheck::extract_frames;
use physcode::profile::find_profile;
use physcode::reporting::{
    aggregate, fleiss_kappa, join_ratings, parse_vote_matrix, read_ratings, render_report, spearman,
    votes_from_dataset, Format, Granularity, Metric, SystemRecords,
};
use physcode::smrf::{
    load_all_records, persist_record, record_dir, rescore, run_benchmark, BenchmarkOptions, Harness, Mode,
    RunOutcome, RunRecord,
};

#[derive(Parser)]
#[command(name = "physcode", version, about = "Physics-simulation code generation harness")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Harness config (TOML). Falls back to $PHYSCODE_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit 1 when any run failed or went unscored.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect a benchmark file.
    #[command(subcommand, arg_required_else_help = true)]
    Dataset(DatasetCmd),
    /// Run or re-score the benchmark.
    #[command(subcommand, arg_required_else_help = true)]
    Eval(EvalCmd),
    /// Aggregate stored records.
    Report(ReportArgs),
    /// Spearman correlation between scores and human ratings.
    Correlate(CorrelateArgs),
    /// Fleiss' kappa over a vote matrix.
    Kappa(KappaArgs),
    /// Rate result videos with the judge backend.
    Judge(JudgeArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Distribution table.
    Stats {
        path: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: StatsFormat,
    },
    /// Parse and validate every entry.
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsFormat {
    Markdown,
    Json,
}

#[derive(Subcommand)]
enum EvalCmd {
    Run(RunArgs),
    /// Re-apply scoring to archived workdirs without querying backends.
    ScoreOnly(ScoreOnlyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Smrf,
    SingleAgent,
    ZeroShot,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Smrf => Mode::Smrf,
            ModeArg::SingleAgent => Mode::SingleAgent,
            ModeArg::ZeroShot => Mode::ZeroShot,
        }
    }
}

#[derive(Args)]
struct ResultsArgs {
    /// Results directory; defaults to the config's results_root.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    mode: Option<ModeArg>,
    /// Profile name (looked up in profiles_dir) or path to a profile file.
    #[arg(long, default_value = "genesis")]
    profile: String,
    #[arg(long)]
    passes: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    results: ResultsArgs,
    /// Re-run passes that already have a record.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct ScoreOnlyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Profile to score against; defaults to the one named in each record.
    #[arg(long)]
    profile: Option<String>,
    #[command(flatten)]
    results: ResultsArgs,
    /// Write the new scorecards back. Without it nothing on disk changes.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    results: ResultsArgs,
    /// Benchmark file, for difficulty and domain breakdowns.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: Format,
    /// Write here instead of stdout. Refuses to replace a file without --overwrite.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Prompt,
    PromptSystem,
}

#[derive(Args)]
struct CorrelateArgs {
    /// CSV with entry_id,rating or entry_id,system,rating.
    #[arg(long)]
    ratings: PathBuf,
    /// Results of one system as NAME=DIR; repeatable. Defaults to the
    /// results root labelled "default".
    #[arg(long = "system", value_parser = parse_system)]
    systems: Vec<(String, PathBuf)>,
    #[command(flatten)]
    results: ResultsArgs,
    #[arg(long, default_value = "total")]
    metric: Metric,
    #[arg(long, default_value = "prompt")]
    granularity: GranularityArg,
}

fn parse_system(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), dir.into())),
        _ => Err(format!("expected NAME=DIR, got {s:?}")),
    }
}

#[derive(Args)]
struct KappaArgs {
    /// One row per item, one count per category.
    #[arg(required_unless_present = "dataset", conflicts_with = "dataset")]
    votes: Option<PathBuf>,
    /// Take votes from the preference annotations of a benchmark file.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    results: ResultsArgs,
    /// Only judge this entry.
    #[arg(long)]
    entry: Option<String>,
    /// Profile used to locate the output video.
    #[arg(long, default_value = "genesis")]
    profile: String,
    /// Re-judge runs that already have judge.json.
    #[arg(long)]
    overwrite: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Ok(false) means the command ran but strict mode found failures.
fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Dataset(DatasetCmd::Stats { path, format }) => {
            let ds = load_dataset(path)?;
            let stats = dataset_stats(&ds);
            match format {
                StatsFormat::Markdown => print!("{}", stats.to_markdown()),
                StatsFormat::Json => println!("{}", serde_json::to_string_pretty(&stats)?),
            }
            Ok(true)
        }
        Command::Dataset(DatasetCmd::Validate { path }) => {
            let ds = load_dataset(path)?;
            println!("{}: {} entries ok", path.display(), ds.len());
            Ok(true)
        }
        Command::Eval(EvalCmd::Run(a)) => eval_run(cli, a),
        Command::Eval(EvalCmd::ScoreOnly(a)) => score_only(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Correlate(a) => correlate(cli, a),
        Command::Kappa(a) => {
            let votes = match (&a.votes, &a.dataset) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    parse_vote_matrix(&text)?
                }
                (None, Some(d)) => votes_from_dataset(&load_dataset(d)?),
                (None, None) => bail!("no votes given"),
            };
            let kappa: f64 = fleiss_kappa(&votes)?;
            println!("fleiss_kappa = {kappa:.4} over {} items", votes.len());
            Ok(true)
        }
        Command::Judge(a) => judge(cli, a),
    }
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    Ok(HarnessConfig::discover(cli.config.as_deref())?)
}

fn results_root(cfg: &HarnessConfig, r: &ResultsArgs) -> PathBuf {
    r.results.clone().unwrap_or_else(|| cfg.results_root.clone())
}

fn build_harness(cfg: &HarnessConfig, profile: &str, results: &Path) -> Result<Harness> {
    let profile = find_profile(profile, &cfg.profiles_dir)?;
    let mut policy = cfg.sandbox.clone();
    // Keep workdirs next to the records so score-only can find them later.
    if policy.workdir_root == physcode::sandbox::SandboxPolicy::default().workdir_root {
        policy.workdir_root = results.join(".workdirs");
    }
    Ok(Harness::new(profile, policy, cfg.evaluator())?)
}

fn all_scored(records: &[RunRecord]) -> bool {
    records.iter().all(|r| r.outcome == RunOutcome::Scored)
}

fn eval_run(cli: &Cli, a: &RunArgs) -> Result<bool> {
    let cfg = load_config(cli)?;
    let ds = load_dataset(&a.dataset)?;
    let root = results_root(&cfg, &a.results);
    let harness = build_harness(&cfg, &a.profile, &root)?;
    let mut run = cfg.run.clone();
    if let Some(m) = a.mode {
        run.mode = m.into();
    }
    if let Some(p) = a.passes {
        run.passes = p;
    }
    let log = CallLog::new();
    let agents = cfg.agents(&log)?;
    let opts = BenchmarkOptions {
        workers: a.workers.unwrap_or(cfg.workers).max(1),
        results_root: Some(root.clone()),
        overwrite: a.overwrite,
    };
    let records = run_benchmark(&ds, &agents, &harness, &run, &opts)?;
    let scored = records.iter().filter(|r| r.outcome == RunOutcome::Scored).count();
    eprintln!(
        "{} runs ({} scored, {} backend calls) in {}",
        records.len(),
        scored,
        log.len(),
        root.display()
    );
    if !records.is_empty() {
        let rep = aggregate(&records, Some(&ds))?;
        print!("{}", render_report(&rep, Format::Markdown)?);
    }
    Ok(!cli.strict || all_scored(&records))
}

fn score_only(cli: &Cli, a: &ScoreOnlyArgs) -> Result<bool> {
    let cfg = load_config(cli)?;
    let ds = load_dataset(&a.dataset)?;
    let root = results_root(&cfg, &a.results);
    let records = load_all_records(&root)?;
    let mut harnesses: Vec<(String, Harness)> = Vec::new();
    let mut changed = 0usize;
    let mut out = Vec::with_capacity(records.len());
    for rec in &records {
        let Some(entry) = ds.get(&rec.entry_id) else {
            log::warn!("{}: not in dataset, left as is", rec.entry_id);
            out.push(rec.clone());
            continue;
        };
        let name = a.profile.clone().unwrap_or_else(|| rec.profile.clone());
        if !harnesses.iter().any(|(n, _)| *n == name) {
            harnesses.push((name.clone(), build_harness(&cfg, &name, &root)?));
        }
        let harness = &harnesses.iter().find(|(n, _)| *n == name).unwrap().1;
        let new = rescore(rec, entry, harness);
        if new.scorecard != rec.scorecard {
            changed += 1;
            if a.overwrite {
                persist_record(&root, &new, true)?;
            }
        }
        out.push(new);
    }
    let verb = if a.overwrite { "rewritten" } else { "would change (pass --overwrite to write)" };
    eprintln!("{} records, {changed} {verb}", records.len());
    if !out.is_empty() {
        print!("{}", render_report(&aggregate(&out, Some(&ds))?, Format::Markdown)?);
    }
    Ok(!cli.strict || all_scored(&out))
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<bool> {
    let cfg = load_config(cli)?;
    let root = results_root(&cfg, &a.results);
    let records = load_all_records(&root)?;
    let ds: Option<Dataset> = a.dataset.as_ref().map(load_dataset).transpose()?;
    let rep = aggregate(&records, ds.as_ref())?;
    let text = render_report(&rep, a.format)?;
    match &a.output {
        Some(p) if p.exists() && !a.overwrite => bail!("{} exists (pass --overwrite to replace)", p.display()),
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(!cli.strict || (rep.framework_failures == 0 && rep.transport_failures == 0))
}

fn correlate(cli: &Cli, a: &CorrelateArgs) -> Result<bool> {
    let ratings = read_ratings(&a.ratings)?;
    let dirs = if a.systems.is_empty() {
        let cfg = load_config(cli)?;
        vec![("default".to_string(), results_root(&cfg, &a.results))]
    } else {
        a.systems.clone()
    };
    let loaded: Vec<(String, Vec<RunRecord>)> = dirs
        .into_iter()
        .map(|(name, dir)| Ok((name, load_all_records(&dir)?)))
        .collect::<Result<_>>()?;
    let systems: Vec<SystemRecords<'_>> = loaded
        .iter()
        .map(|(name, recs)| SystemRecords {
            system: name,
            records: recs,
        })
        .collect();
    let granularity = match a.granularity {
        GranularityArg::Prompt => Granularity::Prompt,
        GranularityArg::PromptSystem => Granularity::PromptSystem,
    };
    let (x, y) = join_ratings(&systems, &ratings, a.metric, granularity);
    let c = spearman(&x, &y).context("not enough rated points")?;
    println!("spearman_rho = {:.4} over {} points", c.rho, c.n);
    Ok(true)
}

#[derive(Serialize)]
struct JudgeRecord<'a> {
    entry_id: &'a str,
    pass: u32,
    report: &'a JudgeReport,
}

fn judge(cli: &Cli, a: &JudgeArgs) -> Result<bool> {
    let cfg = load_config(cli)?;
    let ds = load_dataset(&a.dataset)?;
    let root = results_root(&cfg, &a.results);
    let profile = find_profile(&a.profile, &cfg.profiles_dir)?;
    let backend = cfg.backend("judge", &CallLog::new())?;
    let mut overall = Vec::new();
    let mut failed = 0usize;
    for rec in load_all_records(&root)? {
        if a.entry.as_deref().is_some_and(|e| e != rec.entry_id) || rec.outcome != RunOutcome::Scored {
            continue;
        }
        let (Some(entry), Some(workdir)) = (ds.get(&rec.entry_id), &rec.final_workdir) else {
            continue;
        };
        let out_path = record_dir(&root, &rec.entry_id, rec.pass).join("judge.json");
        if out_path.exists() && !a.overwrite {
            let prev: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path)?)?;
            if let Some(v) = prev["report"]["overall"].as_f64() {
                overall.push(v);
            }
            continue;
        }
        let video = workdir.join(&profile.output_spec.filename);
        let frames = match extract_frames(&cfg.media, &video, cfg.scoring.frame_count) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("{} pass {}: {e}", rec.entry_id, rec.pass);
                failed += 1;
                continue;
            }
        };
        match judge_vlm(backend.as_ref(), &entry.prompt, &JudgeInput::Frames(frames), Some(&rec.entry_id)) {
            Ok(report) => {
                let body = JudgeRecord {
                    entry_id: &rec.entry_id,
                    pass: rec.pass,
                    report: &report,
                };
                std::fs::write(&out_path, serde_json::to_string_pretty(&body)? + "\n")?;
                println!("{}\t{}\t{:.2}", rec.entry_id, rec.pass, report.overall);
                overall.push(report.overall);
            }
            Err(e) => {
                log::warn!("{} pass {}: {e}", rec.entry_id, rec.pass);
                failed += 1;
            }
        }
    }
    if overall.is_empty() {
        eprintln!("nothing judged");
    } else {
        let mean = overall.iter().sum::<f64>() / overall.len() as f64;
        println!("judge_overall = {mean:.4} over {} runs", overall.len());
    }
    Ok(!cli.strict || failed == 0)
}

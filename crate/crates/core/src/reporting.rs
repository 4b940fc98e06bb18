//! Aggregation over passes, breakdown tables, rendering and the
//! human-rating joins behind the correlation checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchdata::{Choice, Dataset, Difficulty, Domain};
use crate::sandbox::ErrorClass;
use crate::smrf::{RunOutcome, RunRecord};
pub use crate::stats::{fleiss_kappa, spearman, StatsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to aggregate")]
    Empty,
    #[error("entry {entry_id} has {got} passes, expected {expected}")]
    UnequalPasses {
        entry_id: String,
        expected: usize,
        got: usize,
    },
    #[error("entry {entry_id} pass {pass} appears twice")]
    DuplicatePass { entry_id: String, pass: u32 },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("{0}")]
    Render(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryAggregate {
    pub entry_id: String,
    /// Passes that entered the means (transport failures excluded).
    pub passes: usize,
    pub s_exec: f64,
    pub s_file: f64,
    pub s_clip: f64,
    pub s_motion: f64,
    pub total: f64,
}

impl EntryAggregate {
    pub fn code_based(&self) -> f64 {
        self.s_exec + self.s_file
    }

    pub fn visual_based(&self) -> f64 {
        self.s_clip + self.s_motion
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Runs whose first failure had this class.
    pub failures: usize,
    /// Of those, runs that still ended with passing code.
    pub fixed: usize,
    /// Share of all classified failures.
    pub frequency: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub per_entry: Vec<EntryAggregate>,
    pub overall: f64,
    pub code_based: f64,
    pub visual_based: f64,
    pub by_difficulty: BTreeMap<Difficulty, f64>,
    pub by_domain: BTreeMap<Domain, f64>,
    pub error_histogram: BTreeMap<ErrorClass, ClassStats>,
    pub records: usize,
    pub framework_failures: usize,
    pub transport_failures: usize,
    /// Entries with no record that could be scored.
    pub unscored_entries: Vec<String>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Means per entry over its passes, then unweighted means over entries.
///
/// Transport failures are left out of every mean and counted separately.
/// Breakdowns need entry metadata and stay empty without `meta`.
pub fn aggregate(records: &[RunRecord], meta: Option<&Dataset>) -> Result<AggregateReport, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.entry_id.as_str()).or_default().push(r);
    }
    let expected = groups.values().next().map(Vec::len).unwrap_or(0);
    for (id, g) in &groups {
        if g.len() != expected {
            return Err(ReportError::UnequalPasses {
                entry_id: id.to_string(),
                expected,
                got: g.len(),
            });
        }
        let mut passes: Vec<u32> = g.iter().map(|r| r.pass).collect();
        passes.sort_unstable();
        if let Some(w) = passes.windows(2).find(|w| w[0] == w[1]) {
            return Err(ReportError::DuplicatePass {
                entry_id: id.to_string(),
                pass: w[0],
            });
        }
    }

    let mut per_entry = Vec::new();
    let mut unscored_entries = Vec::new();
    for (id, g) in &groups {
        let usable: Vec<&&RunRecord> = g
            .iter()
            .filter(|r| r.outcome != RunOutcome::TransportFailure)
            .collect();
        if usable.is_empty() {
            unscored_entries.push(id.to_string());
            continue;
        }
        let m = |f: fn(&RunRecord) -> f64| mean(usable.iter().map(|r| f(r)));
        per_entry.push(EntryAggregate {
            entry_id: id.to_string(),
            passes: usable.len(),
            s_exec: m(|r| r.scorecard.s_exec),
            s_file: m(|r| r.scorecard.s_file),
            s_clip: m(|r| r.scorecard.s_clip),
            s_motion: m(|r| r.scorecard.s_motion),
            total: m(|r| r.scorecard.total),
        });
    }

    let mut by_difficulty = BTreeMap::new();
    let mut by_domain = BTreeMap::new();
    if let Some(ds) = meta {
        let index: BTreeMap<&str, _> = ds.entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut diff: BTreeMap<Difficulty, Vec<f64>> = BTreeMap::new();
        let mut dom: BTreeMap<Domain, Vec<f64>> = BTreeMap::new();
        for a in &per_entry {
            if let Some(e) = index.get(a.entry_id.as_str()) {
                diff.entry(e.difficulty).or_default().push(a.total);
                for d in e.attributed_domains() {
                    dom.entry(d).or_default().push(a.total);
                }
            }
        }
        by_difficulty = diff.into_iter().map(|(k, v)| (k, mean(v))).collect();
        by_domain = dom.into_iter().map(|(k, v)| (k, mean(v))).collect();
    }

    let scored_runs = records.iter().filter(|r| r.outcome != RunOutcome::TransportFailure);
    let mut hist: BTreeMap<ErrorClass, (usize, usize)> = BTreeMap::new();
    for r in scored_runs {
        if let Some((class, fixed)) = r.first_failure() {
            let e = hist.entry(class).or_default();
            e.0 += 1;
            e.1 += fixed as usize;
        }
    }
    let classified: usize = hist.values().map(|v| v.0).sum();
    let error_histogram = hist
        .into_iter()
        .map(|(c, (failures, fixed))| {
            (
                c,
                ClassStats {
                    failures,
                    fixed,
                    frequency: failures as f64 / classified as f64,
                    success_rate: fixed as f64 / failures as f64,
                },
            )
        })
        .collect();

    Ok(AggregateReport {
        label: label_for(records),
        overall: mean(per_entry.iter().map(|a| a.total)),
        code_based: mean(per_entry.iter().map(EntryAggregate::code_based)),
        visual_based: mean(per_entry.iter().map(EntryAggregate::visual_based)),
        per_entry,
        by_difficulty,
        by_domain,
        error_histogram,
        records: records.len(),
        framework_failures: records
            .iter()
            .filter(|r| r.outcome == RunOutcome::FrameworkFailure)
            .count(),
        transport_failures: records
            .iter()
            .filter(|r| r.outcome == RunOutcome::TransportFailure)
            .count(),
        unscored_entries,
    })
}

fn label_for(records: &[RunRecord]) -> String {
    let first = &records[0];
    if records.iter().all(|r| r.mode == first.mode && r.profile == first.profile) {
        format!("{} ({})", first.mode.as_str(), first.profile)
    } else {
        "mixed".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(format!("unknown format {other:?} (json, csv, markdown)")),
        }
    }
}

pub fn render_report(report: &AggregateReport, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => serde_json::to_string_pretty(report)
            .map(|s| s + "\n")
            .map_err(|e| ReportError::Render(e.to_string())),
        Format::Csv => render_csv(report),
        Format::Markdown => Ok(render_markdown(report)),
    }
}

fn render_csv(report: &AggregateReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| ReportError::Render(e.to_string());
    w.write_record([
        "entry_id",
        "passes",
        "s_exec",
        "s_file",
        "s_clip",
        "s_motion",
        "code_based",
        "visual_based",
        "total",
    ])
    .map_err(err)?;
    for a in &report.per_entry {
        let f = |v: f64| format!("{v:.4}");
        w.write_record([
            a.entry_id.clone(),
            a.passes.to_string(),
            f(a.s_exec),
            f(a.s_file),
            f(a.s_clip),
            f(a.s_motion),
            f(a.code_based()),
            f(a.visual_based()),
            f(a.total),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Render(e.to_string()))
}

fn render_markdown(r: &AggregateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Setting | Code-based | Visual-based | Total |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    let _ = writeln!(
        s,
        "| {} | {:.1} | {:.1} | {:.1} |",
        r.label, r.code_based, r.visual_based, r.overall
    );
    let _ = writeln!(
        s,
        "\n{} records, {} entries scored, {} framework failures, {} transport failures.",
        r.records,
        r.per_entry.len(),
        r.framework_failures,
        r.transport_failures
    );
    if !r.by_difficulty.is_empty() {
        let _ = writeln!(s, "\n| Difficulty | Total |\n|---|---:|");
        for (d, v) in &r.by_difficulty {
            let _ = writeln!(s, "| {} | {v:.1} |", d.as_str());
        }
    }
    if !r.by_domain.is_empty() {
        let _ = writeln!(s, "\n| Domain | Total |\n|---|---:|");
        for (d, v) in &r.by_domain {
            let _ = writeln!(s, "| {} | {v:.1} |", d.as_str());
        }
    }
    if !r.error_histogram.is_empty() {
        let _ = writeln!(s, "\n| Error class | Frequency (%) | Success rate (%) |\n|---|---:|---:|");
        let mut rows: Vec<_> = r.error_histogram.iter().collect();
        rows.sort_by(|a, b| b.1.failures.cmp(&a.1.failures).then(a.0.cmp(b.0)));
        for (c, st) in rows {
            let _ = writeln!(
                s,
                "| {} | {:.0} | {:.0} |",
                c.as_str(),
                st.frequency * 100.0,
                st.success_rate * 100.0
            );
        }
    }
    s
}

/// Which scorecard value a correlation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Total,
    CodeBased,
    VisualBased,
    SExec,
    SFile,
    SClip,
    SMotion,
}

impl Metric {
    pub fn of(self, r: &RunRecord) -> f64 {
        let c = &r.scorecard;
        match self {
            Metric::Total => c.total,
            Metric::CodeBased => c.code_based(),
            Metric::VisualBased => c.visual_based(),
            Metric::SExec => c.s_exec,
            Metric::SFile => c.s_file,
            Metric::SClip => c.s_clip,
            Metric::SMotion => c.s_motion,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "total" => Metric::Total,
            "code_based" => Metric::CodeBased,
            "visual_based" => Metric::VisualBased,
            "s_exec" => Metric::SExec,
            "s_file" => Metric::SFile,
            "s_clip" => Metric::SClip,
            "s_motion" => Metric::SMotion,
            other => return Err(format!("unknown metric {other:?}")),
        })
    }
}

/// Join granularity for correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One point per prompt; ratings and scores averaged across systems.
    Prompt,
    /// One point per (system, prompt).
    PromptSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub entry_id: String,
    #[serde(default)]
    pub system: Option<String>,
    pub rating: f64,
}

/// Reads `entry_id,rating` or `entry_id,system,rating` CSV with a header.
pub fn read_ratings(path: &Path) -> Result<Vec<Rating>, ReportError> {
    let ierr = |m: String| ReportError::Input {
        path: path.display().to_string(),
        message: m,
    };
    let mut rd = csv::Reader::from_path(path).map_err(|e| ierr(e.to_string()))?;
    let mut out = Vec::new();
    for row in rd.deserialize::<Rating>() {
        let r = row.map_err(|e| ierr(e.to_string()))?;
        if !r.rating.is_finite() {
            return Err(ierr(format!("non-finite rating for {}", r.entry_id)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Scores labelled with the system that produced them.
pub struct SystemRecords<'a> {
    pub system: &'a str,
    pub records: &'a [RunRecord],
}

/// Paired (score, rating) vectors over keys present on both sides, in key
/// order. Scores average over passes; transport failures are skipped.
pub fn join_ratings(
    systems: &[SystemRecords<'_>],
    ratings: &[Rating],
    metric: Metric,
    granularity: Granularity,
) -> (Vec<f64>, Vec<f64>) {
    let key = |system: Option<&str>, entry: &str| match granularity {
        Granularity::Prompt => (String::new(), entry.to_string()),
        Granularity::PromptSystem => (system.unwrap_or("").to_string(), entry.to_string()),
    };
    let mut scores: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for s in systems {
        for r in s.records {
            if r.outcome != RunOutcome::TransportFailure {
                scores.entry(key(Some(s.system), &r.entry_id)).or_default().push(metric.of(r));
            }
        }
    }
    let mut rated: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in ratings {
        rated.entry(key(r.system.as_deref(), &r.entry_id)).or_default().push(r.rating);
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (k, s) in &scores {
        if let Some(h) = rated.get(k) {
            x.push(mean(s.iter().copied()));
            y.push(mean(h.iter().copied()));
        }
    }
    (x, y)
}

/// Rows of category counts separated by commas or whitespace. A first line
/// that is not numeric is taken as a header.
pub fn parse_vote_matrix(text: &str) -> Result<Vec<Vec<u64>>, ReportError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Result<Vec<u64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|c| !c.is_empty())
            .map(str::parse::<u64>)
            .collect();
        match cells {
            Ok(r) => rows.push(r),
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => {
                return Err(ReportError::Input {
                    path: format!("line {}", i + 1),
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}

/// `[votes for A, votes for B]` per entry carrying preference votes.
pub fn votes_from_dataset(ds: &Dataset) -> Vec<Vec<u64>> {
    ds.entries
        .iter()
        .filter_map(|e| e.preference.as_ref())
        .filter(|p| !p.annotator_votes.is_empty())
        .map(|p| {
            let a = p.annotator_votes.iter().filter(|v| v.choice == Choice::A).count() as u64;
            vec![a, p.annotator_votes.len() as u64 - a]
        })
        .collect()
}

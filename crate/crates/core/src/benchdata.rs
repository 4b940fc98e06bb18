//! Benchmark records: the line-delimited dataset format, load-time validation,
//! filtering and distribution statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Value of the required `schema` field on every record.
pub const SCHEMA_TAG: &str = "physcodebench/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid entry {id:?}: {message}")]
    Invalid {
        line: usize,
        id: String,
        message: String,
    },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first})")]
    DuplicateId { line: usize, id: String, first: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 2] = [Difficulty::Easy, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    RigidBody,
    SoftBody,
    Fluid,
    Mechanics,
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::RigidBody,
        Domain::SoftBody,
        Domain::Fluid,
        Domain::Mechanics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::RigidBody => "rigid_body",
            Domain::SoftBody => "soft_body",
            Domain::Fluid => "fluid",
            Domain::Mechanics => "mechanics",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicalLaw {
    Collisions,
    Gravity,
    Elasticity,
    Friction,
    FluidDynamics,
    Other,
}

impl PhysicalLaw {
    pub const ALL: [PhysicalLaw; 6] = [
        PhysicalLaw::Collisions,
        PhysicalLaw::Gravity,
        PhysicalLaw::Elasticity,
        PhysicalLaw::Friction,
        PhysicalLaw::FluidDynamics,
        PhysicalLaw::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhysicalLaw::Collisions => "collisions",
            PhysicalLaw::Gravity => "gravity",
            PhysicalLaw::Elasticity => "elasticity",
            PhysicalLaw::Friction => "friction",
            PhysicalLaw::FluidDynamics => "fluid_dynamics",
            PhysicalLaw::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorVote {
    pub annotator_id: String,
    pub choice: Choice,
}

/// Two implementations of the same prompt with the experts' verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub code_a: String,
    pub code_b: String,
    pub preferred: Choice,
    #[serde(default)]
    pub annotator_votes: Vec<AnnotatorVote>,
}

impl PreferencePair {
    /// Majority choice of the votes; `None` when there are no votes or a tie.
    pub fn majority(&self) -> Option<Choice> {
        let a = self
            .annotator_votes
            .iter()
            .filter(|v| v.choice == Choice::A)
            .count();
        let b = self.annotator_votes.len() - a;
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => Some(Choice::A),
            std::cmp::Ordering::Less => Some(Choice::B),
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub schema: String,
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_code: Option<String>,
    pub difficulty: Difficulty,
    pub domains: Vec<Domain>,
    #[serde(default)]
    pub physical_laws: Vec<PhysicalLaw>,
    #[serde(default)]
    pub object_types: Vec<String>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<PreferencePair>,
    /// Attributes the entry to a single domain in statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_domain: Option<Domain>,
}

impl BenchmarkEntry {
    /// A minimal valid entry; mostly useful for fixtures.
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, domain: Domain) -> Self {
        Self {
            schema: SCHEMA_TAG.to_string(),
            id: id.into(),
            prompt: prompt.into(),
            reference_code: None,
            difficulty: Difficulty::Easy,
            domains: vec![domain],
            physical_laws: Vec::new(),
            object_types: Vec::new(),
            split: Split::Test,
            preference: None,
            primary_domain: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema != SCHEMA_TAG {
            return Err(format!(
                "schema must be {SCHEMA_TAG:?}, got {:?}",
                self.schema
            ));
        }
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.prompt.trim().is_empty() {
            return Err("prompt is empty".into());
        }
        if self.domains.is_empty() {
            return Err("domains is empty".into());
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(*d) {
                return Err(format!("domain {d} listed twice"));
            }
        }
        if let Some(primary) = self.primary_domain {
            if !self.domains.contains(&primary) {
                return Err(format!("primary_domain {primary} not among domains"));
            }
        }
        if let Some(pref) = &self.preference {
            if !pref.annotator_votes.is_empty() {
                match pref.majority() {
                    None => return Err("preference votes are tied".into()),
                    Some(m) if m != pref.preferred => {
                        return Err("preferred disagrees with the annotator majority".into())
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Domains this entry is counted under in breakdowns.
    pub fn attributed_domains(&self) -> Vec<Domain> {
        match self.primary_domain {
            Some(d) => vec![d],
            None => self.domains.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub entries: Vec<BenchmarkEntry>,
    pub source_path: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&BenchmarkEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Builds a dataset from in-memory entries, applying the load-time checks.
    pub fn from_entries(
        entries: Vec<BenchmarkEntry>,
        source_path: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let mut first_seen = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            let line = i + 1;
            e.validate().map_err(|message| DatasetError::Invalid {
                line,
                id: e.id.clone(),
                message,
            })?;
            if let Some(first) = first_seen.insert(e.id.clone(), line) {
                return Err(DatasetError::DuplicateId {
                    line,
                    id: e.id.clone(),
                    first,
                });
            }
        }
        Ok(Self {
            entries,
            source_path: source_path.into(),
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(BufReader::new(file), path.display().to_string())
}

/// Parses line-delimited records. Blank lines are skipped but still counted
/// for line numbers.
pub fn parse_dataset<R: BufRead>(reader: R, source: String) -> Result<Dataset, DatasetError> {
    let mut entries = Vec::new();
    let mut lines_of = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|err| DatasetError::Io {
            path: PathBuf::from(&source),
            source: err,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: BenchmarkEntry =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        entries.push(entry);
        lines_of.push(line_no);
    }
    let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
    for (e, &line) in entries.iter().zip(&lines_of) {
        e.validate().map_err(|message| DatasetError::Invalid {
            line,
            id: e.id.clone(),
            message,
        })?;
        if let Some(&first) = first_seen.get(&e.id) {
            return Err(DatasetError::DuplicateId {
                line,
                id: e.id.clone(),
                first,
            });
        }
        first_seen.insert(e.id.clone(), line);
    }
    Ok(Dataset {
        entries,
        source_path: source,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterCriteria {
    pub difficulty: Option<Difficulty>,
    pub domain: Option<Domain>,
    pub split: Option<Split>,
}

impl FilterCriteria {
    pub fn matches(&self, e: &BenchmarkEntry) -> bool {
        self.difficulty.is_none_or(|d| e.difficulty == d)
            && self.domain.is_none_or(|d| e.domains.contains(&d))
            && self.split.is_none_or(|s| e.split == s)
    }
}

pub fn filter_entries(ds: &Dataset, criteria: &FilterCriteria) -> Dataset {
    Dataset {
        entries: ds
            .entries
            .iter()
            .filter(|e| criteria.matches(e))
            .cloned()
            .collect(),
        source_path: ds.source_path.clone(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyCounts {
    pub easy: usize,
    pub hard: usize,
}

impl DifficultyCounts {
    pub fn total(&self) -> usize {
        self.easy + self.hard
    }

    fn bump(&mut self, d: Difficulty) {
        match d {
            Difficulty::Easy => self.easy += 1,
            Difficulty::Hard => self.hard += 1,
        }
    }
}

/// Distribution counts. Entries count once per attributed domain
/// (see [`BenchmarkEntry::attributed_domains`]).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub entries: usize,
    pub by_difficulty: DifficultyCounts,
    pub by_domain: BTreeMap<Domain, DifficultyCounts>,
    pub laws_by_domain: BTreeMap<PhysicalLaw, BTreeMap<Domain, usize>>,
    pub multi_domain: DifficultyCounts,
    pub train: usize,
    pub test: usize,
}

impl StatsReport {
    pub fn domain_total(&self, d: Domain) -> usize {
        self.by_domain.get(&d).map_or(0, DifficultyCounts::total)
    }

    pub fn law_count(&self, law: PhysicalLaw, d: Domain) -> usize {
        self.laws_by_domain
            .get(&law)
            .and_then(|m| m.get(&d))
            .copied()
            .unwrap_or(0)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Domain | Easy | Hard | Total |\n|---|---:|---:|---:|\n");
        let mut easy = 0;
        let mut hard = 0;
        for d in Domain::ALL {
            let c = self.by_domain.get(&d).copied().unwrap_or_default();
            easy += c.easy;
            hard += c.hard;
            s.push_str(&format!("| {d} | {} | {} | {} |\n", c.easy, c.hard, c.total()));
        }
        s.push_str(&format!(
            "| total (attributed) | {easy} | {hard} | {} |\n",
            easy + hard
        ));
        s.push_str(&format!(
            "| multi-domain | {} | {} | {} |\n\n",
            self.multi_domain.easy,
            self.multi_domain.hard,
            self.multi_domain.total()
        ));
        s.push_str("| Physical law |");
        for d in Domain::ALL {
            s.push_str(&format!(" {d} |"));
        }
        s.push_str("\n|---|---:|---:|---:|---:|\n");
        for law in PhysicalLaw::ALL {
            s.push_str(&format!("| {} |", law.as_str()));
            for d in Domain::ALL {
                s.push_str(&format!(" {} |", self.law_count(law, d)));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "\nentries: {}  train: {}  test: {}\n",
            self.entries, self.train, self.test
        ));
        s
    }
}

pub fn dataset_stats(ds: &Dataset) -> StatsReport {
    let mut r = StatsReport {
        entries: ds.len(),
        ..Default::default()
    };
    for d in Domain::ALL {
        r.by_domain.insert(d, DifficultyCounts::default());
    }
    for law in PhysicalLaw::ALL {
        r.laws_by_domain
            .insert(law, Domain::ALL.iter().map(|&d| (d, 0)).collect());
    }
    for e in &ds.entries {
        r.by_difficulty.bump(e.difficulty);
        if e.domains.len() > 1 {
            r.multi_domain.bump(e.difficulty);
        }
        match e.split {
            Split::Train => r.train += 1,
            Split::Test => r.test += 1,
        }
        for d in e.attributed_domains() {
            r.by_domain.entry(d).or_default().bump(e.difficulty);
            let mut laws = e.physical_laws.clone();
            laws.sort();
            laws.dedup();
            for law in laws {
                *r.laws_by_domain
                    .entry(law)
                    .or_default()
                    .entry(d)
                    .or_default() += 1;
            }
        }
    }
    r
}

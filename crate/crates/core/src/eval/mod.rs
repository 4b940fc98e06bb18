//! The four-component scorecard: execution, output files, text–frame
//! similarity and motion smoothness, 25 points each.

mod embed;
mod files;
mod judge;
mod visual;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchdata::BenchmarkEntry;
use crate::mediacheck::{extract_frames, MediaTools};
use crate::sandbox::ExecutionReport;

pub use embed::{
    EmbedError, EmbeddingProvider, FixedEmbedder, HashEmbedder, HttpEmbedder, HttpEmbedderConfig,
};
pub use files::{score_files, Criterion, FileScore, RubricItem};
pub use judge::{judge_vlm, Aspect, JudgeError, JudgeInput, JudgeReport, JUDGE_RUNS};
pub use visual::{cosine, motion_energy, score_clip, score_motion, DEFAULT_MOTION_REF};

/// Points per component.
pub const COMPONENT_MAX: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub fps_tolerance: f64,
    pub duration_secs: f64,
    pub duration_tolerance: f64,
    pub min_size_bytes: u64,
    pub extra_required_files: Vec<String>,
    /// Headless rendering requested in the generation prompt.
    pub background: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            filename: "genesis_video.mp4".into(),
            width: 1280,
            height: 640,
            fps: 60.0,
            fps_tolerance: 0.5,
            duration_secs: 5.0,
            duration_tolerance: 0.25,
            min_size_bytes: 100_000,
            extra_required_files: Vec::new(),
            background: true,
        }
    }
}

impl OutputSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.filename.trim().is_empty() {
            return Err("filename is empty".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err("resolution must be positive".into());
        }
        if !(self.fps > 0.0 && self.duration_secs > 0.0) {
            return Err("fps and duration must be positive".into());
        }
        if !(self.fps_tolerance > 0.0 && self.duration_tolerance > 0.0) {
            return Err("tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("{component} = {value} outside [0, 25]")]
    OutOfRange { component: &'static str, value: f64 },
    #[error("execution score must be 0 or 25, got {0}")]
    ExecNotBinary(f64),
    #[error("visual or file points awarded without a successful execution")]
    ArtifactsWithoutExecution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub s_exec: f64,
    pub s_file: f64,
    pub s_clip: f64,
    pub s_motion: f64,
    pub total: f64,
    #[serde(default)]
    pub rubric_breakdown: Vec<RubricItem>,
    /// Why a component degraded to zero, if it did.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ScoreCard {
    pub fn zero() -> Self {
        Self {
            s_exec: 0.0,
            s_file: 0.0,
            s_clip: 0.0,
            s_motion: 0.0,
            total: 0.0,
            rubric_breakdown: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Checked constructor: every component in range, execution binary and
    /// no downstream points without execution.
    pub fn new(s_exec: f64, s_file: f64, s_clip: f64, s_motion: f64) -> Result<Self, ScoreError> {
        for (component, value) in [
            ("s_exec", s_exec),
            ("s_file", s_file),
            ("s_clip", s_clip),
            ("s_motion", s_motion),
        ] {
            if !(0.0..=COMPONENT_MAX).contains(&value) {
                return Err(ScoreError::OutOfRange { component, value });
            }
        }
        if s_exec != 0.0 && s_exec != COMPONENT_MAX {
            return Err(ScoreError::ExecNotBinary(s_exec));
        }
        if s_exec == 0.0 && (s_file > 0.0 || s_clip > 0.0 || s_motion > 0.0) {
            return Err(ScoreError::ArtifactsWithoutExecution);
        }
        Ok(Self {
            s_exec,
            s_file,
            s_clip,
            s_motion,
            total: s_exec + s_file + s_clip + s_motion,
            rubric_breakdown: Vec::new(),
            notes: Vec::new(),
        })
    }

    /// Lenient composition used by the scorer: clamps each component and
    /// zeroes everything downstream of a failed execution.
    pub fn compose(executed: bool, s_file: f64, s_clip: f64, s_motion: f64) -> Self {
        if !executed {
            return Self::zero();
        }
        let clamp = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, COMPONENT_MAX) };
        Self::new(COMPONENT_MAX, clamp(s_file), clamp(s_clip), clamp(s_motion))
            .expect("clamped components are valid")
    }

    pub fn code_based(&self) -> f64 {
        self.s_exec + self.s_file
    }

    pub fn visual_based(&self) -> f64 {
        self.s_clip + self.s_motion
    }
}

pub fn score_execution(report: &ExecutionReport) -> f64 {
    if report.succeeded() {
        COMPONENT_MAX
    } else {
        0.0
    }
}

/// What the scorer needs besides the run itself.
#[derive(Clone)]
pub struct Evaluator {
    pub tools: MediaTools,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub frame_count: usize,
    pub motion_ref: f64,
}

impl Evaluator {
    pub fn new(tools: MediaTools, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            tools,
            embedder,
            frame_count: 10,
            motion_ref: DEFAULT_MOTION_REF,
        }
    }
}

/// Full scorecard for one executed program. Component failures degrade to
/// zero with a note instead of erroring.
pub fn evaluate(
    entry: &BenchmarkEntry,
    report: &ExecutionReport,
    workdir: &Path,
    spec: &OutputSpec,
    ev: &Evaluator,
) -> ScoreCard {
    if score_execution(report) == 0.0 {
        let mut card = ScoreCard::zero();
        card.notes.push(format!("execution {:?}", report.outcome));
        return card;
    }
    let files = score_files(workdir, spec, &ev.tools);
    let mut notes = files.notes.clone();
    let (mut clip, mut motion) = (0.0, 0.0);
    if files.video_usable() {
        let video = workdir.join(&spec.filename);
        match extract_frames(&ev.tools, &video, ev.frame_count) {
            Ok(frames) => {
                match score_clip(&frames, &entry.prompt, ev.embedder.as_ref()) {
                    Ok(v) => clip = v,
                    Err(e) => notes.push(format!("clip: {e}")),
                }
                match score_motion(&frames, ev.motion_ref) {
                    Ok(v) => motion = v,
                    Err(e) => notes.push(format!("motion: {e}")),
                }
            }
            Err(e) => notes.push(format!("frames: {e}")),
        }
    } else {
        notes.push("video unusable; visual components zero".into());
    }
    let mut card = ScoreCard::compose(true, files.points, clip, motion);
    card.rubric_breakdown = files.breakdown;
    card.notes = notes;
    card
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::Outcome;
    use std::path::PathBuf;

    fn report(outcome: Outcome) -> ExecutionReport {
        ExecutionReport {
            outcome,
            exit_code: (outcome == Outcome::Success).then_some(0),
            stdout_tail: String::new(),
            stderr_tail: String::new(),
            wall_time_secs: 0.0,
            workdir: PathBuf::new(),
            error_class: None,
        }
    }

    #[test]
    fn execution_points() {
        assert_eq!(score_execution(&report(Outcome::Success)), 25.0);
        assert_eq!(score_execution(&report(Outcome::NonzeroExit)), 0.0);
        assert_eq!(score_execution(&report(Outcome::Timeout)), 0.0);
        assert_eq!(score_execution(&report(Outcome::SpawnFailure)), 0.0);
    }

    #[test]
    fn checked_constructor() {
        assert_eq!(ScoreCard::new(25.0, 25.0, 12.5, 25.0).unwrap().total, 87.5);
        assert!(matches!(ScoreCard::new(25.0, 26.0, 0.0, 0.0), Err(ScoreError::OutOfRange { .. })));
        assert_eq!(ScoreCard::new(10.0, 0.0, 0.0, 0.0), Err(ScoreError::ExecNotBinary(10.0)));
        assert_eq!(
            ScoreCard::new(0.0, 5.0, 0.0, 0.0),
            Err(ScoreError::ArtifactsWithoutExecution)
        );
    }

    #[test]
    fn compose_zeroes_without_execution() {
        let c = ScoreCard::compose(false, 25.0, 25.0, 25.0);
        assert_eq!(c.total, 0.0);
        let c = ScoreCard::compose(true, 40.0, -3.0, f64::NAN);
        assert_eq!((c.s_file, c.s_clip, c.s_motion, c.total), (25.0, 0.0, 0.0, 50.0));
    }

    #[test]
    fn failed_execution_scores_zero() {
        let entry = BenchmarkEntry::new("e", "a ball", crate::benchdata::Domain::RigidBody);
        let ev = Evaluator::new(MediaTools::default(), Arc::new(HashEmbedder::new(8)));
        let card = evaluate(
            &entry,
            &report(Outcome::NonzeroExit),
            Path::new("/nonexistent"),
            &OutputSpec::default(),
            &ev,
        );
        assert_eq!(card.total, 0.0);
        assert_eq!((card.s_exec, card.s_file, card.s_clip, card.s_motion), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn output_spec_defaults() {
        let s = OutputSpec::default();
        assert_eq!((s.width, s.height, s.fps, s.duration_secs), (1280, 640, 60.0, 5.0));
        assert_eq!(s.min_size_bytes, 100_000);
        assert_eq!(s.filename, "genesis_video.mp4");
        s.validate().unwrap();
        let bad = OutputSpec {
            fps_tolerance: 0.0,
            ..OutputSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}

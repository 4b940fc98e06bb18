use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OutputSpec;
use crate::mediacheck::{probe_video, MediaTools, VideoMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Exists,
    MinSize,
    Resolution,
    FrameRate,
    Duration,
    ExtraFiles,
}

impl Criterion {
    /// Rubric weights; they sum to 25. Extra files carry no points of their
    /// own but cap the score when any is missing.
    pub fn weight(self) -> f64 {
        match self {
            Criterion::Exists => 10.0,
            Criterion::MinSize => 5.0,
            Criterion::Resolution => 4.0,
            Criterion::FrameRate => 3.0,
            Criterion::Duration => 3.0,
            Criterion::ExtraFiles => 0.0,
        }
    }
}

/// Cap applied when a required extra file is missing.
pub const MISSING_EXTRA_CAP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricItem {
    pub criterion: Criterion,
    pub passed: bool,
    pub points: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub points: f64,
    pub breakdown: Vec<RubricItem>,
    pub metadata: Option<VideoMetadata>,
    pub notes: Vec<String>,
}

impl FileScore {
    /// The video exists and could be probed.
    pub fn video_usable(&self) -> bool {
        self.metadata.is_some()
    }
}

fn item(criterion: Criterion, passed: bool, detail: String) -> RubricItem {
    RubricItem {
        criterion,
        passed,
        points: if passed { criterion.weight() } else { 0.0 },
        detail,
    }
}

pub fn score_files(workdir: &Path, spec: &OutputSpec, tools: &MediaTools) -> FileScore {
    let video = workdir.join(&spec.filename);
    let mut breakdown = Vec::new();
    let mut notes = Vec::new();
    let size = std::fs::metadata(&video).ok().filter(|m| m.is_file()).map(|m| m.len());
    let Some(size) = size else {
        breakdown.push(item(Criterion::Exists, false, format!("{} missing", spec.filename)));
        return FileScore {
            points: 0.0,
            breakdown,
            metadata: None,
            notes,
        };
    };
    breakdown.push(item(Criterion::Exists, true, spec.filename.clone()));
    breakdown.push(item(
        Criterion::MinSize,
        size >= spec.min_size_bytes,
        format!("{size} bytes (min {})", spec.min_size_bytes),
    ));

    let metadata = match probe_video(tools, &video) {
        Ok(md) => Some(md),
        Err(e) => {
            notes.push(format!("probe: {e}"));
            None
        }
    };
    match &metadata {
        Some(md) => {
            breakdown.push(item(
                Criterion::Resolution,
                md.width == spec.width && md.height == spec.height,
                format!("{}x{} (want {}x{})", md.width, md.height, spec.width, spec.height),
            ));
            breakdown.push(item(
                Criterion::FrameRate,
                (md.fps - spec.fps).abs() <= spec.fps_tolerance,
                format!("{:.3} fps (want {} ± {})", md.fps, spec.fps, spec.fps_tolerance),
            ));
            breakdown.push(item(
                Criterion::Duration,
                (md.duration - spec.duration_secs).abs() <= spec.duration_tolerance,
                format!(
                    "{:.3} s (want {} ± {})",
                    md.duration, spec.duration_secs, spec.duration_tolerance
                ),
            ));
        }
        None => {
            for c in [Criterion::Resolution, Criterion::FrameRate, Criterion::Duration] {
                breakdown.push(item(c, false, "not probeable".into()));
            }
        }
    }

    let mut points: f64 = breakdown.iter().map(|i| i.points).sum();
    if !spec.extra_required_files.is_empty() {
        let missing: Vec<&String> = spec
            .extra_required_files
            .iter()
            .filter(|f| !workdir.join(f).is_file())
            .collect();
        let ok = missing.is_empty();
        breakdown.push(item(
            Criterion::ExtraFiles,
            ok,
            if ok {
                "all present".into()
            } else {
                format!("missing: {missing:?}")
            },
        ));
        if !ok {
            points = points.min(MISSING_EXTRA_CAP);
        }
    }
    FileScore {
        points,
        breakdown,
        metadata,
        notes,
    }
}

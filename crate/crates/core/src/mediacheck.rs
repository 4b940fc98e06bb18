//! Video metadata probing and frame sampling through external tools.
//!
//! The prober prints one JSON document with a `streams` array (ffprobe's
//! `-print_format json -show_streams` shape); the decoder writes the
//! requested frames to stdout as packed RGB24. Both are argv templates with
//! `{input}`, `{indices}` (comma-separated) and `{select}` (an ffmpeg
//! `select` expression for the same indices).

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("video file {0} does not exist")]
    FileMissing(PathBuf),
    #[error("{0}: no video stream")]
    NoVideoStream(PathBuf),
    #[error("cannot run {tool}: {message}")]
    Tool { tool: String, message: String },
    #[error("{path}: prober failed ({status}): {stderr}")]
    ProbeFailed {
        path: PathBuf,
        status: String,
        stderr: String,
    },
    #[error("{path}: unparseable prober output: {message}")]
    Unparseable { path: PathBuf, message: String },
    #[error("{path}: decode failed: {message}")]
    DecodeFailed { path: PathBuf, message: String },
    #[error("frame index {index} out of range for {frames} frames")]
    IndexOutOfRange { index: usize, frames: usize },
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediaTools {
    pub probe_command: Vec<String>,
    pub decode_command: Vec<String>,
}

impl Default for MediaTools {
    fn default() -> Self {
        Self {
            probe_command: [
                "ffprobe",
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-show_streams",
                "-show_format",
                "-print_format",
                "json",
                "{input}",
            ]
            .map(String::from)
            .to_vec(),
            decode_command: [
                "ffmpeg",
                "-v",
                "error",
                "-i",
                "{input}",
                "-vf",
                "select={select}",
                "-vsync",
                "0",
                "-f",
                "rawvideo",
                "-pix_fmt",
                "rgb24",
                "-",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetadata {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub duration: f64,
    pub frame_count: u64,
    pub file_size: u64,
}

/// One packed RGB24 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, MediaError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(MediaError::Invalid(format!(
                "{}x{} frame needs {} bytes, got {}",
                width,
                height,
                width as usize * height as usize * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
    pub source_indices: Vec<usize>,
}

impl FrameSet {
    pub fn new(frames: Vec<Frame>, source_indices: Vec<usize>) -> Result<Self, MediaError> {
        if frames.len() != source_indices.len() {
            return Err(MediaError::Invalid("frames and indices differ in length".into()));
        }
        if source_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MediaError::Invalid("indices must be strictly increasing".into()));
        }
        if let Some(first) = frames.first() {
            if frames
                .iter()
                .any(|f| f.width != first.width || f.height != first.height)
            {
                return Err(MediaError::Invalid("frames differ in size".into()));
            }
        }
        Ok(Self {
            frames,
            source_indices,
        })
    }

    /// Consecutive indices starting at 0; handy for synthetic frames.
    pub fn from_frames(frames: Vec<Frame>) -> Result<Self, MediaError> {
        let idx = (0..frames.len()).collect();
        Self::new(frames, idx)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Evenly spaced indices including both endpoints: `round(k·(n−1)/(count−1))`,
/// rounding half away from zero. With fewer than `count` frames, all frames.
pub fn sample_indices(n: usize, count: usize) -> Vec<usize> {
    if n == 0 || count == 0 {
        return Vec::new();
    }
    if n <= count {
        return (0..n).collect();
    }
    if count == 1 {
        return vec![0];
    }
    let span = (n - 1) as f64;
    let steps = (count - 1) as f64;
    (0..count)
        .map(|k| (k as f64 * span / steps).round() as usize)
        .collect()
}

fn expand(template: &[String], input: &Path, indices: &[usize]) -> Vec<String> {
    let input = input.display().to_string();
    let list = indices
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let select = indices
        .iter()
        .map(|i| format!("eq(n\\,{i})"))
        .collect::<Vec<_>>()
        .join("+");
    template
        .iter()
        .map(|a| {
            a.replace("{input}", &input)
                .replace("{indices}", &list)
                .replace("{select}", &select)
        })
        .collect()
}

fn field_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => {
            if let Some((num, den)) = s.split_once('/') {
                let (num, den): (f64, f64) = (num.trim().parse().ok()?, den.trim().parse().ok()?);
                (den != 0.0).then(|| num / den)
            } else {
                s.trim().parse().ok()
            }
        }
        _ => None,
    }
}

/// Parses prober output into metadata (without file size).
pub fn parse_probe_output(path: &Path, stdout: &str) -> Result<VideoMetadata, MediaError> {
    let unparseable = |message: String| MediaError::Unparseable {
        path: path.to_path_buf(),
        message,
    };
    let doc: Value = serde_json::from_str(stdout).map_err(|e| unparseable(e.to_string()))?;
    let streams = doc
        .get("streams")
        .and_then(Value::as_array)
        .ok_or_else(|| unparseable("no streams array".into()))?;
    let video = streams
        .iter()
        .find(|s| s.get("codec_type").and_then(Value::as_str) == Some("video"))
        .ok_or_else(|| MediaError::NoVideoStream(path.to_path_buf()))?;
    let get = |k: &str| video.get(k).and_then(field_f64);
    let width = get("width").ok_or_else(|| unparseable("width missing".into()))?;
    let height = get("height").ok_or_else(|| unparseable("height missing".into()))?;
    let fps = get("avg_frame_rate")
        .filter(|f| *f > 0.0)
        .or_else(|| get("r_frame_rate").filter(|f| *f > 0.0))
        .ok_or_else(|| unparseable("avg_frame_rate missing".into()))?;
    let duration = get("duration")
        .or_else(|| doc.get("format").and_then(|f| f.get("duration")).and_then(field_f64))
        .ok_or_else(|| unparseable("duration missing".into()))?;
    let frame_count = get("nb_frames")
        .or_else(|| get("nb_read_frames"))
        .unwrap_or_else(|| (duration * fps).round());
    if width < 1.0 || height < 1.0 || frame_count < 1.0 {
        return Err(MediaError::NoVideoStream(path.to_path_buf()));
    }
    Ok(VideoMetadata {
        width: width as u32,
        height: height as u32,
        fps,
        duration,
        frame_count: frame_count as u64,
        file_size: 0,
    })
}

fn run_tool(argv: &[String]) -> Result<(std::process::ExitStatus, Vec<u8>, String), MediaError> {
    let tool = argv.first().cloned().unwrap_or_default();
    let mut child = Command::new(&tool)
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| MediaError::Tool {
            tool: tool.clone(),
            message: e.to_string(),
        })?;
    let mut err_pipe = child.stderr.take().expect("piped");
    let err_thread = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = err_pipe.read_to_string(&mut s);
        s
    });
    let mut out = Vec::new();
    child
        .stdout
        .take()
        .expect("piped")
        .read_to_end(&mut out)
        .map_err(|e| MediaError::Tool {
            tool: tool.clone(),
            message: e.to_string(),
        })?;
    let status = child.wait().map_err(|e| MediaError::Tool {
        tool,
        message: e.to_string(),
    })?;
    Ok((status, out, err_thread.join().unwrap_or_default()))
}

/// Reads metadata; never modifies the file.
pub fn probe_video(tools: &MediaTools, path: &Path) -> Result<VideoMetadata, MediaError> {
    let meta = std::fs::metadata(path).map_err(|_| MediaError::FileMissing(path.to_path_buf()))?;
    if meta.len() == 0 {
        return Err(MediaError::NoVideoStream(path.to_path_buf()));
    }
    let (status, stdout, stderr) = run_tool(&expand(&tools.probe_command, path, &[]))?;
    if !status.success() {
        return Err(MediaError::ProbeFailed {
            path: path.to_path_buf(),
            status: status.to_string(),
            stderr: stderr.trim().to_string(),
        });
    }
    let mut md = parse_probe_output(path, &String::from_utf8_lossy(&stdout))?;
    md.file_size = meta.len();
    Ok(md)
}

/// Probes, samples `count` evenly spaced indices and decodes them.
pub fn extract_frames(tools: &MediaTools, path: &Path, count: usize) -> Result<FrameSet, MediaError> {
    if count == 0 {
        return Err(MediaError::Invalid("frame count must be at least 1".into()));
    }
    let md = probe_video(tools, path)?;
    let n = md.frame_count as usize;
    let indices = sample_indices(n, count);
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(MediaError::IndexOutOfRange { index: bad, frames: n });
    }
    decode_frames(tools, path, &md, &indices)
}

pub fn decode_frames(
    tools: &MediaTools,
    path: &Path,
    md: &VideoMetadata,
    indices: &[usize],
) -> Result<FrameSet, MediaError> {
    let (status, raw, stderr) = run_tool(&expand(&tools.decode_command, path, indices))?;
    let failed = |message: String| MediaError::DecodeFailed {
        path: path.to_path_buf(),
        message,
    };
    if !status.success() {
        return Err(failed(format!("{status}: {}", stderr.trim())));
    }
    let frame_bytes = md.width as usize * md.height as usize * 3;
    if raw.len() != frame_bytes * indices.len() {
        return Err(failed(format!(
            "expected {} bytes for {} frames, got {}",
            frame_bytes * indices.len(),
            indices.len(),
            raw.len()
        )));
    }
    let frames = raw
        .chunks_exact(frame_bytes)
        .map(|c| Frame {
            width: md.width,
            height: md.height,
            data: c.to_vec(),
        })
        .collect();
    FrameSet::new(frames, indices.to_vec())
}

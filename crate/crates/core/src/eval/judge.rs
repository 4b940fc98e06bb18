//! Vision-language judge: five physics aspects rated 1–5, averaged over
//! several deterministic runs.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{complete, ChatBackend, ChatMessage, ChatRequest, GatewayError, RequestMeta};
use crate::mediacheck::{Frame, FrameSet};

pub const JUDGE_RUNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Gravity,
    CollisionDynamics,
    FluidBehavior,
    ObjectMotion,
    TemporalConsistency,
}

impl Aspect {
    pub const ALL: [Aspect; 5] = [
        Aspect::Gravity,
        Aspect::CollisionDynamics,
        Aspect::FluidBehavior,
        Aspect::ObjectMotion,
        Aspect::TemporalConsistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Gravity => "gravity",
            Aspect::CollisionDynamics => "collision_dynamics",
            Aspect::FluidBehavior => "fluid_behavior",
            Aspect::ObjectMotion => "object_motion",
            Aspect::TemporalConsistency => "temporal_consistency",
        }
    }

    fn question(self) -> &'static str {
        match self {
            Aspect::Gravity => "Do objects fall and rest as gravity requires?",
            Aspect::CollisionDynamics => "Are contacts, bounces and momentum transfer plausible?",
            Aspect::FluidBehavior => "Do liquids and gases flow, splash and settle plausibly (rate 3 if none appear)?",
            Aspect::ObjectMotion => "Do trajectories, rotation and deformation look physically consistent?",
            Aspect::TemporalConsistency => "Is the sequence free of popping, teleporting or vanishing objects?",
        }
    }
}

#[derive(Debug, Clone)]
pub enum JudgeInput {
    Frames(FrameSet),
    /// Text-only stand-in for a video, e.g. a recorded description.
    Description(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    /// Per-aspect ratings of each run, in `Aspect::ALL` order.
    pub runs: Vec<[u8; 5]>,
    pub aspect_means: Vec<(Aspect, f64)>,
    pub overall: f64,
}

impl JudgeReport {
    pub fn from_runs(runs: Vec<[u8; 5]>) -> Option<Self> {
        if runs.is_empty() {
            return None;
        }
        let aspect_means: Vec<(Aspect, f64)> = Aspect::ALL
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, runs.iter().map(|r| r[i] as f64).sum::<f64>() / runs.len() as f64))
            .collect();
        let overall = aspect_means.iter().map(|(_, m)| m).sum::<f64>() / aspect_means.len() as f64;
        Some(Self {
            runs,
            aspect_means,
            overall,
        })
    }

    pub fn aspect(&self, a: Aspect) -> f64 {
        self.aspect_means
            .iter()
            .find(|(x, _)| *x == a)
            .map(|(_, m)| *m)
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge reply unparseable after re-ask: {0}")]
    Unparseable(String),
    #[error("{aspect} rated {value}, outside 1..=5")]
    OutOfRange { aspect: &'static str, value: f64 },
    #[error("could not encode frame: {0}")]
    Encode(String),
}

fn prompt_text(scenario: &str, input: &JudgeInput) -> String {
    let mut s = String::from(
        "You are judging whether a simulated video is physically plausible.\n\n",
    );
    s.push_str(&format!("Scenario: {scenario}\n\n"));
    match input {
        JudgeInput::Frames(f) => s.push_str(&format!("{} frames are attached in temporal order.\n\n", f.len())),
        JudgeInput::Description(d) => s.push_str(&format!("Video description:\n{d}\n\n")),
    }
    s.push_str("Rate each aspect from 1 (implausible) to 5 (fully plausible):\n");
    for a in Aspect::ALL {
        s.push_str(&format!("- {}: {}\n", a.as_str(), a.question()));
    }
    s.push_str(
        "\nReply with a single JSON object mapping each aspect name to an integer, \
         and nothing else.",
    );
    s
}

pub(crate) fn png_data_url(frame: &Frame) -> Result<String, JudgeError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| JudgeError::Encode(e.to_string()))?;
        w.write_image_data(&frame.data)
            .map_err(|e| JudgeError::Encode(e.to_string()))?;
    }
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf)
    ))
}

enum Parsed {
    Ok([u8; 5]),
    Unparseable,
    OutOfRange(&'static str, f64),
}

/// Finds the first `{...}` span in the reply and reads all five aspects.
fn parse_ratings(reply: &str) -> Parsed {
    let (Some(start), Some(end)) = (reply.find('{'), reply.rfind('}')) else {
        return Parsed::Unparseable;
    };
    if end < start {
        return Parsed::Unparseable;
    }
    let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&reply[start..=end]) else {
        return Parsed::Unparseable;
    };
    let mut out = [0u8; 5];
    for (i, a) in Aspect::ALL.iter().enumerate() {
        let Some(v) = map.get(a.as_str()).and_then(|v| v.as_f64()) else {
            return Parsed::Unparseable;
        };
        if !(1.0..=5.0).contains(&v) || v.fract() != 0.0 {
            return Parsed::OutOfRange(a.as_str(), v);
        }
        out[i] = v as u8;
    }
    Parsed::Ok(out)
}

/// Runs the judge `JUDGE_RUNS` times at temperature 0. An unparseable reply
/// is re-asked once per run; a rating outside 1–5 is an error.
pub fn judge_vlm(
    backend: &dyn ChatBackend,
    scenario: &str,
    input: &JudgeInput,
    entry_id: Option<&str>,
) -> Result<JudgeReport, JudgeError> {
    let mut first = ChatMessage::user(prompt_text(scenario, input));
    if let JudgeInput::Frames(frames) = input {
        first.images = frames.frames.iter().map(png_data_url).collect::<Result<_, _>>()?;
    }
    let mut runs = Vec::with_capacity(JUDGE_RUNS);
    for run in 0..JUDGE_RUNS {
        let mut messages = vec![first.clone()];
        let mut reasked = false;
        loop {
            let req = ChatRequest {
                model: backend.model().to_string(),
                messages: messages.clone(),
                temperature: 0.0,
                max_tokens: 512,
                meta: RequestMeta {
                    agent: Some(if reasked { "judge_retry" } else { "judge" }.into()),
                    entry_id: entry_id.map(str::to_string),
                    turn: run as u32,
                },
            };
            let reply = complete(backend, &req)?.content;
            match parse_ratings(&reply) {
                Parsed::Ok(r) => {
                    runs.push(r);
                    break;
                }
                Parsed::OutOfRange(aspect, value) => return Err(JudgeError::OutOfRange { aspect, value }),
                Parsed::Unparseable if reasked => return Err(JudgeError::Unparseable(reply)),
                Parsed::Unparseable => {
                    messages.push(ChatMessage::assistant(reply));
                    messages.push(ChatMessage::user(
                        "That reply could not be read. Answer with only the JSON object of five integer ratings.",
                    ));
                    reasked = true;
                }
            }
        }
    }
    Ok(JudgeReport::from_runs(runs).expect("at least one run"))
}

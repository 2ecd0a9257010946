//! Pipeline planning and execution around external anonymization backends.
//!
//! A pipeline has three stages. The engine builds the face mask itself from the
//! convex hull of the reference face's landmarks. An inpainting backend then
//! turns the reference frame and the mask into a new identity image. Last, a
//! face-swap backend puts that identity into every frame of the video. Both
//! backends are external programs given as argv templates. They communicate
//! with the engine only through file paths.
//!
//! Template placeholders:
//!
//! | placeholder     | inpaint  | faceswap | value                                     |
//! |-----------------|----------|----------|-------------------------------------------|
//! | `{input}`       | required | required | input video                               |
//! | `{mask}`        | required | optional | mask PGM                                  |
//! | `{identity}`    | n/a      | required | identity image written by inpainting      |
//! | `{output}`      | required | required | this stage's output file                  |
//! | `{frame}`       | optional | optional | reference frame index                     |
//! | `{prompt}`      | optional | optional | inpainting prompt                         |
//! | `{obscure}`     | optional | optional | JSON file listing frames without a face   |
//! | `{param.NAME}`  | optional | optional | pass-through value from `[params]`        |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_model::{FaceRecord, VideoFaceStream};
use crate::geometry::{convex_hull, rasterize_mask_dilated, write_mask_pgm, GeometryError, Point, Polygon};

pub const DEFAULT_PROMPT: &str = "a face of a baby";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("video {0:?} has no frame with a detected face; it cannot be anonymized")]
    Unanonymizable(String),
    #[error("{stage} command template lacks required placeholder {placeholder}")]
    MissingPlaceholder { stage: StageName, placeholder: &'static str },
    #[error("{stage} command template uses unknown placeholder {placeholder}")]
    UnknownPlaceholder { stage: StageName, placeholder: String },
    #[error("{stage} command template is empty")]
    EmptyCommand { stage: StageName },
    #[error("sample_count {sample_count} must be in [1, frame_count = {frame_count}]")]
    BadSampleCount { sample_count: u32, frame_count: u32 },
    #[error("cannot read pipeline config: {0}")]
    Config(String),
    #[error("mask generation failed: {0}")]
    Mask(#[from] GeometryError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObscurePolicy {
    /// The face-swap backend blacks out frames with no face.
    BlackFrame,
    /// Frames with no face are dropped from the output.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// argv template of the inpainting backend.
    pub inpaint_cmd: Vec<String>,
    /// argv template of the face-swap backend.
    pub faceswap_cmd: Vec<String>,
    #[serde(default = "default_prompt")]
    pub prompt: String,
    #[serde(default = "default_conf_thr")]
    pub conf_thr: f64,
    /// Frames sampled uniformly for evaluation.
    #[serde(default = "default_sample_count")]
    pub sample_count: u32,
    #[serde(default = "default_policy")]
    pub obscure_policy: ObscurePolicy,
    /// Mask dilation radius in pixels.
    #[serde(default)]
    pub mask_dilation: f64,
    /// Input video handed to the backends.
    pub video: PathBuf,
    /// Directory for the mask, identity image, output video and records.
    pub work_dir: PathBuf,
    /// Anonymized video path; defaults to `work_dir/anonymized.mp4`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Opaque backend parameters, e.g. inpainting strength.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

fn default_prompt() -> String {
    DEFAULT_PROMPT.to_owned()
}
fn default_conf_thr() -> f64 {
    crate::pose_eval::DEFAULT_CONF_THR
}
fn default_sample_count() -> u32 {
    1
}
fn default_policy() -> ObscurePolicy {
    ObscurePolicy::BlackFrame
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        check_template(StageName::Inpaint, &self.inpaint_cmd, &["{input}", "{mask}", "{output}"], &self.params)?;
        check_template(StageName::Faceswap, &self.faceswap_cmd, &["{input}", "{identity}", "{output}"], &self.params)?;
        if self.sample_count == 0 {
            return Err(OrchestratorError::BadSampleCount {
                sample_count: 0,
                frame_count: 0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Mask,
    Inpaint,
    Faceswap,
}

impl std::fmt::Display for StageName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageName::Mask => "mask",
            StageName::Inpaint => "inpaint",
            StageName::Faceswap => "faceswap",
        })
    }
}

const KNOWN: [&str; 7] = ["{input}", "{mask}", "{identity}", "{output}", "{frame}", "{prompt}", "{obscure}"];

/// Placeholders in `arg`, in order of appearance.
fn placeholders(arg: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = arg;
    while let Some(start) = rest.find('{') {
        match rest[start..].find('}') {
            Some(len) => {
                out.push(&rest[start..start + len + 1]);
                rest = &rest[start + len + 1..];
            }
            None => break,
        }
    }
    out
}

fn check_template(
    stage: StageName,
    argv: &[String],
    required: &[&'static str],
    params: &BTreeMap<String, String>,
) -> Result<(), OrchestratorError> {
    if argv.is_empty() {
        return Err(OrchestratorError::EmptyCommand { stage });
    }
    for arg in argv {
        for p in placeholders(arg) {
            let param_ok = p
                .strip_prefix("{param.")
                .and_then(|s| s.strip_suffix('}'))
                .is_some_and(|name| params.contains_key(name));
            if !KNOWN.contains(&p) && !param_ok {
                return Err(OrchestratorError::UnknownPlaceholder {
                    stage,
                    placeholder: p.to_owned(),
                });
            }
        }
    }
    for &placeholder in required {
        if !argv.iter().any(|a| a.contains(placeholder)) {
            return Err(OrchestratorError::MissingPlaceholder { stage, placeholder });
        }
    }
    Ok(())
}

fn resolve(argv: &[String], values: &BTreeMap<String, String>) -> Vec<String> {
    argv.iter()
        .map(|arg| {
            let mut out = arg.clone();
            for p in placeholders(arg) {
                if let Some(v) = values.get(p) {
                    out = out.replace(p, v);
                }
            }
            out
        })
        .collect()
}

/// First frame with a face, and its largest face.
pub fn select_reference_frame(stream: &VideoFaceStream) -> Result<(u32, &FaceRecord), OrchestratorError> {
    stream
        .frames
        .iter()
        .find_map(|f| f.largest_face().map(|face| (f.frame_idx, face)))
        .ok_or_else(|| OrchestratorError::Unanonymizable(stream.video_id().to_owned()))
}

/// `round(k·(N−1)/(S−1))` for k in 0..S, rounding halves up; `[0]` when S = 1.
pub fn sample_frames_uniform(frame_count: u32, sample_count: u32) -> Result<Vec<u32>, OrchestratorError> {
    if sample_count == 0 || sample_count > frame_count {
        return Err(OrchestratorError::BadSampleCount {
            sample_count,
            frame_count,
        });
    }
    if sample_count == 1 {
        return Ok(vec![0]);
    }
    let (n1, s1) = (u64::from(frame_count - 1), u64::from(sample_count - 1));
    let mut out: Vec<u32> = (0..=s1).map(|k| ((2 * k * n1 + s1) / (2 * s1)) as u32).collect();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: StageName,
    /// Resolved argv; empty for the built-in mask stage.
    pub argv: Vec<String>,
    /// Files the stage must leave behind.
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Convex hull of the 98 landmarks.
    Landmarks,
    /// The face box, used when the reference face has no landmarks.
    Bbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub reference_frame_idx: u32,
    pub reference_bbox: [f64; 4],
    pub mask_source: MaskSource,
    pub mask_polygon: Vec<Point>,
    pub mask_dilation: f64,
    pub mask_path: PathBuf,
    pub identity_path: PathBuf,
    pub obscure_path: PathBuf,
    pub stages: Vec<Stage>,
    /// Frames with no detected face.
    pub obscure_frames: Vec<u32>,
    pub obscure_policy: ObscurePolicy,
    /// Frames sampled uniformly for evaluation.
    pub sample_frames: Vec<u32>,
    pub prompt: String,
    pub params: BTreeMap<String, String>,
}

/// Builds the three-stage plan for one video. Deterministic in its inputs.
pub fn plan_pipeline(config: &PipelineConfig, stream: &VideoFaceStream) -> Result<StagePlan, OrchestratorError> {
    config.validate()?;
    let (reference_frame_idx, face) = select_reference_frame(stream)?;
    let (mask_source, polygon) = match &face.landmarks {
        Some(l) => (MaskSource::Landmarks, convex_hull(l)?),
        None => (MaskSource::Bbox, Polygon::from_bbox(face.bbox)?),
    };
    let frame_count = stream.frame_count();
    let sample_frames = sample_frames_uniform(frame_count, config.sample_count)?;
    let with_faces = stream.frames_with_faces();
    let obscure_frames: Vec<u32> = (0..frame_count).filter(|i| with_faces.binary_search(i).is_err()).collect();

    let work = &config.work_dir;
    let mask_path = work.join("mask.pgm");
    let identity_path = work.join("identity.png");
    let obscure_path = work.join("obscure_frames.json");
    let output = config.output.clone().unwrap_or_else(|| work.join("anonymized.mp4"));

    let mut values: BTreeMap<String, String> = [
        ("{input}", config.video.display().to_string()),
        ("{mask}", mask_path.display().to_string()),
        ("{identity}", identity_path.display().to_string()),
        ("{frame}", reference_frame_idx.to_string()),
        ("{prompt}", config.prompt.clone()),
        ("{obscure}", obscure_path.display().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();
    values.extend(config.params.iter().map(|(k, v)| (format!("{{param.{k}}}"), v.clone())));

    let mut stage = |name, template: &[String], out: &Path| {
        values.insert("{output}".into(), out.display().to_string());
        Stage {
            name,
            argv: resolve(template, &values),
            outputs: vec![out.to_path_buf()],
        }
    };
    let inpaint = stage(StageName::Inpaint, &config.inpaint_cmd, &identity_path);
    let faceswap = stage(StageName::Faceswap, &config.faceswap_cmd, &output);
    let stages = vec![
        Stage {
            name: StageName::Mask,
            argv: Vec::new(),
            outputs: vec![mask_path.clone()],
        },
        inpaint,
        faceswap,
    ];

    Ok(StagePlan {
        video_id: stream.video_id().to_owned(),
        width: stream.header.width,
        height: stream.header.height,
        reference_frame_idx,
        reference_bbox: face.bbox,
        mask_source,
        mask_polygon: polygon.vertices().to_vec(),
        mask_dilation: config.mask_dilation,
        mask_path,
        identity_path,
        obscure_path,
        stages,
        obscure_frames,
        obscure_policy: config.obscure_policy,
        sample_frames,
        prompt: config.prompt.clone(),
        params: config.params.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageFailure {
    SpawnFailed { message: String },
    NonZeroExit { code: Option<i32> },
    MissingOutput { path: PathBuf },
    Internal { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: StageName,
    pub argv: Vec<String>,
    pub exit_code: Option<i32>,
    pub duration_ms: f64,
    pub stderr: String,
    pub outputs: Vec<PathBuf>,
    pub failure: Option<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub video_id: String,
    /// Stages that ran, in order; the last one failed if `success` is false.
    pub stages: Vec<StageRecord>,
    pub success: bool,
}

impl ExecutionRecord {
    pub fn failed_stage(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.failure.is_some())
    }
}

fn run_mask_stage(plan: &StagePlan) -> Result<(), String> {
    let poly = Polygon::new(plan.mask_polygon.clone()).map_err(|e| e.to_string())?;
    let mask = rasterize_mask_dilated(&poly, plan.width as usize, plan.height as usize, plan.mask_dilation)
        .map_err(|e| e.to_string())?;
    let file = fs::File::create(&plan.mask_path).map_err(|e| format!("{}: {e}", plan.mask_path.display()))?;
    write_mask_pgm(&mask, std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
    let obscure = serde_json::json!({
        "policy": plan.obscure_policy,
        "frames": plan.obscure_frames,
    });
    fs::write(&plan.obscure_path, format!("{obscure}\n")).map_err(|e| format!("{}: {e}", plan.obscure_path.display()))
}

/// Runs the stages in order and stops at the first failure. A stage fails when
/// it cannot be started, exits nonzero, or leaves an expected output missing.
pub fn execute_plan(plan: &StagePlan) -> ExecutionRecord {
    let mut record = ExecutionRecord {
        video_id: plan.video_id.clone(),
        stages: Vec::new(),
        success: true,
    };
    for stage in &plan.stages {
        let start = Instant::now();
        let mut r = StageRecord {
            name: stage.name,
            argv: stage.argv.clone(),
            exit_code: None,
            duration_ms: 0.0,
            stderr: String::new(),
            outputs: stage.outputs.clone(),
            failure: None,
        };
        let parent = stage.outputs.iter().filter_map(|p| p.parent()).find(|p| !p.as_os_str().is_empty());
        if let Some(Err(e)) = parent.map(fs::create_dir_all) {
            r.failure = Some(StageFailure::Internal { message: e.to_string() });
        } else if stage.name == StageName::Mask {
            if let Err(message) = run_mask_stage(plan) {
                r.failure = Some(StageFailure::Internal { message });
            }
        } else {
            match Command::new(&stage.argv[0])
                .args(&stage.argv[1..])
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::piped())
                .output()
            {
                Err(e) => r.failure = Some(StageFailure::SpawnFailed { message: e.to_string() }),
                Ok(out) => {
                    r.exit_code = out.status.code();
                    r.stderr = String::from_utf8_lossy(&out.stderr).into_owned();
                    if !out.status.success() {
                        r.failure = Some(StageFailure::NonZeroExit { code: r.exit_code });
                    }
                }
            }
        }
        if r.failure.is_none() {
            if let Some(p) = stage.outputs.iter().find(|p| !p.exists()) {
                r.failure = Some(StageFailure::MissingOutput { path: p.clone() });
            }
        }
        r.duration_ms = start.elapsed().as_secs_f64() * 1e3;
        let failed = r.failure.is_some();
        record.stages.push(r);
        if failed {
            record.success = false;
            break;
        }
    }
    record
}

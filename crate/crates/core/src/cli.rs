//! Command-line front end. Every subcommand is a thin wrapper over the library.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 backend
//! failure. Errors go to stderr as one JSON object per line:
//! `{"error":"<kind>","exit_code":<n>,"message":"..."}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, LoadedConfig, CONFIG_ENV};
use crate::evaluate::{self, ap_report, ApKind, StreamPair};
use crate::feature_model::{parse_face_stream, ParseError, Role, VideoFaceStream};
use crate::geometry::{convex_hull, rasterize_mask_dilated, write_mask_pgm};
use crate::orchestrator::{execute_plan, plan_pipeline, PipelineConfig, StagePlan};
use crate::pose_eval::{
    build_pseudo_gt, read_detections, read_poses, read_pseudo_gt, write_pseudo_gt, PseudoGtSet, Similarity,
    WildOptions,
};
use crate::report::{emit_report, merge, parse_json, MetricReport, ReportFormat};

pub const AFTER_HELP: &str = "\
Defaults: pairing IoU 0.3 (greedy, descending IoU); pseudo-GT conf_thr 0.3 (strict >);
pose_nms_thr 0.9; AP thresholds 0.50:0.05:0.95 with 101-point interpolation;
Euler convention intrinsic Z-Y-X (R = Rz·Ry·Rx), absolute angles.
Exit codes: 0 ok, 1 usage, 2 data/validation, 3 backend failure.";

#[derive(Debug, Parser)]
#[command(name = "deid-eval", version, about = "Face-anonymization evaluation engine", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Engine config file (TOML) layered over the built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Config override `key=value`, e.g. `pairing.iou_thr=0.4`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: json, csv or markdown.
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct StreamInputs {
    /// Original face stream; repeat once per video.
    #[arg(long, required = true)]
    pub original: Vec<PathBuf>,
    /// Anonymized face stream, paired with `--original` by position.
    #[arg(long, required = true)]
    pub anonymized: Vec<PathBuf>,
    /// Face pairing IoU threshold [default: 0.3, from pairing.iou_thr].
    #[arg(long)]
    pub iou_thr: Option<f64>,
    /// Worker threads across videos.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Add one row per video.
    #[arg(long)]
    pub per_video: bool,
}

#[derive(Debug, Args)]
pub struct ApCommon {
    /// Pseudo ground truth written by `pseudo-gt`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Baseline AP; adds a relative row 100·AP/baseline.
    #[arg(long)]
    pub baseline_ap: Option<f64>,
    /// Worker threads across thresholds.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize the convex hull of one face's landmarks to a PGM mask.
    #[command(after_help = AFTER_HELP)]
    Mask {
        /// Face stream holding the landmarks.
        #[arg(long)]
        landmarks: PathBuf,
        /// Frame whose largest face with landmarks is used.
        #[arg(long, default_value_t = 0)]
        frame: u32,
        /// Mask width [default: stream header width].
        #[arg(long)]
        width: Option<u32>,
        /// Mask height [default: stream header height].
        #[arg(long)]
        height: Option<u32>,
        /// Dilation radius in pixels.
        #[arg(long, default_value_t = 0.0)]
        dilation: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-frame de-identification and attribute-preservation metrics.
    #[command(after_help = AFTER_HELP)]
    EvalFace {
        #[command(flatten)]
        inputs: StreamInputs,
        /// Keep signed Euler angle differences [default: false, from angles.signed].
        #[arg(long)]
        signed_angles: bool,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        common: Common,
    },
    /// Per-video identity variance and landmark trajectory correlation.
    #[command(after_help = AFTER_HELP)]
    EvalVideo {
        #[command(flatten)]
        inputs: StreamInputs,
        /// Center landmarks per frame before correlating [default: false, from trajectories.center].
        #[arg(long)]
        center: bool,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        common: Common,
    },
    /// Build the pseudo ground truth from detections and poses on original frames.
    #[command(after_help = AFTER_HELP)]
    PseudoGt {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Detection score a box must strictly exceed [default: 0.3, from pose.conf_thr].
        #[arg(long)]
        conf_thr: Option<f64>,
        /// OKS above which a lower-scored pose is suppressed [default: 0.9, from pose.pose_nms_thr].
        #[arg(long)]
        pose_nms_thr: Option<f64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Detection AP (box IoU) against the pseudo ground truth.
    #[command(after_help = AFTER_HELP)]
    EvalDet {
        #[command(flatten)]
        ap: ApCommon,
        #[arg(long)]
        detections: PathBuf,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        common: Common,
    },
    /// Keypoint AP (OKS) against the pseudo ground truth.
    #[command(after_help = AFTER_HELP)]
    EvalPose {
        #[command(flatten)]
        ap: ApCommon,
        #[arg(long)]
        poses: PathBuf,
        /// Leave nose, eyes and ears out of OKS.
        #[arg(long)]
        exclude_face: bool,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        common: Common,
    },
    /// In-the-wild AP of detect-then-pose predictions on anonymized frames.
    #[command(after_help = AFTER_HELP)]
    EvalWild {
        #[command(flatten)]
        ap: ApCommon,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Detection score a pose's box must strictly exceed [default: 0.3, from pose.conf_thr].
        #[arg(long)]
        conf_thr: Option<f64>,
        /// Apply pose NMS at this OKS to the predictions [default: off].
        #[arg(long)]
        pred_pose_nms: Option<f64>,
        /// Leave nose, eyes and ears out of OKS.
        #[arg(long)]
        exclude_face: bool,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        common: Common,
    },
    /// Plan the mask, inpaint and face-swap stages for one video.
    #[command(after_help = AFTER_HELP)]
    Plan {
        /// Pipeline config (TOML).
        #[arg(long)]
        pipeline: PathBuf,
        /// Face stream of the original video.
        #[arg(long)]
        stream: PathBuf,
        /// Input video [default: `video` from the pipeline config].
        #[arg(long)]
        video: Option<PathBuf>,
        /// Working directory [default: `work_dir` from the pipeline config].
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a plan's stages and write the execution record.
    #[command(after_help = AFTER_HELP)]
    Execute {
        /// Plan written by `plan`.
        #[arg(long)]
        plan: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Merge JSON reports and emit them in any format.
    #[command(after_help = AFTER_HELP)]
    Report {
        /// JSON reports to merge, in order.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
        #[command(flatten)]
        common: Common,
    },
}

/// A failed invocation.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            exit_code: 1,
            message: message.into(),
        }
    }

    fn data(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            exit_code: 2,
            message: message.to_string(),
        }
    }

    fn backend(message: impl Into<String>) -> Self {
        Self {
            kind: "backend",
            exit_code: 3,
            message: message.into(),
        }
    }

    fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "exit_code": self.exit_code, "message": self.message }).to_string()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data("io", format!("{}: no such file", path.display())))
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))
}

fn with_path<'a, E: std::fmt::Display>(kind: &'static str, path: &'a Path) -> impl FnOnce(E) -> CliError + 'a {
    move |e| CliError::data(kind, format!("{}: {e}", path.display()))
}

fn write_output(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(with_path("io", p)),
        None => stdout.write_all(bytes).map_err(|e| CliError::data("io", e)),
    }
}

fn load_config(common: &Common, extra: Vec<String>) -> CliResult<LoadedConfig> {
    if let Some(p) = &common.config {
        require_file(p)?;
    }
    let mut overrides = common.set.clone();
    overrides.extend(extra);
    config::load(common.config.as_deref(), &overrides).map_err(|e| CliError::data("config", e))
}

fn read_stream(path: &Path, role: Role) -> CliResult<VideoFaceStream> {
    parse_face_stream(open(path)?, role).map_err(with_path("parse", path))
}

fn read_pairs(inputs: &StreamInputs) -> CliResult<Vec<StreamPair>> {
    if inputs.original.len() != inputs.anonymized.len() {
        return Err(CliError::usage(format!(
            "{} --original but {} --anonymized streams",
            inputs.original.len(),
            inputs.anonymized.len()
        )));
    }
    for p in inputs.original.iter().chain(&inputs.anonymized) {
        require_file(p)?;
    }
    inputs
        .original
        .iter()
        .zip(&inputs.anonymized)
        .map(|(o, a)| Ok((read_stream(o, Role::Original)?, read_stream(a, Role::Anonymized)?)))
        .collect()
}

fn emit(report: &MetricReport, output: &Output, stdout: &mut dyn Write) -> CliResult {
    let format: ReportFormat = output.format.parse().map_err(|e| CliError::usage(format!("{e}")))?;
    write_output(output.out.as_deref(), &emit_report(report, format), stdout)
}

fn check_format(output: &Output) -> CliResult {
    output
        .format
        .parse::<ReportFormat>()
        .map(|_| ())
        .map_err(|e| CliError::usage(format!("{e}")))
}

fn read_gt(path: &Path) -> CliResult<PseudoGtSet> {
    read_pseudo_gt(open(path)?).map_err(with_path("ground_truth", path))
}

fn eval_error(e: evaluate::EvalError) -> CliError {
    CliError::data("evaluation", e)
}

fn run_command(cmd: Command, stdout: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Mask {
            landmarks,
            frame,
            width,
            height,
            dilation,
            out,
            common,
        } => {
            require_file(&landmarks)?;
            load_config(&common, vec![])?;
            // Either role will do for a mask.
            let stream = match parse_face_stream(open(&landmarks)?, Role::Original) {
                Err(ParseError::RoleMismatch { .. }) => read_stream(&landmarks, Role::Anonymized)?,
                other => other.map_err(with_path("parse", &landmarks))?,
            };
            let face = stream
                .frame(frame)
                .and_then(|f| f.largest_face_where(|r| r.landmarks.is_some()))
                .ok_or_else(|| CliError::data("no_face", format!("frame {frame} has no face with landmarks")))?;
            let hull = convex_hull(face.landmarks.as_deref().unwrap()).map_err(|e| CliError::data("geometry", e))?;
            let w = width.unwrap_or(stream.header.width) as usize;
            let h = height.unwrap_or(stream.header.height) as usize;
            let mask = rasterize_mask_dilated(&hull, w, h, dilation).map_err(|e| CliError::usage(e.to_string()))?;
            let mut bytes = Vec::new();
            write_mask_pgm(&mask, &mut bytes).map_err(|e| CliError::data("io", e))?;
            write_output(Some(&out), &bytes, stdout)
        }
        Command::EvalFace {
            inputs,
            signed_angles,
            output,
            common,
        } => {
            check_format(&output)?;
            let mut extra: Vec<String> = inputs.iou_thr.map(|v| format!("pairing.iou_thr={v}")).into_iter().collect();
            if signed_angles {
                extra.push("angles.signed=true".into());
            }
            let loaded = load_config(&common, extra)?;
            let pairs = read_pairs(&inputs)?;
            let report = evaluate::evaluate_faces(&pairs, &loaded, inputs.jobs, inputs.per_video).map_err(eval_error)?;
            emit(&report, &output, stdout)
        }
        Command::EvalVideo {
            inputs,
            center,
            output,
            common,
        } => {
            check_format(&output)?;
            let mut extra: Vec<String> = inputs.iou_thr.map(|v| format!("pairing.iou_thr={v}")).into_iter().collect();
            if center {
                extra.push("trajectories.center=true".into());
            }
            let loaded = load_config(&common, extra)?;
            let pairs = read_pairs(&inputs)?;
            let report =
                evaluate::evaluate_videos(&pairs, &loaded, inputs.jobs, inputs.per_video).map_err(eval_error)?;
            emit(&report, &output, stdout)
        }
        Command::PseudoGt {
            detections,
            poses,
            conf_thr,
            pose_nms_thr,
            out,
            common,
        } => {
            require_file(&detections)?;
            require_file(&poses)?;
            let mut extra = Vec::new();
            extra.extend(conf_thr.map(|v| format!("pose.conf_thr={v}")));
            extra.extend(pose_nms_thr.map(|v| format!("pose.pose_nms_thr={v}")));
            let loaded = load_config(&common, extra)?;
            let cfg = &loaded.config;
            let dets = read_detections(open(&detections)?).map_err(with_path("parse", &detections))?;
            let poses_v = read_poses(open(&poses)?).map_err(with_path("parse", &poses))?;
            let gt = build_pseudo_gt(
                &dets,
                &poses_v,
                cfg.pose.conf_thr,
                cfg.pose.pose_nms_thr,
                &cfg.protocol(Similarity::Oks),
            )
            .map_err(|e| CliError::data("pseudo_gt", e))?;
            let mut bytes = Vec::new();
            write_pseudo_gt(&gt, &mut bytes).map_err(|e| CliError::data("io", e))?;
            write_output(out.as_deref(), &bytes, stdout)
        }
        Command::EvalDet {
            ap,
            detections,
            output,
            common,
        } => {
            check_format(&output)?;
            require_file(&ap.gt)?;
            require_file(&detections)?;
            let loaded = load_config(&common, vec![])?;
            let gt = read_gt(&ap.gt)?;
            let dets = read_detections(open(&detections)?).map_err(with_path("parse", &detections))?;
            let result = evaluate::with_pool(ap.jobs, || evaluate::detection_ap(&gt, &dets, &loaded.config))
                .and_then(|r| r)
                .map_err(eval_error)?;
            let report = ap_report(ApKind::Detection, &result, &gt, ap.baseline_ap, &loaded).map_err(eval_error)?;
            emit(&report, &output, stdout)
        }
        Command::EvalPose {
            ap,
            poses,
            exclude_face,
            output,
            common,
        } => {
            check_format(&output)?;
            require_file(&ap.gt)?;
            require_file(&poses)?;
            let loaded = load_config(&common, vec![])?;
            let gt = read_gt(&ap.gt)?;
            let preds = read_poses(open(&poses)?).map_err(with_path("parse", &poses))?;
            let result = evaluate::with_pool(ap.jobs, || evaluate::pose_ap(&gt, &preds, exclude_face, &loaded.config))
                .and_then(|r| r)
                .map_err(eval_error)?;
            let kind = if exclude_face { ApKind::PoseWithoutFace } else { ApKind::Pose };
            let report = ap_report(kind, &result, &gt, ap.baseline_ap, &loaded).map_err(eval_error)?;
            emit(&report, &output, stdout)
        }
        Command::EvalWild {
            ap,
            detections,
            poses,
            conf_thr,
            pred_pose_nms,
            exclude_face,
            output,
            common,
        } => {
            check_format(&output)?;
            require_file(&ap.gt)?;
            require_file(&detections)?;
            require_file(&poses)?;
            let loaded = load_config(&common, conf_thr.map(|v| format!("pose.conf_thr={v}")).into_iter().collect())?;
            let gt = read_gt(&ap.gt)?;
            let dets = read_detections(open(&detections)?).map_err(with_path("parse", &detections))?;
            let preds = read_poses(open(&poses)?).map_err(with_path("parse", &poses))?;
            let opts = WildOptions {
                conf_thr: loaded.config.pose.conf_thr,
                pred_pose_nms,
                exclude_face,
            };
            let result = evaluate::with_pool(ap.jobs, || evaluate::wild_ap(&gt, &dets, &preds, &opts, &loaded.config))
                .and_then(|r| r)
                .map_err(eval_error)?;
            let mut report = ap_report(ApKind::Wild, &result, &gt, ap.baseline_ap, &loaded).map_err(eval_error)?;
            report.provenance.insert(
                "wild.pred_pose_nms".into(),
                pred_pose_nms.map_or("off".into(), |t| t.to_string()),
            );
            report.provenance.insert("wild.exclude_face".into(), exclude_face.to_string());
            emit(&report, &output, stdout)
        }
        Command::Plan {
            pipeline,
            stream,
            video,
            work_dir,
            out,
            common,
        } => {
            require_file(&pipeline)?;
            require_file(&stream)?;
            load_config(&common, vec![])?;
            let mut pc = PipelineConfig::load(&pipeline).map_err(|e| CliError::data("pipeline", e))?;
            if let Some(v) = video {
                pc.video = v;
            }
            if let Some(w) = work_dir {
                pc.work_dir = w;
            }
            let s = read_stream(&stream, Role::Original)?;
            let plan = plan_pipeline(&pc, &s).map_err(|e| CliError::data("plan", e))?;
            let mut bytes = serde_json::to_vec_pretty(&plan).expect("plan serializes");
            bytes.push(b'\n');
            write_output(out.as_deref(), &bytes, stdout)
        }
        Command::Execute { plan, out, common } => {
            require_file(&plan)?;
            load_config(&common, vec![])?;
            let plan: StagePlan = serde_json::from_reader(open(&plan)?).map_err(with_path("plan", &plan))?;
            let record = execute_plan(&plan);
            let mut bytes = serde_json::to_vec_pretty(&record).expect("record serializes");
            bytes.push(b'\n');
            write_output(out.as_deref(), &bytes, stdout)?;
            match record.failed_stage() {
                None => Ok(()),
                Some(s) => Err(CliError::backend(format!(
                    "stage {} failed: {}; stderr: {}",
                    s.name,
                    serde_json::to_string(&s.failure).expect("failure serializes"),
                    s.stderr.trim()
                ))),
            }
        }
        Command::Report { inputs, output, common } => {
            check_format(&output)?;
            for p in &inputs {
                require_file(p)?;
            }
            load_config(&common, vec![])?;
            let reports = inputs
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p).map_err(with_path("io", p))?;
                    parse_json(&bytes).map_err(with_path("report", p))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let merged = merge(&reports).map_err(|e| CliError::data("report", e))?;
            emit(&merged, &output, stdout)
        }
    }
}

/// Runs the CLI with explicit streams; returns the exit code.
pub fn run_with_io<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                return 0;
            }
            let message = e.render().to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_owned();
            let _ = writeln!(stderr, "{}", CliError::usage(message).to_json_line());
            return 1;
        }
    };
    match run_command(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json_line());
            e.exit_code
        }
    }
}

/// Runs the CLI on the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let code = run_with_io(argv, &mut out, &mut std::io::stderr());
    let _ = out.flush();
    code
}

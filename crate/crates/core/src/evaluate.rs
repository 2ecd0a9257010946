//! End-to-end drivers: paired face streams or pose files in, [`MetricReport`] out.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{EngineConfig, LoadedConfig};
use crate::face_metrics::{frame_pair_metrics, FramePairMetrics, EULER_CONVENTION};
use crate::feature_model::{pair_streams, PairedFrameStream, PairingError, VideoFaceStream};
use crate::pose_eval::{
    average_precision, evaluate_in_the_wild, evaluate_pose, ApResult, DetectionInstance, PoseEvalError, PoseInstance,
    PseudoGtSet, Similarity, WildOptions,
};
use crate::report::{relative_ap, MetricAccumulator, MetricEntry, MetricReport, ReportError, Scope};
use crate::video_metrics::{identity_variance, landmark_correlation, paired_trajectories, stream_descriptors};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Pose(#[from] PoseEvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot build a worker pool: {0}")]
    Pool(String),
}

/// Original and anonymized streams of one video.
pub type StreamPair = (VideoFaceStream, VideoFaceStream);

/// Per-frame metric keys in report order.
pub const FACE_METRICS: [&str; 10] = [
    "identity_cos_dist",
    "gender_match",
    "race_match",
    "emotion_match",
    "gaze_diff",
    "eye_openness_diff",
    "mouth_openness_diff",
    "angle_x_diff",
    "angle_y_diff",
    "angle_z_diff",
];

pub const VIDEO_METRICS: [&str; 3] = [
    "original_identity_variance",
    "anonymized_identity_variance",
    "landmark_correlation",
];

fn metric_values(m: &FramePairMetrics) -> [Option<f64>; 10] {
    let b = |v: Option<bool>| v.map(|x| if x { 1.0 } else { 0.0 });
    let angle = |k: usize| m.angle_diff.map(|a| a[k]);
    [
        m.identity_cos_dist,
        b(m.gender_match),
        b(m.race_match),
        b(m.emotion_match),
        m.gaze_diff,
        m.eye_openness_diff,
        m.mouth_openness_diff,
        angle(0),
        angle(1),
        angle(2),
    ]
}

/// Config-derived provenance shared by all reports.
pub fn provenance(loaded: &LoadedConfig) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("config.sha256".into(), loaded.sha256.clone());
    p.insert("config.file".into(), loaded.file.clone().unwrap_or_else(|| "built-in".into()));
    let table: toml::Table = toml::from_str(&loaded.config.to_toml()).expect("config round-trips");
    flatten(&table, "", &mut |key, value| {
        let source = loaded
            .sources
            .get(key)
            .map_or("default".to_owned(), |s| format!("{s:?}").to_lowercase());
        p.insert(format!("config.{key}"), format!("{value} ({source})"));
    });
    p
}

fn flatten(table: &toml::Table, prefix: &str, f: &mut dyn FnMut(&str, String)) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(t, &key, f),
            other => f(&key, other.to_string()),
        }
    }
}

fn face_provenance(cfg: &EngineConfig) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("euler_convention".into(), EULER_CONVENTION.into());
    p.insert(
        "angles".into(),
        if cfg.angles.signed { "signed" } else { "absolute" }.into(),
    );
    p.insert(
        "pairing_rule".into(),
        format!(
            "greedy descending bbox IoU >= {}; highest-IoU pair per frame",
            cfg.pairing.iou_thr
        ),
    );
    p.insert("attribute_match".into(), "top-1 label equality".into());
    p.insert("eye_openness".into(), "mean of left and right eye ratios".into());
    p.insert("std".into(), "population (divide by n)".into());
    p.insert("headline_scope".into(), "frame".into());
    p
}

pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Accumulates the per-frame metrics of one paired video. Frames that could
/// not be paired count as skipped for every metric.
pub fn accumulate_faces(paired: &PairedFrameStream, cfg: &EngineConfig, acc: &mut MetricAccumulator) {
    let opts = cfg.face_options();
    let mut rows: Vec<(u32, Option<FramePairMetrics>)> = paired
        .primary_pairs()
        .map(|p| (p.frame_idx, Some(frame_pair_metrics(p, &opts))))
        .chain(paired.skipped_frames.iter().map(|&(f, _)| (f, None)))
        .collect();
    rows.sort_by_key(|(f, _)| *f);
    for (_, m) in rows {
        let values = m.as_ref().map(metric_values).unwrap_or([None; 10]);
        for (key, v) in FACE_METRICS.iter().zip(values) {
            acc.add_frame(&paired.video_id, key, v);
        }
    }
}

/// Face-level report over several videos.
pub fn evaluate_faces(
    videos: &[StreamPair],
    loaded: &LoadedConfig,
    jobs: usize,
    per_video: bool,
) -> Result<MetricReport, EvalError> {
    let cfg = &loaded.config;
    let parts: Vec<Result<(MetricAccumulator, usize), PairingError>> = with_pool(jobs, || {
        videos
            .par_iter()
            .map(|(o, a)| {
                let paired = pair_streams(o, a, cfg.pairing.iou_thr)?;
                let mut acc = MetricAccumulator::new();
                accumulate_faces(&paired, cfg, &mut acc);
                Ok((acc, paired.skipped_frames.len()))
            })
            .collect()
    })?;
    let mut acc = MetricAccumulator::new();
    let mut unpaired = 0;
    for part in parts {
        let (a, skipped) = part?;
        acc.extend(a);
        unpaired += skipped;
    }
    let mut prov = provenance(loaded);
    prov.extend(face_provenance(cfg));
    prov.insert("videos".into(), videos.len().to_string());
    prov.insert("frames_unpaired".into(), unpaired.to_string());
    Ok(MetricReport {
        provenance: prov,
        metrics: acc.entries(per_video),
    })
}

/// Accumulates the temporal metrics of one video.
pub fn accumulate_video(
    original: &VideoFaceStream,
    anonymized: &VideoFaceStream,
    paired: &PairedFrameStream,
    cfg: &EngineConfig,
    acc: &mut MetricAccumulator,
) {
    let id = paired.video_id.as_str();
    acc.add_video(id, VIDEO_METRICS[0], identity_variance(&stream_descriptors(original)).ok());
    acc.add_video(id, VIDEO_METRICS[1], identity_variance(&stream_descriptors(anonymized)).ok());
    let corr = paired_trajectories(paired).ok().and_then(|(o, a)| {
        if cfg.trajectories.center {
            landmark_correlation(&o.centered(), &a.centered()).ok()
        } else {
            landmark_correlation(&o, &a).ok()
        }
    });
    acc.add_video(id, VIDEO_METRICS[2], corr.map(|c| c.mean));
}

/// Video-level report over several videos.
pub fn evaluate_videos(
    videos: &[StreamPair],
    loaded: &LoadedConfig,
    jobs: usize,
    per_video: bool,
) -> Result<MetricReport, EvalError> {
    let cfg = &loaded.config;
    let parts: Vec<Result<MetricAccumulator, PairingError>> = with_pool(jobs, || {
        videos
            .par_iter()
            .map(|(o, a)| {
                let paired = pair_streams(o, a, cfg.pairing.iou_thr)?;
                let mut acc = MetricAccumulator::new();
                accumulate_video(o, a, &paired, cfg, &mut acc);
                Ok(acc)
            })
            .collect()
    })?;
    let mut acc = MetricAccumulator::new();
    for part in parts {
        acc.extend(part?);
    }
    let mut prov = provenance(loaded);
    prov.insert("variance".into(), "population (divide by n)".into());
    prov.insert("identity_center".into(), "L2-normalized coordinate-wise median descriptor".into());
    prov.insert(
        "landmark_correlation".into(),
        format!(
            "zero-lag Pearson per coordinate channel, mean over channels; frames: highest-IoU pair per frame; {}",
            if cfg.trajectories.center { "centroid-centered" } else { "raw pixel coordinates" }
        ),
    );
    prov.insert("videos".into(), videos.len().to_string());
    Ok(MetricReport {
        provenance: prov,
        metrics: acc.entries(per_video),
    })
}

/// Which AP evaluation produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApKind {
    Detection,
    Pose,
    PoseWithoutFace,
    Wild,
}

impl ApKind {
    pub fn metric(self) -> &'static str {
        match self {
            ApKind::Detection => "detection_ap",
            ApKind::Pose => "pose_ap",
            ApKind::PoseWithoutFace => "pose_ap_without_face",
            ApKind::Wild => "wild_ap",
        }
    }
}

/// Report rows for one AP result: the global AP, one row per threshold, and
/// the relative AP when a baseline is given.
pub fn ap_report(
    kind: ApKind,
    result: &ApResult,
    gt: &PseudoGtSet,
    baseline: Option<f64>,
    loaded: &LoadedConfig,
) -> Result<MetricReport, EvalError> {
    let metric = kind.metric();
    let row = |metric: String, mean: f64| MetricEntry {
        metric,
        scope: Scope::Global,
        mean: Some(mean),
        std: None,
        n: result.num_gt,
        skipped: gt.len() - result.num_gt,
    };
    let mut metrics = vec![row(metric.to_owned(), result.ap)];
    for (t, ap) in &result.per_threshold {
        metrics.push(row(format!("{metric}@{}", (t * 100.0).round() as u32), *ap));
    }
    if let Some(b) = baseline {
        metrics.push(row(format!("relative_{metric}"), relative_ap(result.ap, b)?));
    }
    let mut prov = provenance(loaded);
    let g = &gt.provenance;
    prov.insert("gt.conf_thr".into(), format!("{} (strict >)", g.conf_thr));
    prov.insert("gt.pose_nms_thr".into(), g.pose_nms_thr.to_string());
    prov.insert(
        "gt.counts".into(),
        format!(
            "detections {} poses {} above_conf {} kept {}",
            g.detections_in, g.poses_in, g.above_conf, g.kept
        ),
    );
    prov.insert(
        "ap.protocol".into(),
        "global greedy matching by descending score; 101-point interpolated precision; mean over thresholds".into(),
    );
    prov.insert("ap.predictions".into(), result.num_preds.to_string());
    Ok(MetricReport {
        provenance: prov,
        metrics,
    })
}

pub fn detection_ap(gt: &PseudoGtSet, dets: &[DetectionInstance], cfg: &EngineConfig) -> Result<ApResult, EvalError> {
    Ok(average_precision(gt, dets, &cfg.protocol(Similarity::Iou))?)
}

pub fn pose_ap(
    gt: &PseudoGtSet,
    poses: &[PoseInstance],
    exclude_face: bool,
    cfg: &EngineConfig,
) -> Result<ApResult, EvalError> {
    Ok(evaluate_pose(gt, poses, exclude_face, &cfg.protocol(Similarity::Oks))?)
}

pub fn wild_ap(
    gt: &PseudoGtSet,
    dets: &[DetectionInstance],
    poses: &[PoseInstance],
    opts: &WildOptions,
    cfg: &EngineConfig,
) -> Result<ApResult, EvalError> {
    Ok(evaluate_in_the_wild(gt, dets, poses, opts, &cfg.protocol(Similarity::Oks))?)
}

//! Downstream pose-estimation degradation protocol.
//!
//! Person detections and 17-keypoint poses predicted on the original footage
//! are turned into a pseudo ground truth ([`build_pseudo_gt`]); predictions
//! made on anonymized footage are then scored against it with COCO-style
//! average precision, using box IoU for detection and OKS for keypoints.

mod ap;
mod io;
mod nms;
mod pseudo_gt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ap::{average_precision, evaluate_in_the_wild, evaluate_pose, ApResult, WildOptions};
pub use io::{read_detections, read_poses, read_pseudo_gt, write_jsonl, write_pseudo_gt};
pub use nms::{bbox_nms, greedy_nms, pose_nms};
pub use pseudo_gt::{build_pseudo_gt, GtProvenance, PseudoGtSet};

pub const KEYPOINT_COUNT: usize = 17;

/// COCO keypoint order.
pub const KEYPOINT_NAMES: [&str; KEYPOINT_COUNT] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Nose, eyes and ears.
pub const FACE_KEYPOINTS: [usize; 5] = [0, 1, 2, 3, 4];

/// Standard COCO keypoint falloff constants (κ = 2σ).
pub const COCO_KAPPA: [f64; KEYPOINT_COUNT] = [
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144, 0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178,
    0.178,
];

/// Detection confidence a box must strictly exceed to enter the pseudo ground truth.
pub const DEFAULT_CONF_THR: f64 = 0.3;
pub const DEFAULT_POSE_NMS_THR: f64 = 0.9;
pub const RECALL_POINTS: usize = 101;

/// `[x, y, w, h]` in pixels.
pub type BBox = [f64; 4];
/// `(x, y, score)`.
pub type Keypoint = [f64; 3];

#[derive(Debug, Error)]
pub enum PoseEvalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: invalid instance: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("pose {image_id}/{id} has no matching detection")]
    Dangling { image_id: String, id: u64 },
    #[error("duplicate detection id {image_id}/{id}")]
    DuplicateId { image_id: String, id: u64 },
    #[error("ground truth is empty; recall is undefined")]
    EmptyGroundTruth,
    #[error("invalid protocol: {0}")]
    BadProtocol(String),
    #[error("OKS similarity requires keypoint predictions")]
    MissingKeypoints,
    #[error("malformed pseudo ground truth: {0}")]
    BadGroundTruth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionInstance {
    pub image_id: String,
    /// Links a detection to the pose estimated inside its box.
    pub id: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance {
    pub image_id: String,
    pub id: u64,
    pub bbox: BBox,
    pub score: f64,
    pub keypoints: [Keypoint; KEYPOINT_COUNT],
}

impl PoseInstance {
    pub fn area(&self) -> f64 {
        self.bbox[2] * self.bbox[3]
    }
}

fn check_box(bbox: &BBox) -> Result<(), String> {
    if bbox.iter().any(|v| !v.is_finite()) || bbox[2] <= 0.0 || bbox[3] <= 0.0 {
        return Err(format!("bbox {bbox:?} must be finite with w > 0 and h > 0"));
    }
    Ok(())
}

fn check_score(score: f64) -> Result<(), String> {
    if !(0.0..=1.0).contains(&score) {
        return Err(format!("score {score} outside [0, 1]"));
    }
    Ok(())
}

impl DetectionInstance {
    pub fn validate(&self) -> Result<(), String> {
        check_box(&self.bbox)?;
        check_score(self.score)
    }
}

impl PoseInstance {
    pub fn validate(&self) -> Result<(), String> {
        check_box(&self.bbox)?;
        check_score(self.score)?;
        for (k, kp) in self.keypoints.iter().enumerate() {
            if !kp[0].is_finite() || !kp[1].is_finite() {
                return Err(format!("keypoint {k} is not finite"));
            }
            if !(0.0..=1.0).contains(&kp[2]) {
                return Err(format!("keypoint {k} score {} outside [0, 1]", kp[2]));
            }
        }
        Ok(())
    }
}

/// Anything that can be ranked and matched as a prediction.
pub trait Prediction {
    fn image_id(&self) -> &str;
    fn score(&self) -> f64;
    fn bbox(&self) -> &BBox;
    fn keypoints(&self) -> Option<&[Keypoint; KEYPOINT_COUNT]>;
}

impl Prediction for DetectionInstance {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn score(&self) -> f64 {
        self.score
    }
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
    fn keypoints(&self) -> Option<&[Keypoint; KEYPOINT_COUNT]> {
        None
    }
}

impl Prediction for PoseInstance {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn score(&self) -> f64 {
        self.score
    }
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
    fn keypoints(&self) -> Option<&[Keypoint; KEYPOINT_COUNT]> {
        Some(&self.keypoints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Iou,
    Oks,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Iou => "iou",
            Similarity::Oks => "oks",
        })
    }
}

/// Similarity measure, thresholds and keypoint handling for one AP evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub similarity: Similarity,
    /// Strictly increasing, in (0, 1].
    pub thresholds: Vec<f64>,
    /// Keypoints that take part in OKS.
    pub keypoint_mask: [bool; KEYPOINT_COUNT],
    pub oks_kappa: [f64; KEYPOINT_COUNT],
}

/// 0.50, 0.55, ..., 0.95 computed from integer hundredths.
pub fn coco_thresholds() -> Vec<f64> {
    thresholds_from_hundredths(50, 5, 10)
}

pub fn thresholds_from_hundredths(start: u32, step: u32, count: u32) -> Vec<f64> {
    (0..count).map(|i| f64::from(start + step * i) / 100.0).collect()
}

/// The 101-point recall grid 0.00, 0.01, ..., 1.00.
pub fn recall_grid() -> Vec<f64> {
    (0..RECALL_POINTS).map(|k| k as f64 / 100.0).collect()
}

impl EvalProtocol {
    pub fn coco(similarity: Similarity) -> Self {
        Self {
            similarity,
            thresholds: coco_thresholds(),
            keypoint_mask: [true; KEYPOINT_COUNT],
            oks_kappa: COCO_KAPPA,
        }
    }

    /// Same protocol with OKS restricted to the 12 body keypoints.
    pub fn without_face(&self) -> Self {
        let mut p = self.clone();
        for k in FACE_KEYPOINTS {
            p.keypoint_mask[k] = false;
        }
        p
    }

    pub fn with_similarity(&self, similarity: Similarity) -> Self {
        Self {
            similarity,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PoseEvalError> {
        let bad = |m: String| Err(PoseEvalError::BadProtocol(m));
        if self.thresholds.is_empty() {
            return bad("no thresholds".into());
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return bad(format!("thresholds {:?} must lie in (0, 1]", self.thresholds));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("thresholds {:?} must be strictly increasing", self.thresholds));
        }
        if self.oks_kappa.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return bad("oks kappa must be positive".into());
        }
        if !self.keypoint_mask.iter().any(|&m| m) {
            return bad("keypoint mask excludes every keypoint".into());
        }
        Ok(())
    }
}

/// Intersection over union of two `[x, y, w, h]` boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let ih = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Number of keypoints of `gt` that are visible (score > 0) and unmasked.
pub fn visible_keypoints(gt: &[Keypoint; KEYPOINT_COUNT], mask: &[bool; KEYPOINT_COUNT]) -> usize {
    gt.iter().zip(mask).filter(|(kp, &m)| m && kp[2] > 0.0).count()
}

/// Object keypoint similarity of `pred` against `gt`:
/// mean over visible unmasked keypoints of `exp(-d² / (2·s²·κ²))`, with `s²`
/// the area of the ground-truth box. `None` when no keypoint qualifies.
pub fn oks(
    gt: &[Keypoint; KEYPOINT_COUNT],
    gt_area: f64,
    pred: &[Keypoint; KEYPOINT_COUNT],
    protocol: &EvalProtocol,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..KEYPOINT_COUNT {
        if !protocol.keypoint_mask[k] || gt[k][2] <= 0.0 {
            continue;
        }
        let d2 = (gt[k][0] - pred[k][0]).powi(2) + (gt[k][1] - pred[k][1]).powi(2);
        let kappa = protocol.oks_kappa[k];
        let e = d2 / (2.0 * gt_area * kappa * kappa);
        sum += (-e).exp();
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn pose_oks(gt: &PoseInstance, pred: &PoseInstance, protocol: &EvalProtocol) -> Option<f64> {
    oks(&gt.keypoints, gt.area(), &pred.keypoints, protocol)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pseudo_gt::filter_by_detection;
use super::{
    iou, oks, pose_nms, visible_keypoints, DetectionInstance, EvalProtocol, PoseEvalError, PoseInstance, Prediction,
    PseudoGtSet, Similarity, RECALL_POINTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Mean over thresholds, ×100.
    pub ap: f64,
    /// `(threshold, AP_t × 100)`.
    pub per_threshold: Vec<(f64, f64)>,
    /// Ground-truth instances that took part (after visibility filtering).
    pub num_gt: usize,
    pub num_preds: usize,
}

/// COCO-style AP of `preds` against `gt`.
///
/// Predictions are ranked globally by descending score (ties keep input order).
/// Each one is matched to the unmatched ground truth on the same image with the
/// highest similarity, if that similarity is ≥ the threshold; ties go to the
/// lower ground-truth index. Precision is interpolated as a running maximum
/// from the right and sampled on the 101-point recall grid.
///
/// Under OKS, ground-truth instances without a visible unmasked keypoint are
/// dropped first.
pub fn average_precision<P: Prediction>(
    gt: &PseudoGtSet,
    preds: &[P],
    protocol: &EvalProtocol,
) -> Result<ApResult, PoseEvalError> {
    protocol.validate()?;
    let gts: Vec<&PoseInstance> = gt
        .instances()
        .filter(|g| {
            protocol.similarity == Similarity::Iou || visible_keypoints(&g.keypoints, &protocol.keypoint_mask) > 0
        })
        .collect();
    let num_gt = gts.len();
    if num_gt == 0 {
        return Err(PoseEvalError::EmptyGroundTruth);
    }
    if protocol.similarity == Similarity::Oks && preds.iter().any(|p| p.keypoints().is_none()) {
        return Err(PoseEvalError::MissingKeypoints);
    }

    // Candidate (gt index, similarity) lists per prediction, same image only.
    let candidates: Vec<Vec<(usize, f64)>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .enumerate()
                .filter(|(_, g)| g.image_id == p.image_id())
                .filter_map(|(gi, g)| {
                    let sim = match protocol.similarity {
                        Similarity::Iou => Some(iou(&g.bbox, p.bbox())),
                        Similarity::Oks => oks(&g.keypoints, g.area(), p.keypoints()?, protocol),
                    };
                    sim.map(|s| (gi, s))
                })
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score().total_cmp(&preds[a].score()));

    // Thresholds are independent and run on the current rayon pool.
    let per_threshold = protocol
        .thresholds
        .par_iter()
        .map(|&t| (t, 100.0 * ap_at(&order, &candidates, num_gt, t)))
        .collect::<Vec<_>>();
    let ap = per_threshold.iter().map(|(_, a)| a).sum::<f64>() / per_threshold.len() as f64;
    Ok(ApResult {
        ap,
        per_threshold,
        num_gt,
        num_preds: preds.len(),
    })
}

fn ap_at(order: &[usize], candidates: &[Vec<(usize, f64)>], num_gt: usize, t: f64) -> f64 {
    let mut matched = vec![false; num_gt];
    let mut tp = 0usize;
    let mut tps = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for (rank, &pi) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &(gi, s) in &candidates[pi] {
            if matched[gi] || s < t {
                continue;
            }
            if best.is_none_or(|(bi, bs)| s > bs || (s == bs && gi < bi)) {
                best = Some((gi, s));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            tp += 1;
        }
        tps.push(tp);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }

    // Recall k/100 is reached at the first rank with 100·tp ≥ k·num_gt.
    let mut sum = 0.0;
    let mut i = 0;
    for k in 0..RECALL_POINTS {
        while i < tps.len() && 100 * tps[i] < k * num_gt {
            i += 1;
        }
        if i == tps.len() {
            break;
        }
        sum += precision[i];
    }
    sum / RECALL_POINTS as f64
}

/// Keypoint AP with OKS; `exclude_face` drops nose, eyes and ears from OKS.
pub fn evaluate_pose(
    gt: &PseudoGtSet,
    preds: &[PoseInstance],
    exclude_face: bool,
    protocol: &EvalProtocol,
) -> Result<ApResult, PoseEvalError> {
    let mut p = protocol.with_similarity(Similarity::Oks);
    if exclude_face {
        p = p.without_face();
    }
    average_precision(gt, preds, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WildOptions {
    /// Detection score a pose's box must strictly exceed.
    pub conf_thr: f64,
    /// Pose NMS applied to the anonymized-side poses; `None` leaves them as is.
    pub pred_pose_nms: Option<f64>,
    pub exclude_face: bool,
}

impl Default for WildOptions {
    fn default() -> Self {
        Self {
            conf_thr: super::DEFAULT_CONF_THR,
            pred_pose_nms: None,
            exclude_face: false,
        }
    }
}

/// AP of the detect-then-pose pipeline run on anonymized frames: poses whose
/// detection passes `conf_thr` are scored against the pseudo ground truth.
pub fn evaluate_in_the_wild(
    gt: &PseudoGtSet,
    anon_dets: &[DetectionInstance],
    anon_poses: &[PoseInstance],
    opts: &WildOptions,
    protocol: &EvalProtocol,
) -> Result<ApResult, PoseEvalError> {
    let mut preds = filter_by_detection(anon_dets, anon_poses, opts.conf_thr)?;
    if let Some(thr) = opts.pred_pose_nms {
        preds = pose_nms(&preds, thr, &protocol.with_similarity(Similarity::Oks));
    }
    evaluate_pose(gt, &preds, opts.exclude_face, protocol)
}

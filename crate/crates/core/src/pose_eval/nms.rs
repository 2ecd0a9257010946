use super::{iou, pose_oks, DetectionInstance, EvalProtocol, PoseInstance};

/// Greedy suppression over `n` items.
///
/// Items are visited by descending score (ties keep input order); an item is
/// kept iff its similarity to every already kept item is ≤ `thr`. Returns the
/// kept indices in visiting order.
pub fn greedy_nms(scores: &[f64], thr: f64, mut similarity: impl FnMut(usize, usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| similarity(k, i) <= thr) {
            kept.push(i);
        }
    }
    kept
}

/// Box NMS; detections on different images never suppress each other.
pub fn bbox_nms(dets: &[DetectionInstance], iou_thr: f64) -> Vec<DetectionInstance> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    greedy_nms(&scores, iou_thr, |k, i| {
        if dets[k].image_id == dets[i].image_id {
            iou(&dets[k].bbox, &dets[i].bbox)
        } else {
            0.0
        }
    })
    .into_iter()
    .map(|i| dets[i].clone())
    .collect()
}

/// Pose NMS with OKS as the overlap, measured against the kept instance's
/// keypoints and box area. A kept pose with no usable keypoints suppresses
/// nothing.
pub fn pose_nms(poses: &[PoseInstance], oks_thr: f64, protocol: &EvalProtocol) -> Vec<PoseInstance> {
    let scores: Vec<f64> = poses.iter().map(|p| p.score).collect();
    greedy_nms(&scores, oks_thr, |k, i| {
        if poses[k].image_id == poses[i].image_id {
            pose_oks(&poses[k], &poses[i], protocol).unwrap_or(0.0)
        } else {
            0.0
        }
    })
    .into_iter()
    .map(|i| poses[i].clone())
    .collect()
}

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{pose_nms, DetectionInstance, EvalProtocol, PoseEvalError, PoseInstance};

/// How the pseudo ground truth was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtProvenance {
    pub conf_thr: f64,
    pub pose_nms_thr: f64,
    pub detections_in: usize,
    pub poses_in: usize,
    /// Poses whose linked detection scored strictly above `conf_thr`.
    pub above_conf: usize,
    /// Instances left after pose NMS.
    pub kept: usize,
}

/// Ground-truth substitute keyed by image id. Within an image no two instances
/// have mutual OKS above `pose_nms_thr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGtSet {
    pub provenance: GtProvenance,
    pub images: BTreeMap<String, Vec<PoseInstance>>,
}

impl PseudoGtSet {
    /// Wraps already curated instances; provenance records no filtering.
    pub fn from_instances(instances: Vec<PoseInstance>) -> Self {
        let n = instances.len();
        let mut images: BTreeMap<String, Vec<PoseInstance>> = BTreeMap::new();
        for p in instances {
            images.entry(p.image_id.clone()).or_default().push(p);
        }
        Self {
            provenance: GtProvenance {
                conf_thr: 0.0,
                pose_nms_thr: 1.0,
                detections_in: 0,
                poses_in: n,
                above_conf: n,
                kept: n,
            },
            images,
        }
    }

    pub fn len(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn instances(&self) -> impl Iterator<Item = &PoseInstance> {
        self.images.values().flatten()
    }
}

/// Score lookup keyed by `(image_id, id)`; rejects duplicate keys.
pub(crate) fn detection_scores(dets: &[DetectionInstance]) -> Result<HashMap<(&str, u64), f64>, PoseEvalError> {
    let mut scores = HashMap::with_capacity(dets.len());
    for d in dets {
        if scores.insert((d.image_id.as_str(), d.id), d.score).is_some() {
            return Err(PoseEvalError::DuplicateId {
                image_id: d.image_id.clone(),
                id: d.id,
            });
        }
    }
    Ok(scores)
}

/// Poses whose linked detection score is strictly above `conf_thr`, in input order.
pub(crate) fn filter_by_detection(
    dets: &[DetectionInstance],
    poses: &[PoseInstance],
    conf_thr: f64,
) -> Result<Vec<PoseInstance>, PoseEvalError> {
    let scores = detection_scores(dets)?;
    let mut kept = Vec::new();
    for p in poses {
        let score = scores
            .get(&(p.image_id.as_str(), p.id))
            .ok_or_else(|| PoseEvalError::Dangling {
                image_id: p.image_id.clone(),
                id: p.id,
            })?;
        if *score > conf_thr {
            kept.push(p.clone());
        }
    }
    Ok(kept)
}

/// Keeps poses whose detection scored strictly above `conf_thr`, then removes
/// duplicates per image with pose NMS at `pose_nms_thr`.
pub fn build_pseudo_gt(
    dets: &[DetectionInstance],
    poses: &[PoseInstance],
    conf_thr: f64,
    pose_nms_thr: f64,
    protocol: &EvalProtocol,
) -> Result<PseudoGtSet, PoseEvalError> {
    let confident = filter_by_detection(dets, poses, conf_thr)?;
    let above_conf = confident.len();
    let mut images: BTreeMap<String, Vec<PoseInstance>> = BTreeMap::new();
    for p in pose_nms(&confident, pose_nms_thr, protocol) {
        images.entry(p.image_id.clone()).or_default().push(p);
    }
    let kept = images.values().map(Vec::len).sum();
    Ok(PseudoGtSet {
        provenance: GtProvenance {
            conf_thr,
            pose_nms_thr,
            detections_in: dets.len(),
            poses_in: poses.len(),
            above_conf,
            kept,
        },
        images,
    })
}

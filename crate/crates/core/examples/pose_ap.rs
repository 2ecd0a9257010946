//! Downstream pose-estimation degradation: build a pseudo ground truth from
//! detections and poses on original frames, then score predictions made on
//! anonymized frames with detection AP, keypoint AP (with and without facial
//! keypoints) and in-the-wild AP.
//!
//! ```text
//! cargo run --example pose_ap
//! ```

use deid_eval::pose_eval::{
    average_precision, build_pseudo_gt, evaluate_in_the_wild, evaluate_pose, EvalProtocol, Similarity, WildOptions,
    DEFAULT_CONF_THR, DEFAULT_POSE_NMS_THR,
};
use deid_eval::report::relative_ap;
use deid_eval::synthetic;

fn main() {
    let oks = EvalProtocol::coco(Similarity::Oks);
    let (dets, poses) = synthetic::pose_scene(40, 3, 5);
    let gt = build_pseudo_gt(&dets, &poses, DEFAULT_CONF_THR, DEFAULT_POSE_NMS_THR, &oks).unwrap();
    println!("pseudo GT: {:?}", gt.provenance);

    let gt_poses: Vec<_> = gt.instances().cloned().collect();
    let baseline = evaluate_pose(&gt, &gt_poses, false, &oks).unwrap().ap;
    println!("self-evaluation pose AP: {baseline:.1}");

    println!("anonymizer        det AP  pose AP  w/o face  wild AP  relative pose AP");
    for (name, jitter, face_factor, drop) in [("mild", 1.0, 4.0, 0.02), ("strong", 4.0, 10.0, 0.15)] {
        let (d, p) = synthetic::degrade(&dets, &poses, jitter, face_factor, drop, 9);
        let confident: Vec<_> = p.iter().filter(|x| x.score > DEFAULT_CONF_THR).cloned().collect();
        let det_ap = average_precision(&gt, &d, &oks.with_similarity(Similarity::Iou)).unwrap().ap;
        let pose = evaluate_pose(&gt, &confident, false, &oks).unwrap().ap;
        let no_face = evaluate_pose(&gt, &confident, true, &oks).unwrap().ap;
        let opts = WildOptions { pred_pose_nms: Some(DEFAULT_POSE_NMS_THR), ..WildOptions::default() };
        let wild = evaluate_in_the_wild(&gt, &d, &p, &opts, &oks).unwrap().ap;
        println!(
            "{name:<16} {det_ap:>7.1} {pose:>8.1} {no_face:>9.1} {wild:>8.1} {:>17.1}",
            relative_ap(pose, baseline).unwrap()
        );
    }
}

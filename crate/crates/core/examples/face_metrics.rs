//! Per-frame metrics between an original and an anonymized face stream:
//! identity distance, attribute agreement, gaze, openness and head-orientation
//! differences.
//!
//! ```text
//! cargo run --example face_metrics
//! ```

use deid_eval::face_metrics::{compose_zyx, frame_pair_metrics, rotation_difference, EulerAngles, FaceMetricOptions};
use deid_eval::feature_model::pair_streams;
use deid_eval::synthetic;

fn main() {
    let original = synthetic::original_stream("demo", 30, 11);
    let anonymized = synthetic::anonymize(&original, 0.6, 12);
    let paired = pair_streams(&original, &anonymized, 0.3).expect("same video");
    println!("{} pairs, {} skipped frames", paired.pairs.len(), paired.skipped_frames.len());

    let opts = FaceMetricOptions::default();
    println!("frame  id_dist  gender  race   emotion  gaze    eye     mouth   |ax|    |ay|    |az|");
    for pair in paired.primary_pairs().take(8) {
        let m = frame_pair_metrics(pair, &opts);
        let a = m.angle_diff.unwrap_or_default();
        println!(
            "{:>5}  {:.4}   {:<6}  {:<5}  {:<7}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
            m.frame_idx,
            m.identity_cos_dist.unwrap_or(f64::NAN),
            m.gender_match.unwrap_or_default(),
            m.race_match.unwrap_or_default(),
            m.emotion_match.unwrap_or_default(),
            m.gaze_diff.unwrap_or(f64::NAN),
            m.eye_openness_diff.unwrap_or(f64::NAN),
            m.mouth_openness_diff.unwrap_or(f64::NAN),
            a[0],
            a[1],
            a[2],
        );
    }

    // A pure yaw of 0.1 rad shows up on the z axis only.
    let yaw = compose_zyx(EulerAngles { x: 0.0, y: 0.0, z: 0.1 });
    let identity = compose_zyx(EulerAngles { x: 0.0, y: 0.0, z: 0.0 });
    println!("yaw 0.1 rad -> {:?}", rotation_difference(&yaw, &identity).abs());

    // A stream paired with itself scores zero everywhere.
    let same = pair_streams(&original, &original, 0.3).unwrap();
    let m = frame_pair_metrics(&same.pairs[0], &opts);
    println!("self-pair: id_dist {:?}, gaze {:?}, angles {:?}", m.identity_cos_dist, m.gaze_diff, m.angle_diff);
}

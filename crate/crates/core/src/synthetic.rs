//! Seeded synthetic fixtures: face streams with blinking eyes and a talking
//! mouth, anonymized counterparts, and person detection/pose scenes.
//!
//! Everything is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::face_metrics::{compose_zyx, EulerAngles};
use crate::feature_model::{
    mat_mul, Attributes, Emotion, FaceRecord, Frame, Gender, Race, Role, StreamHeader, VideoFaceStream,
    DESCRIPTOR_DIM, LANDMARK_COUNT,
};
use crate::geometry::Point;
use crate::pose_eval::{DetectionInstance, PoseInstance, FACE_KEYPOINTS, KEYPOINT_COUNT};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalized(v)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn noisy(base: &[f64], scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    normalized(base.iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect())
}

/// 98 landmarks in unit face coordinates (x right, y down), WFLW layout.
///
/// `eye` and `mouth` are the half-heights of the eye and outer-mouth openings.
pub fn face_template(eye: f64, mouth: f64) -> Vec<Point> {
    let mut p = Vec::with_capacity(LANDMARK_COUNT);
    // Jaw contour 0..=32, temple to temple through the chin.
    for i in 0..33 {
        let t = std::f64::consts::PI * i as f64 / 32.0;
        p.push(Point::new(0.5 - 0.5 * t.cos(), 0.4 + 0.6 * t.sin()));
    }
    // Brows 33..=50.
    for cx in [0.3, 0.7] {
        for i in 0..9 {
            let u = (i as f64 - 4.0) / 4.0;
            p.push(Point::new(cx + 0.12 * u, 0.26 - 0.03 * (1.0 - u * u)));
        }
    }
    // Nose bridge 51..=54 and base 55..=59.
    for i in 0..4 {
        p.push(Point::new(0.5, 0.36 + 0.06 * i as f64));
    }
    for i in 0..5 {
        p.push(Point::new(0.42 + 0.04 * i as f64, 0.6 + 0.01 * (2.0 - (i as f64 - 2.0).abs())));
    }
    // Eyes 60..=67 and 68..=75: corner, 3 top, corner, 3 bottom (right to left).
    for cx in [0.3, 0.7] {
        let (cy, w) = (0.38, 0.08);
        p.push(Point::new(cx - w, cy));
        for u in [-0.5, 0.0, 0.5] {
            p.push(Point::new(cx + u * w, cy - eye * (1.0 - u * u * 0.5)));
        }
        p.push(Point::new(cx + w, cy));
        for u in [0.5, 0.0, -0.5] {
            p.push(Point::new(cx + u * w, cy + eye * (1.0 - u * u * 0.5)));
        }
    }
    // Outer mouth 76..=87, inner mouth 88..=95.
    let (cx, cy, w) = (0.5, 0.78, 0.15);
    p.push(Point::new(cx - w, cy));
    for u in [-2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0] {
        p.push(Point::new(cx + u * w, cy - 0.02 - mouth * (1.0 - u * u * 0.5)));
    }
    p.push(Point::new(cx + w, cy));
    for u in [2.0 / 3.0, 1.0 / 3.0, 0.0, -1.0 / 3.0, -2.0 / 3.0] {
        p.push(Point::new(cx + u * w, cy + 0.02 + mouth * (1.0 - u * u * 0.5)));
    }
    let wi = 0.1;
    p.push(Point::new(cx - wi, cy));
    for u in [-0.5, 0.0, 0.5] {
        p.push(Point::new(cx + u * wi, cy - 0.6 * mouth));
    }
    p.push(Point::new(cx + wi, cy));
    for u in [0.5, 0.0, -0.5] {
        p.push(Point::new(cx + u * wi, cy + 0.6 * mouth));
    }
    // Pupils 96, 97.
    p.push(Point::new(0.3, 0.38));
    p.push(Point::new(0.7, 0.38));
    debug_assert_eq!(p.len(), LANDMARK_COUNT);
    p
}

fn place(template: &[Point], bbox: [f64; 4]) -> Vec<Point> {
    template
        .iter()
        .map(|q| Point::new(bbox[0] + q.x * bbox[2], bbox[1] + q.y * bbox[3]))
        .collect()
}

fn pick<T: Copy>(rng: &mut impl Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// An original stream with one face in every frame.
///
/// The face drifts across the frame, blinks, talks and turns its head; the
/// identity descriptor fluctuates around a fixed identity.
pub fn original_stream(video_id: &str, frame_count: u32, seed: u64) -> VideoFaceStream {
    let mut r = rng(seed);
    let identity = unit_vector(&mut r, DESCRIPTOR_DIM);
    let (x0, y0) = (r.random_range(150.0..250.0), r.random_range(100.0..160.0));
    let size = r.random_range(140.0..200.0);
    let (blink, talk, turn) = (r.random_range(0.1..0.3), r.random_range(0.2..0.5), r.random_range(0.02..0.06));
    let gender = pick(&mut r, Gender::ALL);
    let race = pick(&mut r, Race::ALL);
    let frames = (0..frame_count)
        .map(|t| {
            let tf = t as f64;
            let bbox = [
                x0 + 40.0 * (0.03 * tf).sin(),
                y0 + 20.0 * (0.05 * tf).cos(),
                size * (1.0 + 0.05 * (0.02 * tf).sin()),
                size * 1.2 * (1.0 + 0.05 * (0.02 * tf).sin()),
            ];
            let eye = 0.005 + 0.03 * (0.5 + 0.5 * (blink * tf).sin()).powi(2);
            let mouth = 0.01 + 0.04 * (0.5 + 0.5 * (talk * tf).sin());
            let landmarks = place(&face_template(eye, mouth), bbox)
                .into_iter()
                .map(|q| Point::new(q.x + r.random_range(-0.3..0.3), q.y + r.random_range(-0.3..0.3)))
                .collect();
            let angles = EulerAngles {
                x: 0.2 * (turn * tf).sin(),
                y: 0.3 * (turn * 0.7 * tf).cos(),
                z: 0.1 * (turn * 1.3 * tf).sin(),
            };
            let emotion = if mouth > 0.035 { Emotion::Happy } else { Emotion::Neutral };
            FaceRecord {
                video_id: video_id.to_owned(),
                frame_idx: t,
                bbox,
                det_score: r.random_range(0.8..1.0),
                descriptor: Some(noisy(&identity, 0.08, &mut r)),
                landmarks: Some(landmarks),
                head_rot: Some(compose_zyx(angles)),
                gaze: Some([(0.1 * tf).sin() * 0.8, (0.07 * tf).cos() * 0.5]),
                attributes: Some(Attributes {
                    gender: Some(gender),
                    race: Some(race),
                    emotion: Some(emotion),
                }),
            }
        })
        .map(|face| Frame {
            frame_idx: face.frame_idx,
            faces: vec![face],
        })
        .collect();
    VideoFaceStream {
        header: StreamHeader {
            video_id: video_id.to_owned(),
            role: Role::Original,
            width: WIDTH,
            height: HEIGHT,
            frame_count,
        },
        frames,
    }
}

/// An anonymized counterpart of `original`: a new identity with the same
/// geometry, small landmark/pose/gaze errors, and occasional attribute flips.
/// `strength` in [0, 1] scales the errors.
pub fn anonymize(original: &VideoFaceStream, strength: f64, seed: u64) -> VideoFaceStream {
    let mut r = rng(seed);
    let identity = unit_vector(&mut r, DESCRIPTOR_DIM);
    let mut out = original.clone();
    out.header.role = Role::Anonymized;
    for frame in &mut out.frames {
        for face in &mut frame.faces {
            let j = |r: &mut ChaCha8Rng, s: f64| strength * r.random_range(-s..s);
            face.bbox[0] += j(&mut r, 3.0);
            face.bbox[1] += j(&mut r, 3.0);
            if let Some(l) = &mut face.landmarks {
                for q in l.iter_mut() {
                    q.x += j(&mut r, 1.5);
                    q.y += j(&mut r, 1.5);
                }
            }
            if let Some(d) = &mut face.descriptor {
                *d = noisy(&identity, 0.08 + 0.1 * strength, &mut r);
            }
            if let Some(rot) = &mut face.head_rot {
                let delta = compose_zyx(EulerAngles {
                    x: j(&mut r, 0.1),
                    y: j(&mut r, 0.1),
                    z: j(&mut r, 0.1),
                });
                *rot = mat_mul(&delta, rot);
            }
            if let Some(g) = &mut face.gaze {
                g[0] = (g[0] + j(&mut r, 0.3)).clamp(-1.0, 1.0);
                g[1] = (g[1] + j(&mut r, 0.3)).clamp(-1.0, 1.0);
            }
            if let Some(a) = &mut face.attributes {
                if r.random_bool(0.3 * strength) {
                    a.gender = Some(pick(&mut r, Gender::ALL));
                }
                if r.random_bool(0.4 * strength) {
                    a.race = Some(pick(&mut r, Race::ALL));
                }
                if r.random_bool(0.5 * strength) {
                    a.emotion = Some(pick(&mut r, Emotion::ALL));
                }
            }
            face.det_score = (face.det_score - j(&mut r, 0.1).abs()).clamp(0.0, 1.0);
        }
    }
    out
}

/// Removes every face from the listed frames, leaving explicit empty frames.
pub fn remove_faces(stream: &mut VideoFaceStream, frames: &[u32]) {
    for f in &mut stream.frames {
        if frames.contains(&f.frame_idx) {
            f.faces.clear();
        }
    }
}

/// Three original/anonymized video pairs of `frames_per_video` frames each.
pub fn fixture_set(frames_per_video: u32, seed: u64) -> Vec<(VideoFaceStream, VideoFaceStream)> {
    (0..3u64)
        .map(|i| {
            let o = original_stream(&format!("video{i:02}"), frames_per_video, seed.wrapping_add(2 * i));
            let a = anonymize(&o, 0.5, seed.wrapping_add(2 * i + 1));
            (o, a)
        })
        .collect()
}

/// 17 keypoints of an upright person inside `bbox`.
fn person_keypoints(bbox: [f64; 4], rng: &mut impl Rng) -> [[f64; 3]; KEYPOINT_COUNT] {
    // Unit-box layout in COCO order.
    const LAYOUT: [[f64; 2]; KEYPOINT_COUNT] = [
        [0.50, 0.08],
        [0.45, 0.06],
        [0.55, 0.06],
        [0.40, 0.08],
        [0.60, 0.08],
        [0.30, 0.22],
        [0.70, 0.22],
        [0.22, 0.40],
        [0.78, 0.40],
        [0.18, 0.55],
        [0.82, 0.55],
        [0.38, 0.55],
        [0.62, 0.55],
        [0.38, 0.75],
        [0.62, 0.75],
        [0.38, 0.95],
        [0.62, 0.95],
    ];
    let mut kps = [[0.0; 3]; KEYPOINT_COUNT];
    for (kp, l) in kps.iter_mut().zip(LAYOUT) {
        *kp = [
            bbox[0] + bbox[2] * (l[0] + rng.random_range(-0.03..0.03)),
            bbox[1] + bbox[3] * (l[1] + rng.random_range(-0.03..0.03)),
            rng.random_range(0.3..1.0),
        ];
    }
    kps
}

/// Detections and their poses for `images` frames with up to `people` persons
/// each, plus low-confidence clutter and near-duplicate poses. Detection and
/// pose ids are shared per image.
pub fn pose_scene(images: usize, people: usize, seed: u64) -> (Vec<DetectionInstance>, Vec<PoseInstance>) {
    let mut r = rng(seed);
    let (mut dets, mut poses) = (Vec::new(), Vec::new());
    for img in 0..images {
        let image_id = format!("frame{img:05}");
        let mut id = 0u64;
        let mut push = |bbox: [f64; 4], score: f64, kps, dets: &mut Vec<_>, poses: &mut Vec<_>| {
            dets.push(DetectionInstance {
                image_id: image_id.clone(),
                id,
                bbox,
                score,
            });
            poses.push(PoseInstance {
                image_id: image_id.clone(),
                id,
                bbox,
                score,
                keypoints: kps,
            });
            id += 1;
        };
        for p in 0..r.random_range(1..=people) {
            let bbox = [
                20.0 + 150.0 * p as f64 + r.random_range(0.0..30.0),
                r.random_range(20.0..80.0),
                r.random_range(80.0..120.0),
                r.random_range(250.0..350.0),
            ];
            let kps = person_keypoints(bbox, &mut r);
            push(bbox, r.random_range(0.5..1.0), kps, &mut dets, &mut poses);
            if r.random_bool(0.3) {
                // Near-duplicate pose from an overlapping box.
                let mut dup = kps;
                for kp in &mut dup {
                    kp[0] += r.random_range(-0.5..0.5);
                    kp[1] += r.random_range(-0.5..0.5);
                }
                let b = [bbox[0] + 1.0, bbox[1] + 1.0, bbox[2], bbox[3]];
                push(b, r.random_range(0.31..0.5), dup, &mut dets, &mut poses);
            }
        }
        if r.random_bool(0.5) {
            let bbox = [500.0, 300.0, 60.0, 120.0];
            let kps = person_keypoints(bbox, &mut r);
            push(bbox, r.random_range(0.0..0.3), kps, &mut dets, &mut poses);
        }
    }
    (dets, poses)
}

/// Predictions as a detector/pose model might produce them on anonymized
/// frames: keypoints jittered (facial ones `face_factor` times more), boxes
/// shifted, scores lowered, and each instance dropped with probability `drop`.
pub fn degrade(
    dets: &[DetectionInstance],
    poses: &[PoseInstance],
    jitter: f64,
    face_factor: f64,
    drop: f64,
    seed: u64,
) -> (Vec<DetectionInstance>, Vec<PoseInstance>) {
    let mut r = rng(seed);
    let (mut out_d, mut out_p) = (Vec::new(), Vec::new());
    for (d, p) in dets.iter().zip(poses) {
        if r.random_bool(drop) {
            continue;
        }
        let shift = [r.random_range(-jitter..=jitter), r.random_range(-jitter..=jitter)];
        let score = (d.score * r.random_range(0.8..=1.0)).clamp(0.0, 1.0);
        let mut d2 = d.clone();
        d2.bbox[0] += shift[0];
        d2.bbox[1] += shift[1];
        d2.score = score;
        let mut p2 = p.clone();
        p2.bbox = d2.bbox;
        p2.score = score;
        for (k, kp) in p2.keypoints.iter_mut().enumerate() {
            let s = if FACE_KEYPOINTS.contains(&k) { jitter * face_factor } else { jitter };
            kp[0] += r.random_range(-s..=s);
            kp[1] += r.random_range(-s..=s);
        }
        out_d.push(d2);
        out_p.push(p2);
    }
    (out_d, out_p)
}

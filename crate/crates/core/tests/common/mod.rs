//! Independent oracles and random fixture builders shared by the integration
//! tests and the acceptance target. Nothing here calls the code under test
//! except for input types.
#![allow(dead_code)]

use std::collections::BTreeMap;

use deid_eval::geometry::Point;
use deid_eval::pose_eval::{DetectionInstance, PoseInstance, PseudoGtSet, KEYPOINT_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- geometry

fn orient(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_closed_segment(p: Point, a: Point, b: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// O(n³) hull: a directed edge p→q is on the counter-clockwise hull iff every
/// point is strictly left of it or on the closed segment. Vertices are walked
/// from the lexicographically smallest one. Exact for integer coordinates.
pub fn brute_force_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if i == j {
                continue;
            }
            let ok = pts.iter().all(|&r| {
                let c = orient(pts[i], pts[j], r);
                c > 0.0 || (c == 0.0 && on_closed_segment(r, pts[i], pts[j]))
            });
            if ok {
                next.insert(i, j);
            }
        }
    }
    if next.is_empty() {
        return Vec::new();
    }
    let start = *next.keys().next().unwrap();
    let mut out = vec![pts[start]];
    let mut cur = next[&start];
    while cur != start {
        out.push(pts[cur]);
        cur = next[&cur];
        assert!(out.len() <= pts.len(), "hull walk does not close");
    }
    out
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.x - a.x - t * dx).powi(2) + (p.y - a.y - t * dy).powi(2)).sqrt()
}

/// Winding-number containment, boundary included within `tol`.
pub fn point_in_polygon(p: Point, poly: &[Point], tol: f64) -> bool {
    let n = poly.len();
    let mut winding = 0i32;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if segment_distance(p, a, b) <= tol {
            return true;
        }
        if a.y <= p.y {
            if b.y > p.y && orient(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && orient(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Row-major raster by testing every pixel center.
pub fn raster_oracle(poly: &[Point], width: usize, height: usize, tol: f64) -> Vec<bool> {
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            out.push(point_in_polygon(Point::new(col as f64 + 0.5, row as f64 + 0.5), poly, tol));
        }
    }
    out
}

/// Random simple star-shaped polygon around `center`.
pub fn star_polygon(r: &mut impl Rng, center: Point, radius: f64, n: usize) -> Vec<Point> {
    let mut angles: Vec<f64> = (0..n).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    angles
        .into_iter()
        .map(|a| {
            let rho = radius * r.random_range(0.25..=1.0);
            Point::new(center.x + rho * a.cos(), center.y + rho * a.sin())
        })
        .collect()
}

// ---------------------------------------------------------------- rotations

pub type Mat3 = [[f64; 3]; 3];

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                m[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    m
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[j][i];
        }
    }
    m
}

pub fn frobenius(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += (a[i][j] - b[i][j]).powi(2);
        }
    }
    s.sqrt()
}

/// Rotation of a unit quaternion (w, x, y, z).
pub fn quat_to_mat(q: [f64; 4]) -> Mat3 {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Uniform random rotation: a quaternion drawn from the unit 4-ball, normalized.
pub fn random_rotation(r: &mut impl Rng) -> Mat3 {
    loop {
        let q = [(); 4].map(|_| r.random_range(-1.0..=1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-3 && n2 <= 1.0 {
            return quat_to_mat(q);
        }
    }
}

/// Rotation about axis `u` by `angle`.
pub fn axis_angle(u: [f64; 3], angle: f64) -> Mat3 {
    let h = (angle / 2.0).sin_cos();
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    quat_to_mat([h.1, h.0 * u[0] / n, h.0 * u[1] / n, h.0 * u[2] / n])
}

// ---------------------------------------------------------------- AP oracle

pub const COCO_SIGMA_X2: [f64; KEYPOINT_COUNT] = [
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144, 0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178,
    0.178,
];

pub fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let x0 = a[0].max(b[0]);
    let y0 = a[1].max(b[1]);
    let x1 = (a[0] + a[2]).min(b[0] + b[2]);
    let y1 = (a[1] + a[3]).min(b[1] + b[3]);
    let inter = if x1 > x0 && y1 > y0 { (x1 - x0) * (y1 - y0) } else { 0.0 };
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// OKS with `s²` = ground-truth box area; `None` without usable keypoints.
pub fn oracle_oks(gt: &PoseInstance, pred: &PoseInstance, use_kp: &[bool; KEYPOINT_COUNT]) -> Option<f64> {
    let s2 = gt.bbox[2] * gt.bbox[3];
    let terms: Vec<f64> = (0..KEYPOINT_COUNT)
        .filter(|&k| use_kp[k] && gt.keypoints[k][2] > 0.0)
        .map(|k| {
            let dx = gt.keypoints[k][0] - pred.keypoints[k][0];
            let dy = gt.keypoints[k][1] - pred.keypoints[k][1];
            let kappa = COCO_SIGMA_X2[k];
            (-(dx * dx + dy * dy) / (2.0 * s2 * kappa * kappa)).exp()
        })
        .collect();
    if terms.is_empty() {
        None
    } else {
        Some(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Insertion sort: stable, descending score.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && scores[order[j - 1]] < scores[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    order
}

/// Greedy matching at threshold `t`: for each prediction in rank order, the
/// unmatched same-image ground truth with the highest similarity ≥ t (lowest
/// index on ties). Returns the rank order and the matched GT index per rank.
pub fn oracle_matches(
    gt_images: &[&str],
    pred_images: &[&str],
    pred_scores: &[f64],
    sim: &impl Fn(usize, usize) -> Option<f64>,
    t: f64,
) -> (Vec<usize>, Vec<Option<usize>>) {
    let order = score_order(pred_scores);
    let mut taken = vec![false; gt_images.len()];
    let mut flags = Vec::with_capacity(order.len());
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..gt_images.len() {
            if taken[g] || gt_images[g] != pred_images[p] {
                continue;
            }
            let Some(s) = sim(g, p) else { continue };
            if s >= t && best.map_or(true, |(_, bs)| s > bs) {
                best = Some((g, s));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        flags.push(best.map(|(g, _)| g));
    }
    (order, flags)
}

/// Brute-force COCO-style AP (×100), mean over `thresholds`.
///
/// For every threshold the full precision/recall curve is built, and at each
/// recall level k/100 the precision is the maximum over all curve points with
/// recall ≥ k/100 (0 if none).
pub fn oracle_ap(
    gt_images: &[&str],
    pred_images: &[&str],
    pred_scores: &[f64],
    sim: impl Fn(usize, usize) -> Option<f64>,
    thresholds: &[f64],
) -> f64 {
    let n_gt = gt_images.len();
    let mut total = 0.0;
    for &t in thresholds {
        let (_, flags) = oracle_matches(gt_images, pred_images, pred_scores, &sim, t);
        let mut curve: Vec<(f64, f64)> = Vec::new();
        let mut tp = 0usize;
        for (rank, &hit) in flags.iter().enumerate() {
            tp += usize::from(hit.is_some());
            curve.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
        }
        let mut sum = 0.0;
        for k in 0..=100 {
            let level = k as f64 / 100.0;
            sum += curve
                .iter()
                .filter(|(rec, _)| *rec >= level)
                .map(|(_, prec)| *prec)
                .fold(0.0, f64::max);
        }
        total += 100.0 * sum / 101.0;
    }
    total / thresholds.len() as f64
}

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

fn random_keypoints(r: &mut impl Rng, bbox: [f64; 4]) -> [[f64; 3]; KEYPOINT_COUNT] {
    let mut kps = [[0.0; 3]; KEYPOINT_COUNT];
    for kp in &mut kps {
        let vis = if r.random_bool(0.85) { r.random_range(0.05..=1.0) } else { 0.0 };
        *kp = [
            bbox[0] + r.random_range(0.0..=bbox[2]),
            bbox[1] + r.random_range(0.0..=bbox[3]),
            vis,
        ];
    }
    // At least one visible keypoint keeps every instance in the OKS evaluation.
    kps[5][2] = kps[5][2].max(0.5);
    kps
}

/// One randomized AP instance: ground truth and predictions over ≤ 4 images,
/// ≤ 5 GT and ≤ 8 predictions per image. Predictions are perturbed copies of
/// ground truth or unrelated boxes.
pub struct ApInstance {
    pub gt: Vec<PoseInstance>,
    pub preds: Vec<PoseInstance>,
}

impl ApInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let images = r.random_range(1..=4);
        let mut gt = Vec::new();
        let mut preds = Vec::new();
        let mut id = 0u64;
        for img in 0..images {
            let image_id = format!("img{img}");
            let n_gt = r.random_range(0..=5);
            let n_pred = r.random_range(0..=8);
            let mut here = Vec::new();
            for _ in 0..n_gt {
                let bbox = [
                    r.random_range(0.0..200.0),
                    r.random_range(0.0..200.0),
                    r.random_range(20.0..80.0),
                    r.random_range(40.0..160.0),
                ];
                let g = PoseInstance {
                    image_id: image_id.clone(),
                    id,
                    bbox,
                    score: r.random_range(0.31..=1.0),
                    keypoints: random_keypoints(&mut r, bbox),
                };
                id += 1;
                here.push(g.clone());
                gt.push(g);
            }
            for _ in 0..n_pred {
                let mut p = if !here.is_empty() && r.random_bool(0.7) {
                    let src = &here[r.random_range(0..here.len())];
                    let mut p = src.clone();
                    let jitter = r.random_range(0.0..12.0);
                    for v in &mut p.bbox[..2] {
                        *v += r.random_range(-jitter..=jitter);
                    }
                    for kp in &mut p.keypoints {
                        kp[0] += r.random_range(-jitter..=jitter);
                        kp[1] += r.random_range(-jitter..=jitter);
                    }
                    p
                } else {
                    let bbox = [
                        r.random_range(0.0..200.0),
                        r.random_range(0.0..200.0),
                        r.random_range(20.0..80.0),
                        r.random_range(40.0..160.0),
                    ];
                    PoseInstance {
                        image_id: image_id.clone(),
                        id: 0,
                        bbox,
                        score: 0.0,
                        keypoints: random_keypoints(&mut r, bbox),
                    }
                };
                p.id = id;
                id += 1;
                // Occasional exact score ties exercise the stable ordering.
                p.score = if r.random_bool(0.1) { 0.5 } else { r.random_range(0.0..=1.0) };
                preds.push(p);
            }
        }
        if gt.is_empty() {
            let bbox = [10.0, 10.0, 40.0, 90.0];
            gt.push(PoseInstance {
                image_id: "img0".into(),
                id,
                bbox,
                score: 0.9,
                keypoints: random_keypoints(&mut r, bbox),
            });
        }
        Self { gt, preds }
    }

    pub fn gt_set(&self) -> PseudoGtSet {
        PseudoGtSet::from_instances(self.gt.clone())
    }

    /// Ground truth in the order the evaluator indexes it (by image, then input order).
    pub fn gt_in_eval_order(&self) -> Vec<PoseInstance> {
        self.gt_set().instances().cloned().collect()
    }

    pub fn detections(&self) -> Vec<DetectionInstance> {
        self.preds
            .iter()
            .map(|p| DetectionInstance {
                image_id: p.image_id.clone(),
                id: p.id,
                bbox: p.bbox,
                score: p.score,
            })
            .collect()
    }

    pub fn oracle_detection_ap(&self) -> f64 {
        let gt = self.gt_in_eval_order();
        let gi: Vec<&str> = gt.iter().map(|g| g.image_id.as_str()).collect();
        let pi: Vec<&str> = self.preds.iter().map(|p| p.image_id.as_str()).collect();
        let scores: Vec<f64> = self.preds.iter().map(|p| p.score).collect();
        oracle_ap(&gi, &pi, &scores, |g, p| Some(oracle_iou(gt[g].bbox, self.preds[p].bbox)), &coco_thresholds())
    }

    /// `(prediction, ground truth)` true-positive matches under OKS at `t`,
    /// GT indexed in evaluation order.
    pub fn oracle_pose_tps(&self, t: f64) -> Vec<(usize, usize)> {
        let use_kp = [true; KEYPOINT_COUNT];
        let gt = self.gt_in_eval_order();
        let gi: Vec<&str> = gt.iter().map(|g| g.image_id.as_str()).collect();
        let pi: Vec<&str> = self.preds.iter().map(|p| p.image_id.as_str()).collect();
        let scores: Vec<f64> = self.preds.iter().map(|p| p.score).collect();
        let (order, flags) = oracle_matches(&gi, &pi, &scores, &|g, p| oracle_oks(&gt[g], &self.preds[p], &use_kp), t);
        order.into_iter().zip(flags).filter_map(|(i, g)| g.map(|g| (i, g))).collect()
    }

    pub fn oracle_pose_ap(&self, exclude_face: bool) -> f64 {
        let mut use_kp = [true; KEYPOINT_COUNT];
        if exclude_face {
            use_kp[..5].fill(false);
        }
        let gt: Vec<PoseInstance> = self
            .gt_in_eval_order()
            .into_iter()
            .filter(|g| (0..KEYPOINT_COUNT).any(|k| use_kp[k] && g.keypoints[k][2] > 0.0))
            .collect();
        let gi: Vec<&str> = gt.iter().map(|g| g.image_id.as_str()).collect();
        let pi: Vec<&str> = self.preds.iter().map(|p| p.image_id.as_str()).collect();
        let scores: Vec<f64> = self.preds.iter().map(|p| p.score).collect();
        oracle_ap(&gi, &pi, &scores, |g, p| oracle_oks(&gt[g], &self.preds[p], &use_kp), &coco_thresholds())
    }
}

// ---------------------------------------------------------------- stub backends

/// Stub inpainting backend: `stub_inpaint.sh INPUT MASK OUTPUT` copies the mask
/// to the identity image, failing if the mask stage did not run.
pub const INPAINT_OK: &str = "test -f \"$2\" || exit 4\ncp \"$2\" \"$3\"\n";
/// Stub face-swap backend: `stub_swap.sh INPUT IDENTITY OUTPUT` copies the identity image.
pub const SWAP_OK: &str = "test -f \"$2\" || exit 4\ncp \"$2\" \"$3\"\n";
pub const FAILS: &str = "echo \"backend exploded\" >&2\nexit 1\n";
pub const NO_OUTPUT: &str = "exit 0\n";

/// Writes the two stub scripts and a pipeline config into `dir`; returns the config path.
pub fn stub_pipeline(dir: &std::path::Path, inpaint: &str, swap: &str) -> std::path::PathBuf {
    let (pi, ps) = (dir.join("stub_inpaint.sh"), dir.join("stub_swap.sh"));
    std::fs::write(&pi, format!("#!/bin/sh\n{inpaint}")).unwrap();
    std::fs::write(&ps, format!("#!/bin/sh\n{swap}")).unwrap();
    let toml = format!(
        "inpaint_cmd = [\"sh\", \"{}\", \"{{input}}\", \"{{mask}}\", \"{{output}}\"]\n\
         faceswap_cmd = [\"sh\", \"{}\", \"{{input}}\", \"{{identity}}\", \"{{output}}\"]\n\
         video = \"{}\"\nwork_dir = \"{}\"\nsample_count = 3\n",
        pi.display(),
        ps.display(),
        dir.join("input.mp4").display(),
        dir.join("work").display(),
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, toml).unwrap();
    path
}

// ---------------------------------------------------------------- CLI fixtures

/// Runs the CLI in-process; returns `(exit code, stdout, stderr)`.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("deid-eval").chain(args.iter().copied());
    let code = deid_eval::cli::run_with_io(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Writes `fixture_set(frames, seed)` as face streams; returns `(original, anonymized)` paths.
pub fn write_stream_fixtures(
    dir: &std::path::Path,
    frames: u32,
    seed: u64,
) -> Vec<(std::path::PathBuf, std::path::PathBuf)> {
    use deid_eval::feature_model::write_face_stream;
    deid_eval::synthetic::fixture_set(frames, seed)
        .iter()
        .map(|(o, a)| {
            let po = dir.join(format!("{}.original.jsonl", o.video_id()));
            let pa = dir.join(format!("{}.anonymized.jsonl", a.video_id()));
            write_face_stream(o, std::fs::File::create(&po).unwrap()).unwrap();
            write_face_stream(a, std::fs::File::create(&pa).unwrap()).unwrap();
            (po, pa)
        })
        .collect()
}

/// `--original A --anonymized B ...` for every fixture pair.
pub fn stream_args(pairs: &[(std::path::PathBuf, std::path::PathBuf)]) -> Vec<String> {
    pairs
        .iter()
        .flat_map(|(o, a)| {
            [
                "--original".to_owned(),
                o.display().to_string(),
                "--anonymized".to_owned(),
                a.display().to_string(),
            ]
        })
        .collect()
}

pub fn write_jsonl_file<T: serde::Serialize>(path: &std::path::Path, items: &[T]) {
    deid_eval::pose_eval::write_jsonl(items, std::fs::File::create(path).unwrap()).unwrap();
}

/// Runs `pseudo-gt` on `pose_scene(images, 3, seed)`; returns the ground-truth
/// path plus the raw detections and poses.
pub fn write_pose_fixtures(
    dir: &std::path::Path,
    images: usize,
    seed: u64,
) -> (
    std::path::PathBuf,
    Vec<deid_eval::pose_eval::DetectionInstance>,
    Vec<deid_eval::pose_eval::PoseInstance>,
) {
    let (dets, poses) = deid_eval::synthetic::pose_scene(images, 3, seed);
    let (d, p, g) = (dir.join("dets.jsonl"), dir.join("poses.jsonl"), dir.join("gt.json"));
    write_jsonl_file(&d, &dets);
    write_jsonl_file(&p, &poses);
    let s = |p: &std::path::Path| p.display().to_string();
    let (code, _, err) = cli(&["pseudo-gt", "--detections", &s(&d), "--poses", &s(&p), "--out", &s(&g)]);
    assert_eq!(code, 0, "{err}");
    (g, dets, poses)
}

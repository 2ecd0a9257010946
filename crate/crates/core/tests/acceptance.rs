//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p deid-eval --test acceptance`.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{
    brute_force_hull, cli, frobenius, matmul, random_rotation, raster_oracle, rng, star_polygon, stream_args,
    stub_pipeline, transpose, write_jsonl_file, write_pose_fixtures, write_stream_fixtures, ApInstance, INPAINT_OK,
    SWAP_OK,
};
use deid_eval::config::load_from_str;
use deid_eval::evaluate::{evaluate_faces, evaluate_videos};
use deid_eval::face_metrics::{compose_zyx, rotation_difference, EulerAngles};
use deid_eval::feature_model::write_face_stream;
use deid_eval::geometry::{convex_hull, rasterize_mask, Point, Polygon, BOUNDARY_TOL};
use deid_eval::pose_eval::{
    average_precision, build_pseudo_gt, coco_thresholds, evaluate_in_the_wild, evaluate_pose, recall_grid,
    DetectionInstance, EvalProtocol, PoseInstance, PseudoGtSet, Similarity, WildOptions, DEFAULT_CONF_THR,
    DEFAULT_POSE_NMS_THR, FACE_KEYPOINTS, RECALL_POINTS,
};
use deid_eval::report::{MetricReport, Scope};
use deid_eval::synthetic;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let el = start.elapsed();
    if el < limit {
        Ok(el)
    } else {
        Err(format!("took {el:.2?}, limit {limit:?}"))
    }
}

fn oks() -> EvalProtocol {
    EvalProtocol::coco(Similarity::Oks)
}

fn s(p: &std::path::Path) -> String {
    p.display().to_string()
}

fn ap_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let inst = ApInstance::random(seed);
        let gt = inst.gt_set();
        let det = average_precision(&gt, &inst.detections(), &EvalProtocol::coco(Similarity::Iou))
            .map_err(|e| format!("seed {seed}: {e}"))?
            .ap;
        worst = worst.max((det - inst.oracle_detection_ap()).abs());
        for exclude in [false, true] {
            let pose = evaluate_pose(&gt, &inst.preds, exclude, &oks()).map_err(|e| format!("seed {seed}: {e}"))?.ap;
            worst = worst.max((pose - inst.oracle_pose_ap(exclude)).abs());
        }
    }
    ensure!(worst <= 1e-9, "max |AP - oracle| = {worst:e}");
    let el = within(Duration::from_secs(10), start)?;
    Ok(format!("200 instances, max deviation {worst:e}, {el:.2?}"))
}

fn protocol_constants() -> Outcome {
    let expected = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
    ensure!(coco_thresholds() == expected, "thresholds {:?}", coco_thresholds());
    ensure!(oks().thresholds == expected, "protocol thresholds drifted");
    let grid = recall_grid();
    ensure!(RECALL_POINTS == 101 && grid.len() == 101, "recall grid has {} points", grid.len());
    ensure!(grid[0] == 0.0 && grid[50] == 0.5 && grid[100] == 1.0, "recall grid endpoints");
    ensure!(DEFAULT_CONF_THR == 0.3 && DEFAULT_POSE_NMS_THR == 0.9, "pseudo-GT defaults drifted");
    let cfg = load_from_str(None, None, &[]).map_err(|e| e.to_string())?.config;
    ensure!(cfg.pose.conf_thr == 0.3 && cfg.pairing.iou_thr == 0.3, "built-in config drifted");

    // A box scored exactly 0.3 is dropped, the next float up is kept.
    let (mut dets, poses) = synthetic::pose_scene(4, 3, 9);
    for (i, d) in dets.iter_mut().enumerate() {
        d.score = if i % 2 == 0 { 0.3 } else { f64::from_bits(0.3f64.to_bits() + 1) };
    }
    let gt = build_pseudo_gt(&dets, &poses, DEFAULT_CONF_THR, 1.0, &oks()).map_err(|e| e.to_string())?;
    ensure!(gt.provenance.above_conf == dets.len() / 2, "strict threshold kept {}", gt.provenance.above_conf);

    // One exact prediction for two ground truths: precision 1 on 51 of 101 recall points.
    let half = &ApInstance::random(0).gt_in_eval_order();
    let two: Vec<PoseInstance> = half
        .iter()
        .take(1)
        .cloned()
        .chain(half.iter().take(1).cloned().map(|mut g| {
            g.image_id.push_str("-other");
            g
        }))
        .collect();
    let r = average_precision(&PseudoGtSet::from_instances(two.clone()), &two[..1], &oks()).map_err(|e| e.to_string())?;
    ensure!((r.ap - 100.0 * 51.0 / 101.0).abs() < 1e-12, "half-recall AP {}", r.ap);
    Ok("thresholds 0.50:0.05:0.95, 101 recall points, conf_thr > 0.3 strict".into())
}

fn dets_of(poses: &[PoseInstance]) -> Vec<DetectionInstance> {
    poses
        .iter()
        .map(|p| DetectionInstance { image_id: p.image_id.clone(), id: p.id, bbox: p.bbox, score: p.score })
        .collect()
}

fn self_evaluation() -> Outcome {
    for seed in 0..5 {
        let (dets, poses) = synthetic::pose_scene(30, 4, seed);
        let gt = build_pseudo_gt(&dets, &poses, 0.3, 0.9, &oks()).map_err(|e| e.to_string())?;
        let kept: Vec<PoseInstance> = gt.instances().cloned().collect();
        let pose = evaluate_pose(&gt, &kept, false, &oks()).map_err(|e| e.to_string())?.ap;
        let det = average_precision(&gt, &dets_of(&kept), &EvalProtocol::coco(Similarity::Iou))
            .map_err(|e| e.to_string())?
            .ap;
        let nms = WildOptions { pred_pose_nms: Some(0.9), ..WildOptions::default() };
        let wild = evaluate_in_the_wild(&gt, &dets, &poses, &nms, &oks()).map_err(|e| e.to_string())?.ap;
        ensure!(pose == 100.0 && det == 100.0 && wild == 100.0, "seed {seed}: pose {pose} det {det} wild {wild}");

        let mut moved = kept.clone();
        for p in &mut moved {
            for k in FACE_KEYPOINTS {
                p.keypoints[k][0] += 250.0;
                p.keypoints[k][1] -= 120.0;
            }
        }
        let without = evaluate_pose(&gt, &moved, true, &oks()).map_err(|e| e.to_string())?.ap;
        ensure!(without == 100.0, "seed {seed}: face-excluded AP {without}");
    }
    Ok("pose, detection and pipeline self-AP 100.0; face-excluded 100.0".into())
}

fn headline(report: &MetricReport, metric: &str) -> Result<f64, String> {
    report
        .metrics
        .iter()
        .find(|e| e.metric == metric && matches!(e.scope, Scope::Frame | Scope::Video))
        .and_then(|e| e.mean)
        .ok_or_else(|| format!("no {metric}"))
}

fn metric_identities() -> Outcome {
    let loaded = load_from_str(None, None, &[]).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for seed in 0..3 {
        let s = synthetic::anonymize(&synthetic::original_stream(&format!("v{seed}"), 40, seed), 0.7, seed + 10);
        pairs.push((s.clone(), s));
    }
    let face = evaluate_faces(&pairs, &loaded, 1, false).map_err(|e| e.to_string())?;
    for (metric, want) in [
        ("identity_cos_dist", 0.0),
        ("gender_match", 1.0),
        ("race_match", 1.0),
        ("emotion_match", 1.0),
        ("gaze_diff", 0.0),
        ("eye_openness_diff", 0.0),
        ("mouth_openness_diff", 0.0),
        ("angle_x_diff", 0.0),
        ("angle_y_diff", 0.0),
        ("angle_z_diff", 0.0),
    ] {
        let v = headline(&face, metric)?;
        ensure!((v - want).abs() <= 1e-12, "{metric} = {v}");
    }
    let video = evaluate_videos(&pairs, &loaded, 1, false).map_err(|e| e.to_string())?;
    let corr = headline(&video, "landmark_correlation")?;
    ensure!((corr - 1.0).abs() <= 1e-12, "landmark_correlation = {corr}");
    let (o, a) = (headline(&video, "original_identity_variance")?, headline(&video, "anonymized_identity_variance")?);
    ensure!(o == a && o > 0.0, "identity variances {o} vs {a}");

    // Constant descriptors have zero variance.
    let mut constant = pairs[0].0.clone();
    let d0 = constant.frames.iter().flat_map(|f| &f.faces).find_map(|r| r.descriptor.clone());
    for r in constant.frames.iter_mut().flat_map(|f| &mut f.faces) {
        r.descriptor = d0.clone();
    }
    let v = evaluate_videos(&[(constant.clone(), constant)], &loaded, 1, false).map_err(|e| e.to_string())?;
    let z = headline(&v, "original_identity_variance")?;
    ensure!(z.abs() <= 1e-12, "constant-descriptor variance {z}");
    Ok("self-paired streams: distances 0, ratios 1, correlation 1, variances equal".into())
}

fn geometry_oracles() -> Outcome {
    let start = Instant::now();
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        // Every other set lies on a coarse integer grid to force collinear and duplicate points.
        let pts: Vec<Point> = (0..200)
            .map(|_| {
                if seed % 2 == 0 {
                    Point::new(r.random_range(-500.0..500.0), r.random_range(-500.0..500.0))
                } else {
                    Point::new(r.random_range(0..20) as f64, r.random_range(0..20) as f64)
                }
            })
            .collect();
        let hull = convex_hull(&pts).map_err(|e| format!("set {seed}: {e}"))?;
        ensure!(hull.vertices() == &brute_force_hull(&pts)[..], "hull set {seed} differs from oracle");
    }
    let mut polys = 0;
    let mut seed = 0u64;
    while polys < 50 {
        let mut r = rng(5000 + seed);
        seed += 1;
        let n = r.random_range(3..16);
        let c = Point::new(r.random_range(8.0..56.0), r.random_range(8.0..56.0));
        let radius = r.random_range(3.0..45.0);
        let poly = star_polygon(&mut r, c, radius, n);
        if poly.len() < 3 {
            continue;
        }
        let mask = rasterize_mask(&Polygon::new(poly.clone()).map_err(|e| e.to_string())?, 64, 64)
            .map_err(|e| e.to_string())?;
        ensure!(mask.bits() == &raster_oracle(&poly, 64, 64, BOUNDARY_TOL)[..], "polygon seed {} differs", seed - 1);
        polys += 1;
    }
    let el = within(Duration::from_secs(20), start)?;
    Ok(format!("100 hulls of 200 points, 50 polygons on 64x64, {el:.2?}"))
}

fn rotation_decomposition() -> Outcome {
    let mut r = rng(77);
    let (mut worst, mut near_gimbal) = (0.0f64, 0);
    for i in 0..1000 {
        let (ro, ra) = if i % 5 == 0 {
            let ra = random_rotation(&mut r);
            let eps = r.random_range(0.0..1e-3) * if r.random_bool(0.5) { 1.0 } else { 1e-5 };
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let d = compose_zyx(EulerAngles { x: r.random_range(-PI..PI), y: sign * (FRAC_PI_2 - eps), z: r.random_range(-PI..PI) });
            (matmul(&d, &ra), ra)
        } else {
            (random_rotation(&mut r), random_rotation(&mut r))
        };
        let delta = matmul(&ro, &transpose(&ra));
        if delta[2][0].abs() > 1.0 - 1e-6 {
            near_gimbal += 1;
        }
        worst = worst.max(frobenius(&compose_zyx(rotation_difference(&ro, &ra)), &delta));
    }
    ensure!(near_gimbal >= 150, "only {near_gimbal} near-gimbal pairs");
    ensure!(worst < 1e-9, "max Frobenius error {worst:e}");
    Ok(format!("1000 pairs ({near_gimbal} near gimbal), max Frobenius error {worst:e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pairs = write_stream_fixtures(dir.path(), 100, 2024);
    let (gt, _, _) = write_pose_fixtures(dir.path(), 40, 2025);
    let gt_set = deid_eval::pose_eval::read_pseudo_gt(std::fs::File::open(&gt).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (anon_dets, anon_poses) = synthetic::degrade(
        &dets_of(&gt_set.instances().cloned().collect::<Vec<_>>()),
        &gt_set.instances().cloned().collect::<Vec<_>>(),
        2.0,
        6.0,
        0.1,
        7,
    );
    let preds = dir.path().join("anon.poses.jsonl");
    write_jsonl_file(&preds, &anon_poses);
    ensure!(anon_dets.len() == anon_poses.len(), "degraded fixture mismatch");

    let mut runs: Vec<(String, Vec<String>)> = Vec::new();
    for sub in ["eval-face", "eval-video"] {
        let mut args = vec![sub.to_owned()];
        args.extend(stream_args(&pairs));
        args.push("--per-video".into());
        runs.push((sub.into(), args));
    }
    runs.push(("eval-pose".into(), vec!["eval-pose".into(), "--gt".into(), s(&gt), "--poses".into(), s(&preds)]));
    for (name, args) in &runs {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let (c1, a, e1) = cli(&argv);
        let (c2, b, _) = cli(&argv);
        ensure!(c1 == 0 && c2 == 0, "{name} failed: {e1}");
        ensure!(a == b && !a.is_empty(), "{name} output differs between runs");
    }
    Ok("eval-face, eval-video, eval-pose byte-identical over 300 frames".into())
}

fn orchestrator_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pipeline = stub_pipeline(dir.path(), INPAINT_OK, SWAP_OK);
    let mut stream = synthetic::original_stream("video00", 10, 3);
    let full = dir.path().join("full.jsonl");
    write_face_stream(&stream, std::fs::File::create(&full).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    synthetic::remove_faces(&mut stream, &[4, 5]);
    let holes = dir.path().join("holes.jsonl");
    write_face_stream(&stream, std::fs::File::create(&holes).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    for (input, expected) in [(&full, serde_json::json!([])), (&holes, serde_json::json!([4, 5]))] {
        let plan = dir.path().join("plan.json");
        let (code, _, err) = cli(&["plan", "--pipeline", &s(&pipeline), "--stream", &s(input), "--out", &s(&plan)]);
        ensure!(code == 0, "plan failed: {err}");
        let planned: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&plan).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(planned["obscure_frames"] == expected, "obscure_frames {}", planned["obscure_frames"]);
        let (code, out, err) = cli(&["execute", "--plan", &s(&plan)]);
        ensure!(code == 0, "execute exited {code}: {err}");
        let rec: serde_json::Value = serde_json::from_str(&out).map_err(|e| e.to_string())?;
        let names: Vec<&str> = rec["stages"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap_or("")).collect();
        ensure!(rec["success"] == true && names == ["mask", "inpaint", "faceswap"], "record {rec}");
    }
    Ok("3-stage success; frames 4-5 without faces give obscure_frames [4, 5]".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("AP oracle equivalence", ap_oracle_equivalence),
        ("Protocol constants", protocol_constants),
        ("Self-evaluation identities", self_evaluation),
        ("Metric identities", metric_identities),
        ("Geometry oracles", geometry_oracles),
        ("Rotation decomposition", rotation_decomposition),
        ("Determinism", determinism),
        ("Orchestrator contract", orchestrator_contract),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    let total = start.elapsed();
    if total < Duration::from_secs(60) {
        println!("PASS  Suite runtime: {total:.2?} (limit 60s)");
    } else {
        failed += 1;
        println!("FAIL  Suite runtime: {total:.2?} (limit 60s)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

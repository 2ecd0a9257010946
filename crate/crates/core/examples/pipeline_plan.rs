//! Plans and executes the three-stage anonymization pipeline (mask, inpaint,
//! face swap) against stub backends. The stubs are shell scripts that touch
//! their output file, so the example only needs `sh`.
//!
//! ```text
//! cargo run --example pipeline_plan
//! ```

use std::fs;

use deid_eval::orchestrator::{execute_plan, plan_pipeline, sample_frames_uniform, PipelineConfig};
use deid_eval::synthetic;

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let stub = dir.path().join("stub.sh");
    // Last argument is the output path.
    fs::write(&stub, "#!/bin/sh\nfor a; do out=$a; done\necho \"$@\" >&2\ntouch \"$out\"\n").unwrap();

    let config = PipelineConfig::from_toml(&format!(
        r#"
inpaint_cmd = ["sh", "{stub}", "--image", "{{input}}", "--frame", "{{frame}}", "--mask", "{{mask}}",
               "--prompt", "{{prompt}}", "--strength", "{{param.strength}}", "{{output}}"]
faceswap_cmd = ["sh", "{stub}", "--video", "{{input}}", "--face", "{{identity}}", "--obscure", "{{obscure}}", "{{output}}"]
video = "{video}"
work_dir = "{work}"
sample_count = 5
mask_dilation = 4.0

[params]
strength = "0.75"
"#,
        stub = stub.display(),
        video = dir.path().join("input.mp4").display(),
        work = dir.path().display(),
    ))
    .expect("valid pipeline config");

    let mut stream = synthetic::original_stream("demo", 40, 3);
    synthetic::remove_faces(&mut stream, &[0, 1, 17]);

    let plan = plan_pipeline(&config, &stream).expect("plannable stream");
    println!(
        "reference frame {} ({:?} mask, {} hull vertices)",
        plan.reference_frame_idx,
        plan.mask_source,
        plan.mask_polygon.len()
    );
    println!("frames to obscure: {:?}", plan.obscure_frames);
    println!("evaluation frames: {:?}", plan.sample_frames);
    for stage in &plan.stages {
        println!("{:<9} {}", stage.name.to_string(), stage.argv.join(" "));
    }

    let record = execute_plan(&plan);
    for s in &record.stages {
        println!("{:<9} exit {:?} in {:.1} ms, failure {:?}", s.name.to_string(), s.exit_code, s.duration_ms, s.failure);
    }
    println!("success: {}", record.success);
    println!("mask written: {} bytes", fs::metadata(&plan.mask_path).unwrap().len());

    println!("uniform samples of 100 frames, k = 1..4:");
    for k in 1..=4 {
        println!("  {k}: {:?}", sample_frames_uniform(100, k).unwrap());
    }
}

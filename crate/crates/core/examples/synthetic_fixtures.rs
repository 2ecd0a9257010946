//! Writes a synthetic fixture set to disk so the `deid-eval` binary can be
//! tried without real footage: face streams for three videos, plus pose
//! detections for original and anonymized frames.
//!
//! ```text
//! cargo run --example synthetic_fixtures -- fixtures/
//! cargo run -- eval-face --original fixtures/video00.original.jsonl \
//!     --anonymized fixtures/video00.anonymized.jsonl --format markdown
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use deid_eval::feature_model::write_face_stream;
use deid_eval::pose_eval::write_jsonl;
use deid_eval::synthetic;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir)?;

    for (original, anonymized) in synthetic::fixture_set(100, 42) {
        for (role, stream) in [("original", &original), ("anonymized", &anonymized)] {
            let path = dir.join(format!("{}.{role}.jsonl", stream.video_id()));
            write_face_stream(stream, BufWriter::new(File::create(&path)?))?;
            println!("{} ({} frames)", path.display(), stream.frame_count());
        }
    }

    let (dets, poses) = synthetic::pose_scene(50, 3, 42);
    let (anon_dets, anon_poses) = synthetic::degrade(&dets, &poses, 2.0, 6.0, 0.05, 43);
    for (name, n) in [
        ("original.detections.jsonl", write(&dir, "original.detections.jsonl", &dets)?),
        ("original.poses.jsonl", write(&dir, "original.poses.jsonl", &poses)?),
        ("anonymized.detections.jsonl", write(&dir, "anonymized.detections.jsonl", &anon_dets)?),
        ("anonymized.poses.jsonl", write(&dir, "anonymized.poses.jsonl", &anon_poses)?),
    ] {
        println!("{} ({n} instances)", dir.join(name).display());
    }
    Ok(())
}

fn write<T: serde::Serialize>(dir: &std::path::Path, name: &str, items: &[T]) -> std::io::Result<usize> {
    write_jsonl(items, BufWriter::new(File::create(dir.join(name))?))?;
    Ok(items.len())
}

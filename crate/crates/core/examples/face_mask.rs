//! Builds the inpainting mask of a synthetic face: convex hull of the 98
//! landmarks, rasterized at pixel centers and written as a binary PGM. Also
//! prints the eye and mouth openness ratios of the same landmarks.
//!
//! ```text
//! cargo run --example face_mask [OUT.pgm]
//! ```

use deid_eval::geometry::{convex_hull, mask_to_pgm_bytes, openness_ratio, rasterize_mask, OpennessPresets};
use deid_eval::synthetic;

fn main() {
    let stream = synthetic::original_stream("demo", 1, 7);
    let face = &stream.frames[0].faces[0];
    let landmarks = face.landmarks.as_ref().expect("synthetic faces carry landmarks");

    let hull = convex_hull(landmarks).expect("98 landmarks span an area");
    println!("hull: {} of {} landmarks, area {:.1} px²", hull.vertices().len(), landmarks.len(), hull.signed_area());

    let (w, h) = (stream.header.width as usize, stream.header.height as usize);
    let mask = rasterize_mask(&hull, w, h).expect("positive frame size");
    println!("mask: {w}x{h}, {} pixels set", mask.count());

    let presets = OpennessPresets::wflw98();
    for (name, spec) in [("left eye", &presets.left_eye), ("right eye", &presets.right_eye), ("mouth", &presets.mouth)] {
        println!("{name} openness: {:.4}", openness_ratio(landmarks, spec).unwrap());
    }

    let bytes = mask_to_pgm_bytes(&mask);
    match std::env::args().nth(1) {
        Some(path) => {
            std::fs::write(&path, &bytes).expect("writable output path");
            println!("wrote {path} ({} bytes)", bytes.len());
        }
        None => println!("PGM size: {} bytes (pass a path to write it)", bytes.len()),
    }
}

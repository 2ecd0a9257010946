//! Face- and video-level reports over the three-video synthetic fixture set,
//! emitted as JSON, CSV and a markdown table.
//!
//! ```text
//! cargo run --example report_formats
//! ```

use deid_eval::config;
use deid_eval::evaluate::{evaluate_faces, evaluate_videos};
use deid_eval::report::{emit_report, merge, ReportFormat};
use deid_eval::synthetic;

fn main() {
    let videos = synthetic::fixture_set(100, 3);
    let loaded = config::load_from_str(None, None, &[]).unwrap();
    let faces = evaluate_faces(&videos, &loaded, 2, false).unwrap();
    let temporal = evaluate_videos(&videos, &loaded, 2, false).unwrap();
    let report = merge(&[faces, temporal]).unwrap();

    print!("{}", String::from_utf8(emit_report(&report, ReportFormat::Markdown)).unwrap());
    println!();
    print!("{}", String::from_utf8(emit_report(&report, ReportFormat::Csv)).unwrap());
    println!();
    let json = emit_report(&report, ReportFormat::Json);
    println!("JSON report: {} bytes, {} provenance keys", json.len(), report.provenance.len());
}

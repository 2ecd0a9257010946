//! Aggregation of per-frame and per-video values into mean ± std tables, and
//! their JSON, CSV and markdown renderings.
//!
//! Two scopes are reported for frame-level metrics: `frame` pools every frame
//! of every video (the headline number), `video` averages each video first and
//! then aggregates the per-video means. Video-level metrics (one value per
//! video) only have the `video` scope. Standard deviations divide by n.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::Running;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("cannot aggregate an empty sample")]
    Empty,
    #[error("baseline AP must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("unknown report format {0:?} (expected json, csv or markdown)")]
    UnknownFormat(String),
    #[error("unknown scope {0:?}")]
    UnknownScope(String),
    #[error("cannot parse report: {0}")]
    Parse(String),
    #[error("reports disagree on provenance key {key:?}: {a:?} vs {b:?}")]
    ProvenanceConflict { key: String, a: String, b: String },
    #[error("metric {metric:?} at scope {scope} appears in more than one report")]
    Duplicate { metric: String, scope: Scope },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<Summary, ReportError> {
    let r: Running = values.iter().copied().collect();
    Ok(Summary {
        mean: r.mean().ok_or(ReportError::Empty)?,
        std: r.std().ok_or(ReportError::Empty)?,
        n: r.count(),
    })
}

/// Per-video means first, then [`aggregate`] over videos. Videos without
/// values are left out.
pub fn aggregate_videos(per_video: &[Vec<f64>]) -> Result<Summary, ReportError> {
    let means: Vec<f64> = per_video
        .iter()
        .filter(|v| !v.is_empty())
        .map(|v| aggregate(v).map(|s| s.mean))
        .collect::<Result<_, _>>()?;
    aggregate(&means)
}

/// `100 · method / baseline`.
pub fn relative_ap(method_ap: f64, baseline_ap: f64) -> Result<f64, ReportError> {
    if !(baseline_ap > 0.0) {
        return Err(ReportError::ZeroBaseline(baseline_ap));
    }
    Ok(100.0 * method_ap / baseline_ap)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    /// Pooled over all frames of all videos.
    Frame,
    /// Per-video values aggregated across videos.
    Video,
    /// A single video's own frames.
    PerVideo(String),
    /// A global quantity such as AP over all sampled frames.
    Global,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Frame => f.write_str("frame"),
            Scope::Video => f.write_str("video"),
            Scope::PerVideo(id) => write!(f, "video:{id}"),
            Scope::Global => f.write_str("global"),
        }
    }
}

impl FromStr for Scope {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s {
            "frame" => Ok(Scope::Frame),
            "video" => Ok(Scope::Video),
            "global" => Ok(Scope::Global),
            _ => match s.strip_prefix("video:") {
                Some(id) => Ok(Scope::PerVideo(id.to_owned())),
                None => Err(ReportError::UnknownScope(s.to_owned())),
            },
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One table row. `mean` and `std` are absent when every observation was skipped;
/// `std` is also absent for single global quantities such as AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub metric: String,
    pub scope: Scope,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Configuration hash, conventions and every configurable default in effect.
    pub provenance: BTreeMap<String, String>,
    pub metrics: Vec<MetricEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Display label and preferred direction of a known metric.
pub struct MetricInfo {
    pub key: &'static str,
    pub label: &'static str,
    pub direction: Option<Direction>,
    /// AP-like values shown with one decimal.
    pub percent: bool,
}

const fn info(key: &'static str, label: &'static str, direction: Option<Direction>, percent: bool) -> MetricInfo {
    MetricInfo {
        key,
        label,
        direction,
        percent,
    }
}

use Direction::{HigherIsBetter as Up, LowerIsBetter as Down};

pub const METRICS: &[MetricInfo] = &[
    info("identity_cos_dist", "Identity Cosine Distance", Some(Up), false),
    info("gender_match", "Same Gender Ratio", Some(Up), false),
    info("race_match", "Same Race Ratio", Some(Up), false),
    info("emotion_match", "Same Emotion Ratio", Some(Up), false),
    info("gaze_diff", "Gaze Difference", Some(Down), false),
    info("eye_openness_diff", "Eye Openness Difference", Some(Down), false),
    info("mouth_openness_diff", "Mouth Openness Difference", Some(Down), false),
    info("angle_x_diff", "X-axis Angle difference [rad]", Some(Down), false),
    info("angle_y_diff", "Y-axis Angle difference [rad]", Some(Down), false),
    info("angle_z_diff", "Z-axis Angle difference [rad]", Some(Down), false),
    info("original_identity_variance", "Original Identity Variance", None, false),
    info("anonymized_identity_variance", "Anonymized Identity Variance", Some(Down), false),
    info("landmark_correlation", "Correlation of landmarks", Some(Up), false),
    info("detection_ap", "detection AP", Some(Up), true),
    info("pose_ap", "pose AP", Some(Up), true),
    info("pose_ap_without_face", "AP w/o face", Some(Up), true),
    info("wild_ap", "in-the-wild AP", Some(Up), true),
    info("relative_detection_ap", "relative detection AP", Some(Up), true),
    info("relative_pose_ap", "relative pose AP", Some(Up), true),
    info("relative_pose_ap_without_face", "relative AP w/o face", Some(Up), true),
    info("relative_wild_ap", "relative in-the-wild AP", Some(Up), true),
];

pub fn metric_info(key: &str) -> Option<&'static MetricInfo> {
    METRICS.iter().find(|m| m.key == key)
}

fn display_label(key: &str) -> String {
    match metric_info(key) {
        Some(m) => match m.direction {
            Some(Up) => format!("{} ↑", m.label),
            Some(Down) => format!("{} ↓", m.label),
            None => m.label.to_owned(),
        },
        None => key.to_owned(),
    }
}

fn key_from_label(label: &str) -> String {
    let bare = label.trim_end_matches(['↑', '↓']).trim_end();
    METRICS
        .iter()
        .find(|m| m.label == bare)
        .map_or_else(|| bare.to_owned(), |m| m.key.to_owned())
}

/// Two significant digits, never fewer than two decimals.
pub fn format_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.2}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (1 - magnitude).clamp(2, 15) as usize;
    format!("{v:.decimals$}")
}

fn format_cell(metric: &str, mean: Option<f64>, std: Option<f64>) -> String {
    let percent = metric_info(metric).is_some_and(|m| m.percent);
    let f = |v: f64| if percent { format!("{v:.1}") } else { format_value(v) };
    match (mean, std) {
        (Some(m), Some(s)) => format!("{} ± {}", f(m), f(s)),
        (Some(m), None) => f(m),
        _ => "n/a".to_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(ReportError::UnknownFormat(s.to_owned())),
        }
    }
}

pub const CSV_HEADER: [&str; 6] = ["metric", "scope", "mean", "std", "n", "skipped"];
const MD_HEADER: &str = "| Metric | Scope | Value | n | skipped |\n|---|---|---|---:|---:|\n";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders `report`. Output is byte-stable for a given report. JSON and CSV
/// keep full precision; markdown rounds for display and omits provenance.
pub fn emit_report(report: &MetricReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for e in &report.metrics {
                w.write_record([
                    e.metric.clone(),
                    e.scope.to_string(),
                    opt(e.mean),
                    opt(e.std),
                    e.n.to_string(),
                    e.skipped.to_string(),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        ReportFormat::Markdown => {
            let mut out = String::from(MD_HEADER);
            for e in &report.metrics {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    display_label(&e.metric),
                    e.scope,
                    format_cell(&e.metric, e.mean, e.std),
                    e.n,
                    e.skipped
                ));
            }
            out.into_bytes()
        }
    }
}

pub fn parse_json(bytes: &[u8]) -> Result<MetricReport, ReportError> {
    serde_json::from_slice(bytes).map_err(|e| ReportError::Parse(e.to_string()))
}

/// Parses CSV output back into entries; provenance is not part of CSV.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<MetricEntry>, ReportError> {
    let perr = |m: String| ReportError::Parse(m);
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| perr(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(perr(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<Option<f64>, ReportError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| perr(format!("{s:?}: {e}")))
        }
    };
    let int = |s: &str| s.parse::<usize>().map_err(|e| perr(format!("{s:?}: {e}")));
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| perr(e.to_string()))?;
            Ok(MetricEntry {
                metric: rec[0].to_owned(),
                scope: rec[1].parse()?,
                mean: num(&rec[2])?,
                std: num(&rec[3])?,
                n: int(&rec[4])?,
                skipped: int(&rec[5])?,
            })
        })
        .collect()
}

/// Parses markdown output back into entries. Values come back as displayed,
/// i.e. rounded.
pub fn parse_markdown(bytes: &[u8]) -> Result<Vec<MetricEntry>, ReportError> {
    let perr = |m: String| ReportError::Parse(m);
    let text = std::str::from_utf8(bytes).map_err(|e| perr(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != MD_HEADER.lines().next() || lines.next() != MD_HEADER.lines().nth(1) {
        return Err(perr("missing markdown table header".into()));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| perr(format!("{s:?}: {e}")));
    lines
        .map(|line| {
            let cells: Vec<&str> = line.trim().trim_matches('|').split('|').map(str::trim).collect();
            if cells.len() != 5 {
                return Err(perr(format!("row {line:?} has {} cells", cells.len())));
            }
            let (mean, std) = match cells[2] {
                "n/a" => (None, None),
                v => match v.split_once('±') {
                    Some((m, s)) => (Some(num(m)?), Some(num(s)?)),
                    None => (Some(num(v)?), None),
                },
            };
            Ok(MetricEntry {
                metric: key_from_label(cells[0]),
                scope: cells[1].parse()?,
                mean,
                std,
                n: cells[3].parse().map_err(|e| perr(format!("{:?}: {e}", cells[3])))?,
                skipped: cells[4].parse().map_err(|e| perr(format!("{:?}: {e}", cells[4])))?,
            })
        })
        .collect()
}

/// The entries as markdown would show them, for comparing against [`parse_markdown`].
pub fn displayed_entries(report: &MetricReport) -> Vec<MetricEntry> {
    report
        .metrics
        .iter()
        .map(|e| {
            let shown = format_cell(&e.metric, e.mean, e.std);
            let (mean, std) = match shown.split_once(" ± ") {
                Some((m, s)) => (m.parse().ok(), s.parse().ok()),
                None => (shown.parse().ok(), None),
            };
            MetricEntry {
                mean,
                std,
                ..e.clone()
            }
        })
        .collect()
}

/// Concatenates partial reports. Provenance keys must agree; a metric may
/// appear at a given scope in only one report.
pub fn merge(reports: &[MetricReport]) -> Result<MetricReport, ReportError> {
    let mut out = MetricReport::default();
    let mut seen = std::collections::BTreeSet::new();
    for r in reports {
        for (k, v) in &r.provenance {
            match out.provenance.get(k) {
                Some(prev) if prev != v => {
                    return Err(ReportError::ProvenanceConflict {
                        key: k.clone(),
                        a: prev.clone(),
                        b: v.clone(),
                    })
                }
                _ => {
                    out.provenance.insert(k.clone(), v.clone());
                }
            }
        }
        for e in &r.metrics {
            if !seen.insert((e.metric.clone(), e.scope.clone())) {
                return Err(ReportError::Duplicate {
                    metric: e.metric.clone(),
                    scope: e.scope.clone(),
                });
            }
            out.metrics.push(e.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Frame,
    Video,
}

#[derive(Debug, Clone)]
struct Series {
    level: Level,
    /// Observations per video in insertion order; `None` marks a skip.
    videos: Vec<(String, Vec<Option<f64>>)>,
}

/// Collects observations per metric and video, then builds report rows.
///
/// Metrics and videos keep their first-seen order, so the output does not
/// depend on hash ordering.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    series: Vec<(String, Series)>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, metric: &str, level: Level, video: &str) -> &mut Vec<Option<f64>> {
        let si = match self.series.iter().position(|(m, _)| m == metric) {
            Some(i) => i,
            None => {
                self.series.push((metric.to_owned(), Series { level, videos: Vec::new() }));
                self.series.len() - 1
            }
        };
        let s = &mut self.series[si].1;
        assert_eq!(s.level, level, "metric {metric} recorded at two levels");
        let vi = match s.videos.iter().position(|(v, _)| v == video) {
            Some(i) => i,
            None => {
                s.videos.push((video.to_owned(), Vec::new()));
                s.videos.len() - 1
            }
        };
        &mut s.videos[vi].1
    }

    /// One per-frame observation; `None` counts as skipped.
    pub fn add_frame(&mut self, video: &str, metric: &str, value: Option<f64>) {
        self.slot(metric, Level::Frame, video).push(value);
    }

    /// One per-video observation; `None` counts as skipped.
    pub fn add_video(&mut self, video: &str, metric: &str, value: Option<f64>) {
        self.slot(metric, Level::Video, video).push(value);
    }

    /// Appends another accumulator's observations (e.g. from a parallel worker).
    pub fn extend(&mut self, other: MetricAccumulator) {
        for (metric, s) in other.series {
            for (video, values) in s.videos {
                self.slot(&metric, s.level, &video).extend(values);
            }
        }
    }

    /// Rows for every metric: `frame` and `video` scopes for frame-level
    /// metrics, `video` only for video-level ones, plus one `video:<id>` row
    /// per video when `per_video` is set.
    pub fn entries(&self, per_video: bool) -> Vec<MetricEntry> {
        let mut out = Vec::new();
        for (metric, s) in &self.series {
            let present: Vec<Vec<f64>> = s.videos.iter().map(|(_, v)| v.iter().flatten().copied().collect()).collect();
            let skipped_frames: usize = s.videos.iter().map(|(_, v)| v.iter().filter(|x| x.is_none()).count()).sum();
            let entry = |scope: Scope, summary: Option<Summary>, n: usize, skipped: usize| MetricEntry {
                metric: metric.clone(),
                scope,
                mean: summary.map(|s| s.mean),
                std: summary.map(|s| s.std),
                n,
                skipped,
            };
            let videos_with_values = present.iter().filter(|v| !v.is_empty()).count();
            if s.level == Level::Frame {
                let pooled: Vec<f64> = present.iter().flatten().copied().collect();
                out.push(entry(Scope::Frame, aggregate(&pooled).ok(), pooled.len(), skipped_frames));
            }
            out.push(entry(
                Scope::Video,
                aggregate_videos(&present).ok(),
                videos_with_values,
                s.videos.len() - videos_with_values,
            ));
            if per_video {
                for ((video, values), p) in s.videos.iter().zip(&present) {
                    let skipped = values.len() - p.len();
                    out.push(entry(Scope::PerVideo(video.clone()), aggregate(p).ok(), p.len(), skipped));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[1.0, 1.0, 1.0]).unwrap(), Summary { mean: 1.0, std: 0.0, n: 3 });
        assert_eq!(aggregate(&[0.0, 2.0]).unwrap(), Summary { mean: 1.0, std: 1.0, n: 2 });
        assert_eq!(aggregate(&[]), Err(ReportError::Empty));
    }

    #[test]
    fn relative_ap_examples() {
        assert_eq!(relative_ap(90.0, 90.0).unwrap(), 100.0);
        assert_eq!(relative_ap(0.0, 90.0).unwrap(), 0.0);
        assert_eq!(relative_ap(45.0, 90.0).unwrap(), 50.0);
        assert!(relative_ap(1.0, 0.0).is_err());
    }

    #[test]
    fn display_rounding() {
        assert_eq!(format_value(0.11), "0.11");
        assert_eq!(format_value(0.094), "0.094");
        assert_eq!(format_value(0.0163), "0.016");
        assert_eq!(format_value(1.0), "1.00");
        assert_eq!(format_value(0.0), "0.00");
        assert_eq!(format_value(12.345), "12.35");
    }

    #[test]
    fn markdown_row_layout() {
        let report = MetricReport {
            provenance: BTreeMap::new(),
            metrics: vec![MetricEntry {
                metric: "identity_cos_dist".into(),
                scope: Scope::Frame,
                mean: Some(0.11),
                std: Some(0.18),
                n: 10,
                skipped: 0,
            }],
        };
        let md = String::from_utf8(emit_report(&report, ReportFormat::Markdown)).unwrap();
        assert!(md.contains("| Identity Cosine Distance ↑ | frame | 0.11 ± 0.18 | 10 | 0 |"), "{md}");
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = MetricReport::default();
        assert_eq!(emit_report(&r, ReportFormat::Csv), b"metric,scope,mean,std,n,skipped\n");
        assert_eq!(emit_report(&r, ReportFormat::Markdown), MD_HEADER.as_bytes());
        assert!(parse_markdown(MD_HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn unknown_format() {
        assert_eq!("xml".parse::<ReportFormat>(), Err(ReportError::UnknownFormat("xml".into())));
    }

    #[test]
    fn accumulator_scopes() {
        let mut acc = MetricAccumulator::new();
        for v in [1.0, 3.0] {
            acc.add_frame("a", "gaze_diff", Some(v));
        }
        acc.add_frame("a", "gaze_diff", None);
        acc.add_frame("b", "gaze_diff", Some(8.0));
        acc.add_video("a", "landmark_correlation", Some(0.5));
        acc.add_video("b", "landmark_correlation", None);
        let e = acc.entries(true);
        let frame = &e[0];
        assert_eq!((frame.scope.clone(), frame.n, frame.skipped), (Scope::Frame, 3, 1));
        assert_eq!(frame.mean, Some(4.0));
        let video = &e[1];
        assert_eq!(video.scope, Scope::Video);
        assert_eq!(video.mean, Some(5.0));
        assert_eq!(video.std, Some(3.0));
        assert_eq!(e[2].scope, Scope::PerVideo("a".into()));
        let corr: Vec<_> = e.iter().filter(|x| x.metric == "landmark_correlation").collect();
        assert_eq!(corr[0].scope, Scope::Video);
        assert_eq!((corr[0].n, corr[0].skipped), (1, 1));
    }

    #[test]
    fn merge_rejects_conflicts() {
        let mut a = MetricReport::default();
        a.provenance.insert("k".into(), "1".into());
        let mut b = a.clone();
        assert_eq!(merge(&[a.clone(), b.clone()]).unwrap().provenance.len(), 1);
        b.provenance.insert("k".into(), "2".into());
        assert!(matches!(merge(&[a, b]), Err(ReportError::ProvenanceConflict { .. })));
    }
}

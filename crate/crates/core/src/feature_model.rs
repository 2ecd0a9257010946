//! Per-frame face observations: record types, the newline-delimited stream
//! format, validation on ingest, and original/anonymized pairing.
//!
//! A face-stream file is UTF-8 JSON Lines. The first line is a header:
//!
//! ```text
//! {"video_id":"v01","role":"original","width":640,"height":480,"frame_count":300}
//! ```
//!
//! Every following line is one face observation (a [`FaceRecord`]). Several
//! faces in one frame are written on consecutive lines. A frame that was
//! processed but has no face may be recorded explicitly with an empty marker,
//! `{"video_id":"v01","frame_idx":7,"empty":true}`; frames with no line at all
//! are treated the same way.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::pose_eval::iou;

pub const LANDMARK_COUNT: usize = 98;
pub const DESCRIPTOR_DIM: usize = 512;

/// Tolerance for RᵀR = I and det R = 1 on ingest.
pub const ROTATION_TOL: f64 = 1e-5;
/// Descriptors whose norm is within this of 1 are kept as written.
pub const DESCRIPTOR_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("stream is empty: missing header line")]
    MissingHeader,
    #[error("line {line}: bad header: {msg}")]
    Header { line: usize, msg: String },
    #[error("line {line}: malformed record: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: schema violation: {msg}")]
    Schema { line: usize, msg: String },
    #[error("line {line}: landmark cardinality: expected {LANDMARK_COUNT}, found {found}")]
    LandmarkCardinality { line: usize, found: usize },
    #[error("line {line}: descriptor cardinality: expected {DESCRIPTOR_DIM}, found {found}")]
    DescriptorCardinality { line: usize, found: usize },
    #[error("line {line}: frame_idx {frame_idx} after {previous} is not monotone")]
    NonMonotone { line: usize, frame_idx: u32, previous: u32 },
    #[error("line {line}: frame_idx {frame_idx} outside [0, {frame_count})")]
    FrameOutOfRange { line: usize, frame_idx: u32, frame_count: u32 },
    #[error("line {line}: video_id {found:?} differs from header video_id {expected:?}")]
    VideoIdMismatch { line: usize, expected: String, found: String },
    #[error("line {line}: head_rot is not a rotation: {msg}")]
    InvalidRotation { line: usize, msg: String },
    #[error("stream role is {found}, expected {expected}")]
    RoleMismatch { expected: Role, found: Role },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Original,
    Anonymized,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Original => "original",
            Role::Anonymized => "anonymized",
        })
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                let lowered = s.trim().to_lowercase().replace('_', " ");
                match lowered.as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("{s:?} is not a valid {} label", stringify!($name).to_lowercase())),
                }
            }
        }

        impl TryFrom<String> for $name {
            type Error = String;

            fn try_from(s: String) -> Result<Self, String> {
                s.parse()
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.as_str().to_owned()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum!(Gender {
    Male => "male",
    Female => "female",
});

label_enum!(Race {
    Indian => "indian",
    Asian => "asian",
    LatinoHispanic => "latino hispanic",
    Black => "black",
    MiddleEastern => "middle eastern",
    White => "white",
});

label_enum!(Emotion {
    Sad => "sad",
    Angry => "angry",
    Surprise => "surprise",
    Fear => "fear",
    Happy => "happy",
    Disgust => "disgust",
    Neutral => "neutral",
});

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<Race>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
}

/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Checks RᵀR = I and det R = +1, both within `tol`.
pub fn check_rotation(r: &Mat3, tol: f64) -> Result<(), String> {
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let rtr = mat_mul(&transpose(r), r);
    for (i, row) in rtr.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            if (v - expected).abs() > tol {
                return Err(format!("RᵀR[{i}][{j}] = {v}"));
            }
        }
    }
    let det = determinant(r);
    if (det - 1.0).abs() > tol {
        return Err(format!("det = {det}"));
    }
    Ok(())
}

/// One face observed in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub video_id: String,
    pub frame_idx: u32,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub det_score: f64,
    /// Unit-norm identity embedding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<Point>>,
    /// World-to-camera head rotation, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_rot: Option<Mat3>,
    /// Left-right and up-down gaze components in [-1, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Attributes>,
}

impl FaceRecord {
    pub fn bbox_area(&self) -> f64 {
        self.bbox[2] * self.bbox[3]
    }
}

/// Wire shape of a record line before validation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    video_id: Option<String>,
    frame_idx: Option<u32>,
    #[serde(default)]
    empty: bool,
    bbox: Option<[f64; 4]>,
    det_score: Option<f64>,
    descriptor: Option<Vec<f64>>,
    landmarks: Option<Vec<[f64; 2]>>,
    head_rot: Option<Mat3>,
    gaze: Option<[f64; 2]>,
    attributes: Option<RawAttributes>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttributes {
    gender: Option<String>,
    race: Option<String>,
    emotion: Option<String>,
}

impl RawAttributes {
    fn validate(self) -> Result<Attributes, String> {
        Ok(Attributes {
            gender: self.gender.map(|s| s.parse()).transpose()?,
            race: self.race.map(|s| s.parse()).transpose()?,
            emotion: self.emotion.map(|s| s.parse()).transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamHeader {
    pub video_id: String,
    pub role: Role,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_idx: u32,
    pub faces: Vec<FaceRecord>,
}

impl Frame {
    /// The face with the largest bbox area; earliest on ties.
    pub fn largest_face(&self) -> Option<&FaceRecord> {
        self.largest_face_where(|_| true)
    }

    pub fn largest_face_where(&self, pred: impl Fn(&FaceRecord) -> bool) -> Option<&FaceRecord> {
        self.faces
            .iter()
            .filter(|f| pred(f))
            .fold(None, |best: Option<&FaceRecord>, f| match best {
                Some(b) if b.bbox_area() >= f.bbox_area() => Some(b),
                _ => Some(f),
            })
    }
}

/// All face observations of one video, ordered by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFaceStream {
    pub header: StreamHeader,
    /// Strictly increasing `frame_idx`; a frame may carry an empty face list.
    pub frames: Vec<Frame>,
}

impl VideoFaceStream {
    pub fn video_id(&self) -> &str {
        &self.header.video_id
    }

    pub fn frame_count(&self) -> u32 {
        self.header.frame_count
    }

    pub fn frame(&self, frame_idx: u32) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&frame_idx, |f| f.frame_idx)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn faces(&self) -> impl Iterator<Item = &FaceRecord> {
        self.frames.iter().flat_map(|f| f.faces.iter())
    }

    /// Frame indices in `[0, frame_count)` that have at least one face.
    pub fn frames_with_faces(&self) -> Vec<u32> {
        self.frames
            .iter()
            .filter(|f| !f.faces.is_empty())
            .map(|f| f.frame_idx)
            .collect()
    }
}

/// Parses and validates a face stream.
///
/// Descriptors are re-normalized to unit length and gaze components are
/// clamped to [-1, 1]; all other violations are errors carrying the 1-based
/// line number.
pub fn parse_face_stream<R: BufRead>(input: R, expected_role: Role) -> Result<VideoFaceStream, ParseError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));

    let header = loop {
        match lines.next() {
            None => return Err(ParseError::MissingHeader),
            Some((_, Err(e))) => return Err(e.into()),
            Some((_, Ok(l))) if l.trim().is_empty() => continue,
            Some((line, Ok(l))) => {
                let header: StreamHeader =
                    serde_json::from_str(&l).map_err(|e| ParseError::Header { line, msg: e.to_string() })?;
                if header.video_id.is_empty() {
                    return Err(ParseError::Header { line, msg: "empty video_id".into() });
                }
                break header;
            }
        }
    };
    if header.role != expected_role {
        return Err(ParseError::RoleMismatch {
            expected: expected_role,
            found: header.role,
        });
    }

    let mut frames: Vec<Frame> = Vec::new();
    // Whether the last frame was opened by an explicit empty marker.
    let mut last_empty_marker = false;
    for (line, text) in lines {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawLine =
            serde_json::from_str(&text).map_err(|e| ParseError::Json { line, msg: e.to_string() })?;
        let schema = |msg: String| ParseError::Schema { line, msg };

        let video_id = raw.video_id.clone().ok_or_else(|| schema("missing field `video_id`".into()))?;
        if video_id != header.video_id {
            return Err(ParseError::VideoIdMismatch {
                line,
                expected: header.video_id.clone(),
                found: video_id,
            });
        }
        let frame_idx = raw.frame_idx.ok_or_else(|| schema("missing field `frame_idx`".into()))?;
        if frame_idx >= header.frame_count {
            return Err(ParseError::FrameOutOfRange {
                line,
                frame_idx,
                frame_count: header.frame_count,
            });
        }
        if let Some(last) = frames.last() {
            let same_frame_ok = frame_idx == last.frame_idx && !raw.empty && !last_empty_marker;
            if frame_idx < last.frame_idx || (frame_idx == last.frame_idx && !same_frame_ok) {
                return Err(ParseError::NonMonotone {
                    line,
                    frame_idx,
                    previous: last.frame_idx,
                });
            }
        }

        if raw.empty {
            let has_payload = raw.bbox.is_some()
                || raw.det_score.is_some()
                || raw.descriptor.is_some()
                || raw.landmarks.is_some()
                || raw.head_rot.is_some()
                || raw.gaze.is_some()
                || raw.attributes.is_some();
            if has_payload {
                return Err(schema("empty-frame marker carries face fields".into()));
            }
            frames.push(Frame { frame_idx, faces: Vec::new() });
            last_empty_marker = true;
            continue;
        }

        let record = validate_record(raw, video_id, frame_idx, line)?;
        match frames.last_mut() {
            Some(f) if f.frame_idx == frame_idx => f.faces.push(record),
            _ => frames.push(Frame {
                frame_idx,
                faces: vec![record],
            }),
        }
        last_empty_marker = false;
    }

    Ok(VideoFaceStream { header, frames })
}

fn validate_record(raw: RawLine, video_id: String, frame_idx: u32, line: usize) -> Result<FaceRecord, ParseError> {
    let schema = |msg: String| ParseError::Schema { line, msg };

    let bbox = raw.bbox.ok_or_else(|| schema("missing field `bbox`".into()))?;
    if bbox.iter().any(|v| !v.is_finite()) || bbox[2] <= 0.0 || bbox[3] <= 0.0 {
        return Err(schema(format!("bbox {bbox:?} must be finite with w > 0 and h > 0")));
    }
    let det_score = raw.det_score.ok_or_else(|| schema("missing field `det_score`".into()))?;
    if !(0.0..=1.0).contains(&det_score) {
        return Err(schema(format!("det_score {det_score} outside [0, 1]")));
    }

    let descriptor = match raw.descriptor {
        None => None,
        Some(v) if v.len() != DESCRIPTOR_DIM => {
            return Err(ParseError::DescriptorCardinality { line, found: v.len() });
        }
        Some(mut v) => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm < 1e-12 {
                return Err(schema(format!("descriptor norm {norm} cannot be normalized")));
            }
            // Already-unit vectors stay bit-identical so parse/write/parse is stable.
            if (norm - 1.0).abs() > DESCRIPTOR_NORM_TOL {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            Some(v)
        }
    };

    let landmarks = match raw.landmarks {
        None => None,
        Some(v) if v.len() != LANDMARK_COUNT => {
            return Err(ParseError::LandmarkCardinality { line, found: v.len() });
        }
        Some(v) => {
            if v.iter().flatten().any(|c| !c.is_finite()) {
                return Err(schema("non-finite landmark coordinate".into()));
            }
            Some(v.into_iter().map(Point::from).collect())
        }
    };

    if let Some(r) = &raw.head_rot {
        check_rotation(r, ROTATION_TOL).map_err(|msg| ParseError::InvalidRotation { line, msg })?;
    }

    let gaze = match raw.gaze {
        Some(g) if g.iter().any(|v| !v.is_finite()) => return Err(schema("non-finite gaze".into())),
        Some(g) => Some(g.map(|v| v.clamp(-1.0, 1.0))),
        None => None,
    };

    let attributes = raw.attributes.map(RawAttributes::validate).transpose().map_err(schema)?;

    Ok(FaceRecord {
        video_id,
        frame_idx,
        bbox,
        det_score,
        descriptor,
        landmarks,
        head_rot: raw.head_rot,
        gaze,
        attributes,
    })
}

#[derive(Serialize)]
struct EmptyMarker<'a> {
    video_id: &'a str,
    frame_idx: u32,
    empty: bool,
}

/// Writes a stream in the format [`parse_face_stream`] reads.
pub fn write_face_stream<W: Write>(stream: &VideoFaceStream, mut out: W) -> io::Result<()> {
    serde_json::to_writer(&mut out, &stream.header)?;
    out.write_all(b"\n")?;
    for frame in &stream.frames {
        if frame.faces.is_empty() {
            let marker = EmptyMarker {
                video_id: &stream.header.video_id,
                frame_idx: frame.frame_idx,
                empty: true,
            };
            serde_json::to_writer(&mut out, &marker)?;
            out.write_all(b"\n")?;
        }
        for face in &frame.faces {
            serde_json::to_writer(&mut out, face)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("video_id mismatch: original {original:?} vs anonymized {anonymized:?}")]
    VideoIdMismatch { original: String, anonymized: String },
    #[error("frame_count mismatch for {video_id:?}: original {original} vs anonymized {anonymized}")]
    FrameCountMismatch {
        video_id: String,
        original: u32,
        anonymized: u32,
    },
    #[error("iou threshold {0} outside (0, 1)")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoFaceOriginal,
    NoFaceAnonymized,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacePair {
    pub frame_idx: u32,
    pub original: FaceRecord,
    pub anonymized: FaceRecord,
    pub iou: f64,
}

/// Time-aligned original/anonymized faces of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedFrameStream {
    pub video_id: String,
    pub frame_count: u32,
    /// Ordered by frame; within a frame by descending IoU.
    pub pairs: Vec<FacePair>,
    pub skipped_frames: Vec<(u32, SkipReason)>,
}

impl PairedFrameStream {
    /// Number of frames where either side has at least one face.
    pub fn frames_considered(&self) -> usize {
        self.paired_frame_indices().len() + self.skipped_frames.len()
    }

    pub fn paired_frame_indices(&self) -> Vec<u32> {
        let mut idx: Vec<u32> = self.pairs.iter().map(|p| p.frame_idx).collect();
        idx.dedup();
        idx
    }

    /// The highest-IoU pair of every paired frame.
    pub fn primary_pairs(&self) -> impl Iterator<Item = &FacePair> {
        let mut last = None;
        self.pairs.iter().filter(move |p| {
            let first = last != Some(p.frame_idx);
            last = Some(p.frame_idx);
            first
        })
    }
}

/// Greedy IoU matching of faces between two streams of the same video.
///
/// Within each frame, all (original, anonymized) candidate pairs are taken in
/// descending IoU order (ties by original then anonymized position) and
/// accepted while both faces are unused and IoU ≥ `iou_thr`.
pub fn pair_streams(
    original: &VideoFaceStream,
    anonymized: &VideoFaceStream,
    iou_thr: f64,
) -> Result<PairedFrameStream, PairingError> {
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(PairingError::BadThreshold(iou_thr));
    }
    if original.video_id() != anonymized.video_id() {
        return Err(PairingError::VideoIdMismatch {
            original: original.video_id().to_owned(),
            anonymized: anonymized.video_id().to_owned(),
        });
    }
    if original.frame_count() != anonymized.frame_count() {
        return Err(PairingError::FrameCountMismatch {
            video_id: original.video_id().to_owned(),
            original: original.frame_count(),
            anonymized: anonymized.frame_count(),
        });
    }

    let mut pairs = Vec::new();
    let mut skipped_frames = Vec::new();
    let (mut oi, mut ai) = (0, 0);
    let empty: &[FaceRecord] = &[];
    loop {
        let of = original.frames.get(oi);
        let af = anonymized.frames.get(ai);
        let frame_idx = match (of, af) {
            (None, None) => break,
            (Some(o), None) => o.frame_idx,
            (None, Some(a)) => a.frame_idx,
            (Some(o), Some(a)) => o.frame_idx.min(a.frame_idx),
        };
        let o_faces = match of {
            Some(o) if o.frame_idx == frame_idx => {
                oi += 1;
                o.faces.as_slice()
            }
            _ => empty,
        };
        let a_faces = match af {
            Some(a) if a.frame_idx == frame_idx => {
                ai += 1;
                a.faces.as_slice()
            }
            _ => empty,
        };

        match (o_faces.is_empty(), a_faces.is_empty()) {
            (true, true) => continue,
            (false, true) => skipped_frames.push((frame_idx, SkipReason::NoFaceAnonymized)),
            (true, false) => skipped_frames.push((frame_idx, SkipReason::NoFaceOriginal)),
            (false, false) => {
                let matched = greedy_iou_match(
                    &o_faces.iter().map(|f| f.bbox).collect::<Vec<_>>(),
                    &a_faces.iter().map(|f| f.bbox).collect::<Vec<_>>(),
                    iou_thr,
                );
                if matched.is_empty() {
                    skipped_frames.push((frame_idx, SkipReason::NoMatch));
                }
                pairs.extend(matched.into_iter().map(|(i, j, v)| FacePair {
                    frame_idx,
                    original: o_faces[i].clone(),
                    anonymized: a_faces[j].clone(),
                    iou: v,
                }));
            }
        }
    }

    Ok(PairedFrameStream {
        video_id: original.video_id().to_owned(),
        frame_count: original.frame_count(),
        pairs,
        skipped_frames,
    })
}

/// Greedy descending-IoU assignment; returns `(i, j, iou)` in acceptance order.
pub fn greedy_iou_match(left: &[[f64; 4]], right: &[[f64; 4]], thr: f64) -> Vec<(usize, usize, f64)> {
    let mut candidates: Vec<(usize, usize, f64)> = left
        .iter()
        .enumerate()
        .flat_map(|(i, a)| right.iter().enumerate().map(move |(j, b)| (i, j, iou(a, b))))
        .filter(|&(_, _, v)| v >= thr)
        .collect();
    // Stable sort keeps (i, j) order among equal IoUs.
    candidates.sort_by(|x, y| y.2.total_cmp(&x.2));

    let mut used_l = vec![false; left.len()];
    let mut used_r = vec![false; right.len()];
    let mut out = Vec::new();
    for (i, j, v) in candidates {
        if !used_l[i] && !used_r[j] {
            used_l[i] = true;
            used_r[j] = true;
            out.push((i, j, v));
        }
    }
    out
}

//! Per-frame-pair attribute preservation metrics: identity distance, attribute
//! agreement, gaze, eye/mouth openness and head orientation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_model::{mat_mul, transpose, FacePair, FaceRecord, Mat3};
use crate::geometry::{openness_ratio, GeometryError, OpennessPresets, OpennessSpec, Point};

/// `hypot(ΔR₁₁, ΔR₂₁)` below which the decomposition is treated as gimbal-locked.
pub const GIMBAL_EPS: f64 = 1e-15;

pub const EULER_CONVENTION: &str = "intrinsic Z-Y-X (R = Rz·Ry·Rx)";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("descriptor dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `1 - v_o·v_a`, clamped to [0, 2].
pub fn identity_cosine_distance(v_o: &[f64], v_a: &[f64]) -> Result<f64, MetricError> {
    if v_o.len() != v_a.len() {
        return Err(MetricError::DimensionMismatch(v_o.len(), v_a.len()));
    }
    let dot: f64 = v_o.iter().zip(v_a).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Gender,
    Race,
    Emotion,
}

/// Hard top-1 label agreement; `None` when either side lacks the label.
pub fn attribute_match(original: &FaceRecord, anonymized: &FaceRecord, kind: AttributeKind) -> Option<bool> {
    let (o, a) = (original.attributes.as_ref()?, anonymized.attributes.as_ref()?);
    match kind {
        AttributeKind::Gender => Some(o.gender? == a.gender?),
        AttributeKind::Race => Some(o.race? == a.race?),
        AttributeKind::Emotion => Some(o.emotion? == a.emotion?),
    }
}

pub fn gaze_difference(g_o: [f64; 2], g_a: [f64; 2]) -> f64 {
    (g_o[0] - g_a[0]).hypot(g_o[1] - g_a[1])
}

/// Rotation angles in radians about the x, y and z axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EulerAngles {
    pub fn abs(self) -> Self {
        Self {
            x: self.x.abs(),
            y: self.y.abs(),
            z: self.z.abs(),
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// `Rz(z)·Ry(y)·Rx(x)`.
pub fn compose_zyx(angles: EulerAngles) -> Mat3 {
    mat_mul(&rot_z(angles.z), &mat_mul(&rot_y(angles.y), &rot_x(angles.x)))
}

/// Decomposes a rotation as `Rz(z)·Ry(y)·Rx(x)` with y in [-π/2, π/2].
///
/// z is read from the first column; x and y are then read from `Rz(z)ᵀ·R`,
/// which keeps the recomposition exact close to gimbal lock. At gimbal lock
/// z is fixed to 0 and x absorbs the whole in-plane rotation.
pub fn euler_zyx(r: &Mat3) -> EulerAngles {
    let z = if r[0][0].hypot(r[1][0]) < GIMBAL_EPS {
        0.0
    } else {
        r[1][0].atan2(r[0][0])
    };
    let (sz, cz) = z.sin_cos();
    // Rows of Rz(z)ᵀ·R.
    let m11 = cz * r[0][0] + sz * r[1][0];
    let m22 = -sz * r[0][1] + cz * r[1][1];
    let m23 = -sz * r[0][2] + cz * r[1][2];
    let m31 = r[2][0];
    EulerAngles {
        x: (-m23).atan2(m22),
        y: (-m31).atan2(m11),
        z,
    }
}

/// Signed Euler angles of `ΔR = R_o·R_aᵀ`.
pub fn rotation_difference(r_o: &Mat3, r_a: &Mat3) -> EulerAngles {
    euler_zyx(&mat_mul(r_o, &transpose(r_a)))
}

/// Mean of the left- and right-eye openness ratios.
pub fn eye_openness(landmarks: &[Point], presets: &OpennessPresets) -> Result<f64, GeometryError> {
    let left = openness_ratio(landmarks, &presets.left_eye)?;
    let right = openness_ratio(landmarks, &presets.right_eye)?;
    Ok((left + right) / 2.0)
}

pub fn openness_difference(original: &[Point], anonymized: &[Point], spec: &OpennessSpec) -> Result<f64, MetricError> {
    Ok((openness_ratio(original, spec)? - openness_ratio(anonymized, spec)?).abs())
}

#[derive(Debug, Clone)]
pub struct FaceMetricOptions {
    pub openness: OpennessPresets,
    /// Keep the sign of the Euler angle differences.
    pub signed_angles: bool,
}

impl Default for FaceMetricOptions {
    fn default() -> Self {
        Self {
            openness: OpennessPresets::wflw98(),
            signed_angles: false,
        }
    }
}

/// All per-frame metrics for one original/anonymized face pair. A field is
/// `None` when either record lacks the inputs it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePairMetrics {
    pub frame_idx: u32,
    pub identity_cos_dist: Option<f64>,
    pub gender_match: Option<bool>,
    pub race_match: Option<bool>,
    pub emotion_match: Option<bool>,
    pub gaze_diff: Option<f64>,
    pub eye_openness_diff: Option<f64>,
    pub mouth_openness_diff: Option<f64>,
    /// Angle differences about x, y, z (absolute unless signed angles were requested).
    pub angle_diff: Option<[f64; 3]>,
}

pub fn frame_pair_metrics(pair: &FacePair, opts: &FaceMetricOptions) -> FramePairMetrics {
    let (o, a) = (&pair.original, &pair.anonymized);
    let both = |f: fn(&FaceRecord) -> bool| f(o) && f(a);

    let identity_cos_dist = match (&o.descriptor, &a.descriptor) {
        (Some(vo), Some(va)) => identity_cosine_distance(vo, va).ok(),
        _ => None,
    };
    let gaze_diff = match (o.gaze, a.gaze) {
        (Some(go), Some(ga)) => Some(gaze_difference(go, ga)),
        _ => None,
    };

    let (mut eye_openness_diff, mut mouth_openness_diff) = (None, None);
    if both(|r| r.landmarks.is_some()) {
        let (lo, la) = (o.landmarks.as_deref().unwrap(), a.landmarks.as_deref().unwrap());
        if let (Ok(eo), Ok(ea)) = (eye_openness(lo, &opts.openness), eye_openness(la, &opts.openness)) {
            eye_openness_diff = Some((eo - ea).abs());
        }
        mouth_openness_diff = openness_difference(lo, la, &opts.openness.mouth).ok();
    }

    let angle_diff = match (&o.head_rot, &a.head_rot) {
        (Some(ro), Some(ra)) => {
            let d = rotation_difference(ro, ra);
            Some(if opts.signed_angles { d } else { d.abs() }.to_array())
        }
        _ => None,
    };

    FramePairMetrics {
        frame_idx: pair.frame_idx,
        identity_cos_dist,
        gender_match: attribute_match(o, a, AttributeKind::Gender),
        race_match: attribute_match(o, a, AttributeKind::Race),
        emotion_match: attribute_match(o, a, AttributeKind::Emotion),
        gaze_diff,
        eye_openness_diff,
        mouth_openness_diff,
        angle_diff,
    }
}

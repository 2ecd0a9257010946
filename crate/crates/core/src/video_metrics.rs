//! Temporal statistics of a whole video: identity fluctuation and landmark
//! trajectory correlation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_model::{PairedFrameStream, VideoFaceStream, LANDMARK_COUNT};
use crate::geometry::Point;
use crate::stats::Running;

/// Channels with population variance below this are left out of the correlation.
pub const MIN_CHANNEL_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum VideoMetricError {
    #[error("no descriptors")]
    Empty,
    #[error("descriptor dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("median descriptor has norm {0:e}")]
    ZeroMedian(f64),
    #[error("trajectories share {0} frames; at least 2 needed")]
    ShortSupport(usize),
    #[error("all {0} coordinate channels are constant")]
    AllChannelsDegenerate(usize),
    #[error("frame {frame_idx} has {found} landmarks")]
    LandmarkCount { frame_idx: u32, found: usize },
}

fn check_dims(descriptors: &[&[f64]]) -> Result<usize, VideoMetricError> {
    let first = descriptors.first().ok_or(VideoMetricError::Empty)?.len();
    match descriptors.iter().find(|d| d.len() != first) {
        Some(d) => Err(VideoMetricError::DimensionMismatch(first, d.len())),
        None => Ok(first),
    }
}

/// Coordinate-wise median over frames, then L2-normalized.
pub fn median_descriptor(descriptors: &[&[f64]]) -> Result<Vec<f64>, VideoMetricError> {
    let dim = check_dims(descriptors)?;
    let n = descriptors.len();
    let mut column = Vec::with_capacity(n);
    let mut median: Vec<f64> = (0..dim)
        .map(|k| {
            column.clear();
            column.extend(descriptors.iter().map(|d| d[k]));
            column.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                column[n / 2]
            } else {
                (column[n / 2 - 1] + column[n / 2]) / 2.0
            }
        })
        .collect();
    let norm = median.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= 1e-12) {
        return Err(VideoMetricError::ZeroMedian(norm));
    }
    median.iter_mut().for_each(|x| *x /= norm);
    Ok(median)
}

/// Population variance of `arccos(v_t·v_μ)` over frames, in rad².
pub fn identity_variance(descriptors: &[&[f64]]) -> Result<f64, VideoMetricError> {
    let center = median_descriptor(descriptors)?;
    let angles: Running = descriptors
        .iter()
        .map(|d| {
            let dot: f64 = d.iter().zip(&center).map(|(a, b)| a * b).sum();
            dot.clamp(-1.0, 1.0).acos()
        })
        .collect();
    Ok(angles.variance().expect("non-empty"))
}

/// Descriptors of a stream, one per frame from the largest face that has one.
pub fn stream_descriptors(stream: &VideoFaceStream) -> Vec<&[f64]> {
    stream
        .frames
        .iter()
        .filter_map(|f| f.largest_face_where(|r| r.descriptor.is_some()))
        .map(|r| r.descriptor.as_deref().unwrap())
        .collect()
}

/// Landmark positions over time: one 98-point set per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub frame_indices: Vec<u32>,
    pub landmarks: Vec<Vec<Point>>,
}

impl TrajectorySet {
    pub fn new(frame_indices: Vec<u32>, landmarks: Vec<Vec<Point>>) -> Result<Self, VideoMetricError> {
        assert_eq!(frame_indices.len(), landmarks.len(), "one landmark set per frame");
        if let Some((f, l)) = frame_indices.iter().zip(&landmarks).find(|(_, l)| l.len() != LANDMARK_COUNT) {
            return Err(VideoMetricError::LandmarkCount {
                frame_idx: *f,
                found: l.len(),
            });
        }
        Ok(Self {
            frame_indices,
            landmarks,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    /// Subtracts each frame's landmark centroid, removing rigid translation.
    pub fn centered(&self) -> Self {
        let landmarks = self
            .landmarks
            .iter()
            .map(|pts| {
                let n = pts.len() as f64;
                let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
                let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
                pts.iter().map(|p| Point::new(p.x - cx, p.y - cy)).collect()
            })
            .collect();
        Self {
            frame_indices: self.frame_indices.clone(),
            landmarks,
        }
    }

    /// Series of one coordinate channel (`2·k` is x of landmark k, `2·k+1` its y).
    fn channel<'a>(&'a self, rows: &'a [usize], ch: usize) -> impl Iterator<Item = f64> + 'a {
        rows.iter().map(move |&r| {
            let p = self.landmarks[r][ch / 2];
            if ch % 2 == 0 {
                p.x
            } else {
                p.y
            }
        })
    }
}

/// Original and anonymized trajectories over the paired frames that carry
/// landmarks on both sides (highest-IoU pair per frame).
pub fn paired_trajectories(paired: &PairedFrameStream) -> Result<(TrajectorySet, TrajectorySet), VideoMetricError> {
    let (mut idx, mut o, mut a) = (Vec::new(), Vec::new(), Vec::new());
    for p in paired.primary_pairs() {
        if let (Some(lo), Some(la)) = (&p.original.landmarks, &p.anonymized.landmarks) {
            idx.push(p.frame_idx);
            o.push(lo.clone());
            a.push(la.clone());
        }
    }
    Ok((TrajectorySet::new(idx.clone(), o)?, TrajectorySet::new(idx, a)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkCorrelation {
    /// Mean zero-lag Pearson correlation over the usable channels.
    pub mean: f64,
    pub channels_used: usize,
    pub channels_skipped: usize,
    pub frames: usize,
}

/// Zero-lag Pearson correlation per coordinate channel, averaged, over the
/// frames both sets share.
pub fn landmark_correlation(
    original: &TrajectorySet,
    anonymized: &TrajectorySet,
) -> Result<LandmarkCorrelation, VideoMetricError> {
    let (mut ro, mut ra) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < original.len() && j < anonymized.len() {
        let (fo, fa) = (original.frame_indices[i], anonymized.frame_indices[j]);
        if fo == fa {
            ro.push(i);
            ra.push(j);
        }
        if fo <= fa {
            i += 1;
        }
        if fa <= fo {
            j += 1;
        }
    }
    let frames = ro.len();
    if frames < 2 {
        return Err(VideoMetricError::ShortSupport(frames));
    }

    let channels = 2 * LANDMARK_COUNT;
    let mut sum = 0.0;
    let mut used = 0;
    for ch in 0..channels {
        let xs: Vec<f64> = original.channel(&ro, ch).collect();
        let ys: Vec<f64> = anonymized.channel(&ra, ch).collect();
        if let Some(r) = pearson(&xs, &ys) {
            sum += r;
            used += 1;
        }
    }
    if used == 0 {
        return Err(VideoMetricError::AllChannelsDegenerate(channels));
    }
    Ok(LandmarkCorrelation {
        mean: (sum / used as f64).clamp(-1.0, 1.0),
        channels_used: used,
        channels_skipped: channels - used,
        frames,
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx / n < MIN_CHANNEL_VARIANCE || syy / n < MIN_CHANNEL_VARIANCE {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

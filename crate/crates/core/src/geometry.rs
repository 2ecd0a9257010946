//! Face-mask geometry: convex hull of landmarks, pixel-center rasterization,
//! PGM mask files, and landmark openness ratios.

use std::cmp::Ordering;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_model::LANDMARK_COUNT;

/// Distance below which a pixel center counts as lying on the polygon boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("mask dimensions must be positive, got {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("degenerate face: left/right landmarks are {0:e} apart")]
    DegenerateFace(f64),
    #[error("landmark index {0} outside the 98-point scheme")]
    IndexOutOfRange(usize),
    #[error("openness spec has {top} top and {bottom} bottom indices")]
    UnpairedIndices { top: usize, bottom: usize },
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Twice the signed area of triangle (o, a, b); positive when o→a→b turns left.
pub fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn lex_cmp(a: &Point, b: &Point) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
}

/// A polygon with at least three finite vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::Degenerate("polygon needs at least 3 vertices"));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x, y, w, h]`, counter-clockwise from its lowest corner.
    pub fn from_bbox(bbox: [f64; 4]) -> Result<Self, GeometryError> {
        let [x, y, w, h] = bbox;
        Self::new(vec![
            Point::new(x, y),
            Point::new(x + w, y),
            Point::new(x + w, y + h),
            Point::new(x, y + h),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area; positive for counter-clockwise vertex order.
    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
    }

    /// Even-odd containment with boundary inclusion within `tol`.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        if self.edges().any(|(a, b)| segment_distance(p, a, b) <= tol) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if let Some(x) = crossing_x(a, b, p.y) {
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = GeometryError;

    fn try_from(v: Vec<Point>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

/// x-coordinate where the horizontal line at `y` crosses edge a→b, using the
/// half-open rule (lower endpoint included, upper excluded).
fn crossing_x(a: Point, b: Point, y: f64) -> Option<f64> {
    if (a.y <= y) != (b.y <= y) {
        Some(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y))
    } else {
        None
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Convex hull by Andrew's monotone chain.
///
/// The result is counter-clockwise, starts at the lexicographically smallest
/// vertex, and drops collinear boundary points, so every vertex is strictly
/// convex and is one of the input points.
pub fn convex_hull(points: &[Point]) -> Result<Polygon, GeometryError> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if points.len() < 3 {
        return Err(GeometryError::Degenerate("convex hull needs at least 3 points"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(lex_cmp);
    pts.dedup();

    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() + 1);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Err(GeometryError::Degenerate("all points are collinear"));
    }
    Polygon::new(hull)
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(GeometryError::BadDimensions { width, height });
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when every set pixel of `other` is also set here.
    pub fn is_superset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }
}

/// Rasterizes `poly`: pixel (row i, col j) is set iff its center
/// (j + 0.5, i + 0.5) lies inside the polygon (even-odd) or on its boundary.
pub fn rasterize_mask(poly: &Polygon, width: usize, height: usize) -> Result<BinaryMask, GeometryError> {
    rasterize_mask_dilated(poly, width, height, 0.0)
}

/// Like [`rasterize_mask`], additionally setting every pixel whose center is
/// within `radius` of the polygon boundary.
pub fn rasterize_mask_dilated(
    poly: &Polygon,
    width: usize,
    height: usize,
    radius: f64,
) -> Result<BinaryMask, GeometryError> {
    let mut mask = BinaryMask::new(width, height)?;
    let tol = radius.max(BOUNDARY_TOL);

    // Interior: even-odd scanline fill through pixel centers.
    let mut xs = Vec::new();
    for row in 0..height {
        let yc = row as f64 + 0.5;
        xs.clear();
        xs.extend(poly.edges().filter_map(|(a, b)| crossing_x(a, b, yc)));
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Centers strictly left of a crossing: xc < x  <=>  j + 0.5 < x.
            let first = col_ceil_strict(span[0]);
            let last = col_ceil_strict(span[1]);
            for col in first.max(0)..last.min(width as i64) {
                mask.set(row, col as usize, true);
            }
        }
    }

    // Boundary band: centers within `tol` of any edge.
    for (a, b) in poly.edges() {
        let row_lo = ((a.y.min(b.y) - tol - 0.5).floor() as i64).max(0);
        let row_hi = ((a.y.max(b.y) + tol - 0.5).ceil() as i64).min(height as i64 - 1);
        let col_lo = ((a.x.min(b.x) - tol - 0.5).floor() as i64).max(0);
        let col_hi = ((a.x.max(b.x) + tol - 0.5).ceil() as i64).min(width as i64 - 1);
        for row in row_lo..=row_hi {
            let yc = row as f64 + 0.5;
            // Narrow the column range to the edge's x-extent over the band |y - yc| <= tol.
            let (lo, hi) = edge_x_extent(a, b, yc - tol, yc + tol);
            let c_lo = ((lo - tol - 0.5).floor() as i64).max(col_lo);
            let c_hi = ((hi + tol - 0.5).ceil() as i64).min(col_hi);
            for col in c_lo..=c_hi {
                let c = Point::new(col as f64 + 0.5, yc);
                if segment_distance(c, a, b) <= tol {
                    mask.set(row as usize, col as usize, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Number of columns j with j + 0.5 < x (may be negative or exceed the width).
fn col_ceil_strict(x: f64) -> i64 {
    // j + 0.5 < x  <=>  j < x - 0.5  <=>  j <= ceil(x - 0.5) - 1
    let c = (x - 0.5).ceil();
    if c.is_finite() {
        c as i64
    } else if c > 0.0 {
        i64::MAX / 2
    } else {
        i64::MIN / 2
    }
}

fn edge_x_extent(a: Point, b: Point, y_lo: f64, y_hi: f64) -> (f64, f64) {
    if a.y == b.y {
        return (a.x.min(b.x), a.x.max(b.x));
    }
    let at = |y: f64| {
        let t = ((y - a.y) / (b.y - a.y)).clamp(0.0, 1.0);
        a.x + t * (b.x - a.x)
    };
    let (x0, x1) = (at(y_lo), at(y_hi));
    (x0.min(x1), x0.max(x1))
}

/// Encodes a mask as binary PGM (P5, maxval 255).
pub fn write_mask_pgm<W: Write>(mask: &BinaryMask, mut out: W) -> io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let payload: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    out.write_all(&payload)
}

pub fn mask_to_pgm_bytes(mask: &BinaryMask) -> Vec<u8> {
    let mut buf = Vec::with_capacity(mask.bits.len() + 20);
    write_mask_pgm(mask, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a binary PGM; any nonzero sample is a set pixel.
pub fn read_mask_pgm<R: Read>(mut input: R) -> Result<BinaryMask, GeometryError> {
    let mut data = Vec::new();
    input
        .read_to_end(&mut data)
        .map_err(|e| GeometryError::Pgm(e.to_string()))?;

    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GeometryError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    if fields[0] != "P5" {
        return Err(GeometryError::Pgm(format!("unsupported magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| GeometryError::Pgm(format!("bad number {s:?}")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(GeometryError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let payload = data.get(pos..).unwrap_or_default();
    if payload.len() != width * height {
        return Err(GeometryError::Pgm(format!(
            "expected {} raster bytes, found {}",
            width * height,
            payload.len()
        )));
    }
    BinaryMask::from_bits(width, height, payload.iter().map(|&v| v != 0).collect())
}

/// Landmark indices defining an openness ratio d_tb / d_lr.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpennessSpec {
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
    pub left: usize,
    pub right: usize,
}

impl OpennessSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.top.len() != self.bottom.len() || self.top.is_empty() {
            return Err(GeometryError::UnpairedIndices {
                top: self.top.len(),
                bottom: self.bottom.len(),
            });
        }
        let all = self.top.iter().chain(&self.bottom).chain([&self.left, &self.right]);
        match all.copied().find(|&i| i >= LANDMARK_COUNT) {
            Some(i) => Err(GeometryError::IndexOutOfRange(i)),
            None => Ok(()),
        }
    }
}

/// Named presets for both eyes and the outer mouth contour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpennessPresets {
    pub left_eye: OpennessSpec,
    pub right_eye: OpennessSpec,
    pub mouth: OpennessSpec,
}

impl OpennessPresets {
    /// Presets on the 98-point WFLW scheme.
    pub fn wflw98() -> Self {
        Self {
            left_eye: OpennessSpec {
                top: vec![61, 62, 63],
                bottom: vec![67, 66, 65],
                left: 60,
                right: 64,
            },
            right_eye: OpennessSpec {
                top: vec![69, 70, 71],
                bottom: vec![75, 74, 73],
                left: 68,
                right: 72,
            },
            mouth: OpennessSpec {
                top: vec![77, 78, 79, 80, 81],
                bottom: vec![87, 86, 85, 84, 83],
                left: 76,
                right: 82,
            },
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.left_eye.validate()?;
        self.right_eye.validate()?;
        self.mouth.validate()
    }
}

/// Mean top-bottom distance over the index pairs divided by the left-right distance.
pub fn openness_ratio(landmarks: &[Point], spec: &OpennessSpec) -> Result<f64, GeometryError> {
    spec.validate()?;
    if landmarks.len() < LANDMARK_COUNT {
        return Err(GeometryError::Degenerate("landmark set has fewer than 98 points"));
    }
    let d_lr = landmarks[spec.left].dist(landmarks[spec.right]);
    if !(d_lr >= 1e-9) {
        return Err(GeometryError::DegenerateFace(d_lr));
    }
    let d_tb = spec
        .top
        .iter()
        .zip(&spec.bottom)
        .map(|(&t, &b)| landmarks[t].dist(landmarks[b]))
        .sum::<f64>()
        / spec.top.len() as f64;
    Ok(d_tb / d_lr)
}

//! Domain types shared by every pipeline stage.
//!
//! All types are plain immutable values; constructors validate the stated
//! invariants so downstream code can rely on them. Box corners follow the
//! top-left `(x1, y1)` / bottom-right `(x2, y2)` convention throughout.

use crate::error::{Error, Result};

/// Tolerance for the unit-norm check on appearance embeddings.
pub const EMBEDDING_NORM_TOL: f64 = 1e-6;

/// Axis-aligned box with continuous pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::validation("box coordinates must be finite"));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::validation(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2}): corners must satisfy x1 < x2, y1 < y2"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Box from left-top corner plus width/height (MOT file convention).
    pub fn from_tlwh(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::validation(format!(
                "box width/height must be positive, got {width} x {height}"
            )));
        }
        Self::new(left, top, left + width, top + height)
    }

    /// Box from center-x, center-y, aspect ratio (w/h) and height.
    pub fn from_xyah(cx: f64, cy: f64, aspect: f64, height: f64) -> Result<Self> {
        let width = aspect * height;
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Measurement vector (cx, cy, aspect w/h, height) used by the tracker.
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width() / self.height(), self.height()]
    }
}

/// One candidate human box in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: i64,
    pub bbox: BBox,
    /// Confidence in `[0, 1]`.
    pub score: f64,
    /// Source proposal; boxes from the same proposal are exempt from
    /// suppressing each other in Set-NMS. Absent means "unique proposal".
    pub proposal_id: Option<u64>,
    /// Unit-norm appearance embedding, when a ReID model supplied one.
    pub embedding: Option<Vec<f32>>,
    /// Tag of the source detector (relevant when fusing two models).
    pub model_id: u32,
}

impl Detection {
    pub fn new(frame: i64, bbox: BBox, score: f64) -> Result<Self> {
        if frame < 0 {
            return Err(Error::validation(format!("negative frame index {frame}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection {
            frame,
            bbox,
            score,
            proposal_id: None,
            embedding: None,
            model_id: 0,
        })
    }

    pub fn with_proposal(mut self, proposal_id: u64) -> Self {
        self.proposal_id = Some(proposal_id);
        self
    }

    pub fn with_model(mut self, model_id: u32) -> Self {
        self.model_id = model_id;
        self
    }

    /// Attach a unit-norm embedding; rejects vectors off the unit sphere.
    pub fn with_embedding(mut self, embedding: Vec<f32>) -> Result<Self> {
        let norm = embedding_norm(&embedding);
        if (norm - 1.0).abs() > EMBEDDING_NORM_TOL {
            return Err(Error::validation(format!(
                "embedding norm {norm} not within {EMBEDDING_NORM_TOL} of 1"
            )));
        }
        self.embedding = Some(embedding);
        Ok(self)
    }
}

pub(crate) fn embedding_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// One keypoint: image coordinates plus confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub conf: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, conf: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::validation("keypoint coordinates must be finite"));
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::validation(format!(
                "keypoint confidence {conf} outside [0, 1]"
            )));
        }
        Ok(Keypoint { x, y, conf })
    }
}

/// An ordered set of K keypoints bound to a frame and optionally a track.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub frame: i64,
    pub track_id: Option<i64>,
    pub keypoints: Vec<Keypoint>,
}

impl Pose {
    pub fn new(frame: i64, track_id: Option<i64>, keypoints: Vec<Keypoint>) -> Result<Self> {
        if keypoints.is_empty() {
            return Err(Error::validation("pose must have at least one keypoint"));
        }
        Ok(Pose {
            frame,
            track_id,
            keypoints,
        })
    }

    pub fn k(&self) -> usize {
        self.keypoints.len()
    }

    /// Mean keypoint confidence, used as the instance score in evaluation.
    pub fn mean_conf(&self) -> f64 {
        self.keypoints.iter().map(|k| k.conf).sum::<f64>() / self.keypoints.len() as f64
    }
}

/// Dense per-pixel displacement between two frames, row-major `(dx, dy)`.
///
/// Values are stored as `f32` pairs to match the `.flo` interchange format
/// bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "flow data length {} does not match {width} x {height}",
                data.len()
            )));
        }
        if data.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::validation("flow values must be finite"));
        }
        Ok(FlowField {
            width,
            height,
            data,
        })
    }

    /// All-zero field of the given size.
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![[0.0, 0.0]; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Result<Self> {
        Self::new(width, height, vec![[dx, dy]; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Stored displacement at integer pixel coordinates.
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let p = self.data[y * self.width + x];
        (p[0] as f64, p[1] as f64)
    }

    pub fn set(&mut self, x: usize, y: usize, dx: f32, dy: f32) {
        self.data[y * self.width + x] = [dx, dy];
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }
}

/// Per-joint confidence grids, `K x height x width`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    k: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn new(k: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if k == 0 || height == 0 || width == 0 {
            return Err(Error::validation("heatmap dimensions must be positive"));
        }
        if values.len() != k * height * width {
            return Err(Error::validation(format!(
                "heatmap value count {} does not match {k} x {height} x {width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("heatmap values must lie in [0, 1]"));
        }
        Ok(Heatmap {
            k,
            height,
            width,
            values,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn value(&self, joint: usize, y: usize, x: usize) -> f32 {
        self.values[(joint * self.height + y) * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// A box that has been assigned a track identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedBox {
    pub frame: i64,
    /// Positive track identity.
    pub track_id: i64,
    pub bbox: BBox,
    pub score: f64,
}

impl TrackedBox {
    pub fn new(frame: i64, track_id: i64, bbox: BBox, score: f64) -> Result<Self> {
        if track_id < 1 {
            return Err(Error::validation(format!(
                "track id must be >= 1, got {track_id}"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(format!("score {score} outside [0, 1]")));
        }
        Ok(TrackedBox {
            frame,
            track_id,
            bbox,
            score,
        })
    }
}

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::validation(format!(
                "pixel count {} does not match {width} x {height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("pixel intensities must lie in [0, 1]"));
        }
        Ok(GrayFrame {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        GrayFrame {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

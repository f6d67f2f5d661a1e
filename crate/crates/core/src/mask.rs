//! Binary segmentation masks.
//!
//! Masks are stored run-length encoded in row-major order, alternating
//! zero-runs and one-runs, starting with the (possibly empty) zero-run.
//! IoU works directly on the run lists; reprojection moves a mask through
//! camera motion by unprojecting every set pixel with its depth, applying
//! the transform, and re-projecting.

use crate::geometry::{self, GeometryError, Intrinsics, Point3, Pose};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("no set pixel has a valid depth")]
    NoValidDepth,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// RLE-encoded binary mask.
///
/// Wire form: `{"size":[height,width],"counts":[n0,n1,...]}` with the first
/// count giving the leading zero-run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskWire", into = "MaskWire")]
pub struct Mask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct MaskWire {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl TryFrom<MaskWire> for Mask {
    type Error = MaskError;

    fn try_from(w: MaskWire) -> Result<Self, Self::Error> {
        Mask::from_counts(w.size[1], w.size[0], w.counts)
    }
}

impl From<Mask> for MaskWire {
    fn from(m: Mask) -> Self {
        MaskWire { size: [m.height, m.width], counts: m.counts }
    }
}

impl Mask {
    /// Builds a mask from raw run counts, validating the RLE invariants:
    /// runs sum to `width*height` and only the first run may be zero.
    pub fn from_counts(width: u32, height: u32, counts: Vec<u32>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::MalformedRle(format!("dimensions {width}x{height} must be positive")));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != width as u64 * height as u64 {
            return Err(MaskError::MalformedRle(format!(
                "runs sum to {total}, expected {}",
                width as u64 * height as u64
            )));
        }
        if counts.iter().skip(1).any(|&c| c == 0) {
            return Err(MaskError::MalformedRle("zero-length run after the first".into()));
        }
        Ok(Mask { width, height, counts })
    }

    /// Canonical RLE encoding of a row-major bitmap.
    pub fn encode(width: u32, height: u32, bitmap: &[bool]) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::MalformedRle(format!("dimensions {width}x{height} must be positive")));
        }
        if bitmap.len() != (width as usize) * (height as usize) {
            return Err(MaskError::MalformedRle(format!(
                "bitmap has {} pixels, expected {}",
                bitmap.len(),
                (width as usize) * (height as usize)
            )));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run: u32 = 0;
        for &bit in bitmap {
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
        counts.push(run);
        Ok(Mask { width, height, counts })
    }

    /// Mask with no set pixels.
    pub fn empty(width: u32, height: u32) -> Self {
        Mask { width, height, counts: vec![width * height] }
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity((self.width as usize) * (self.height as usize));
        let mut value = false;
        for &run in &self.counts {
            out.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    fn same_dims(&self, other: &Mask) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Half-open intervals `[start, end)` of set pixels in linear
    /// (row-major) index space.
    fn set_intervals(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::with_capacity(self.counts.len() / 2);
        let mut pos: u64 = 0;
        for (i, &run) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                out.push((pos, pos + run as u64));
            }
            pos += run as u64;
        }
        out
    }

    /// Iterates set pixels as `(x, y)` coordinates.
    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width as u64;
        self.set_intervals().into_iter().flat_map(move |(s, e)| {
            (s..e).map(move |idx| ((idx % width) as u32, (idx / width) as u32))
        })
    }
}

/// Intersection-over-union of two masks. Two empty masks score 0, never 1:
/// empty detections must not associate.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64, MaskError> {
    a.same_dims(b)?;
    let ia = a.set_intervals();
    let ib = b.set_intervals();
    let mut inter: u64 = 0;
    let (mut i, mut j) = (0, 0);
    while i < ia.len() && j < ib.len() {
        let lo = ia[i].0.max(ib[j].0);
        let hi = ia[i].1.min(ib[j].1);
        if hi > lo {
            inter += hi - lo;
        }
        if ia[i].1 <= ib[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Depth image: 16-bit values in millimeters, 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    values: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, values: Vec<u16>) -> Result<Self, MaskError> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(MaskError::MalformedRle(format!(
                "depth image has {} values, expected {}",
                values.len(),
                (width as usize) * (height as usize)
            )));
        }
        Ok(DepthImage { width, height, values })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    /// Depth at `(x, y)` in meters, or `None` when invalid (0).
    pub fn depth_at(&self, x: u32, y: u32) -> Option<f64> {
        let raw = self.values[(y as usize) * (self.width as usize) + x as usize];
        if raw == 0 {
            None
        } else {
            Some(raw as f64 / 1000.0)
        }
    }

    fn same_dims_mask(&self, m: &Mask) -> Result<(), MaskError> {
        if self.width != m.width() || self.height != m.height() {
            return Err(MaskError::DimensionMismatch(m.width(), m.height(), self.width, self.height));
        }
        Ok(())
    }
}

/// Moves a mask through camera motion: every set pixel with valid depth is
/// unprojected, transformed by `delta_t` and projected back; pixels that
/// land outside the image or behind the camera are dropped.
///
/// `delta_t` is the change of coordinates from the mask's camera frame to
/// the target camera frame (see [`geometry::frame_change`]), applied
/// actively to each unprojected point.
pub fn reproject_mask(
    m: &Mask,
    depth_prev: &DepthImage,
    k: &Intrinsics,
    delta_t: &Pose,
) -> Result<Mask, MaskError> {
    depth_prev.same_dims_mask(m)?;
    if k.width != m.width() || k.height != m.height() {
        return Err(MaskError::DimensionMismatch(m.width(), m.height(), k.width, k.height));
    }
    let mut bitmap = vec![false; (m.width() as usize) * (m.height() as usize)];
    for (x, y) in m.set_pixels() {
        let Some(d) = depth_prev.depth_at(x, y) else { continue };
        let p = geometry::unproject(x as f64, y as f64, d, k)?;
        let q = Point3::from_vector(delta_t.transform_vector(&p.vector()), p.frame);
        if q.z <= 0.0 {
            continue;
        }
        let (u, v) = geometry::project(&q, k)?;
        let (ui, vi) = (u.round(), v.round());
        if ui < 0.0 || vi < 0.0 || ui >= m.width() as f64 || vi >= m.height() as f64 {
            continue;
        }
        bitmap[(vi as usize) * (m.width() as usize) + ui as usize] = true;
    }
    Mask::encode(m.width(), m.height(), &bitmap)
}

/// 3D centroid of a mask in the map frame: the arithmetic mean of
/// `camera_to_map(unproject(pixel))` over set pixels with valid depth.
pub fn centroid3d(
    m: &Mask,
    depth: &DepthImage,
    k: &Intrinsics,
    camera_pose: &Pose,
) -> Result<Point3, MaskError> {
    depth.same_dims_mask(m)?;
    if m.is_empty() {
        return Err(MaskError::EmptyMask);
    }
    let mut sum = nalgebra::Vector3::zeros();
    let mut n: u64 = 0;
    for (x, y) in m.set_pixels() {
        let Some(d) = depth.depth_at(x, y) else { continue };
        let p = geometry::unproject(x as f64, y as f64, d, k)?;
        sum += geometry::camera_to_map(&p, camera_pose).vector();
        n += 1;
    }
    if n == 0 {
        return Err(MaskError::NoValidDepth);
    }
    Ok(Point3::from_vector(sum / n as f64, crate::geometry::Frame::Map))
}

//! Pose-indexed pixel-difference features.
//!
//! Candidate offsets live in the mean-shape normalized frame (box half-extent
//! is 1). At evaluation time each offset is rotated and scaled by the
//! instance's current similarity to the mean shape and anchored at the
//! landmark's current image position.

use std::f64::consts::TAU;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{Point, Shape, SimilarityTransform};
use crate::rng::Rng;

/// Default number of candidate pixels per landmark and stage.
pub const DEFAULT_CANDIDATES: usize = 500;

/// Radii for the 7-stage default cascade, as fractions of the normalized
/// half-extent.
pub const DEFAULT_RADII: [f64; 7] = [0.30, 0.25, 0.20, 0.15, 0.12, 0.10, 0.08];

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Image(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Intensity at the nearest pixel to `p`, clamped to the image.
    #[inline]
    pub fn sample(&self, p: Point) -> u8 {
        let x = clamp_round(p.x, self.width);
        let y = clamp_round(p.y, self.height);
        self.data[y * self.width + x]
    }
}

#[inline]
fn clamp_round(v: f64, extent: usize) -> usize {
    // floor(v + 0.5) equals round-half-away-from-zero wherever the clamp
    // does not apply, and avoids a libm call on the hot path
    let r = v + 0.5;
    if !(r >= 1.0) {
        0
    } else if r >= extent as f64 {
        extent - 1
    } else {
        r as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelOffset {
    pub dx: f64,
    pub dy: f64,
}

impl PixelOffset {
    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Candidate pixel offsets sampled around one landmark for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub landmark_index: usize,
    pub stage_index: usize,
    pub radius: f64,
    pub offsets: Vec<PixelOffset>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Image position of candidate `index` for a landmark at `anchor`.
    #[inline]
    pub fn position(&self, index: usize, anchor: Point, transform: &SimilarityTransform) -> Point {
        self.position_linear(index, anchor, transform.linear())
    }

    /// As [`position`](Self::position) with the transform's linear part
    /// `(a, b)` precomputed.
    #[inline]
    pub fn position_linear(&self, index: usize, anchor: Point, (a, b): (f64, f64)) -> Point {
        let o = self.offsets[index];
        Point::new(anchor.x + (a * o.dx - b * o.dy), anchor.y + (b * o.dx + a * o.dy))
    }

    /// Intensities of every candidate for one landmark position.
    pub fn intensities(&self, image: &Image, anchor: Point, transform: &SimilarityTransform) -> Vec<u8> {
        let lin = transform.linear();
        (0..self.offsets.len()).map(|i| image.sample(self.position_linear(i, anchor, lin))).collect()
    }
}

/// Two distinct indices into a [`CandidateSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelPair {
    pub first: u32,
    pub second: u32,
}

impl PixelPair {
    pub fn new(first: u32, second: u32, candidate_count: usize) -> Result<Self> {
        if first == second {
            return Err(Error::InvalidArgument(format!("pixel pair uses index {first} twice")));
        }
        if first as usize >= candidate_count || second as usize >= candidate_count {
            return Err(Error::InvalidArgument(format!(
                "pixel pair ({first}, {second}) out of range for {candidate_count} candidates"
            )));
        }
        Ok(Self { first, second })
    }
}

/// Per-stage sampling radius, non-increasing from coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSchedule(Vec<f64>);

impl RadiusSchedule {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::InvalidArgument(format!("radii must lie in (0, 1]: {radii:?}")));
        }
        if radii.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(format!("radii must be non-increasing: {radii:?}")));
        }
        Ok(Self(radii))
    }

    /// The default 7-stage curve resampled to `stages` entries.
    pub fn default_for(stages: usize) -> Self {
        let last = (DEFAULT_RADII.len() - 1) as f64;
        let radii = (0..stages)
            .map(|i| {
                if stages == DEFAULT_RADII.len() {
                    return DEFAULT_RADII[i];
                }
                let pos = if stages == 1 { 0.0 } else { i as f64 * last / (stages - 1) as f64 };
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(DEFAULT_RADII.len() - 1);
                let frac = pos - lo as f64;
                DEFAULT_RADII[lo] * (1.0 - frac) + DEFAULT_RADII[hi] * frac
            })
            .collect();
        Self(radii)
    }

    pub fn radii(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn radius(&self, stage: usize) -> f64 {
        self.0[stage]
    }
}

/// Samples `count` offsets uniformly in the disk of the given radius.
pub fn sample_candidates(rng: &mut Rng, radius: f64, count: usize) -> Result<Vec<PixelOffset>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    Ok((0..count)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = TAU * rng.random::<f64>();
            let (s, c) = theta.sin_cos();
            PixelOffset { dx: r * c, dy: r * s }
        })
        .collect())
}

/// Intensity difference of a candidate pair around one landmark.
pub fn pixel_diff(
    image: &Image,
    shape: &Shape,
    landmark_index: usize,
    pair: PixelPair,
    candidates: &CandidateSet,
    transform: &SimilarityTransform,
) -> i32 {
    let anchor = shape.points()[landmark_index];
    pixel_diff_linear(image, anchor, pair, candidates, transform.linear())
}

#[inline]
pub(crate) fn pixel_diff_linear(
    image: &Image,
    anchor: Point,
    pair: PixelPair,
    candidates: &CandidateSet,
    lin: (f64, f64),
) -> i32 {
    let a = image.sample(candidates.position_linear(pair.first as usize, anchor, lin));
    let b = image.sample(candidates.position_linear(pair.second as usize, anchor, lin));
    a as i32 - b as i32
}

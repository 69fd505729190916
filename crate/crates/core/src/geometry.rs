//! Landmark shapes, bounding boxes, similarity transforms and the
//! normalized alignment-error metric.

use crate::error::{Error, Result};

/// Outer eye corners of the 68-point markup.
pub const LEFT_EYE_OUTER: usize = 36;
pub const RIGHT_EYE_OUTER: usize = 45;
/// Eye rings of the 68-point markup, as half-open index ranges.
pub const LEFT_EYE_RING: std::ops::Range<usize> = 36..42;
pub const RIGHT_EYE_RING: std::ops::Range<usize> = 42..48;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// An ordered set of 2D landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    points: Vec<Point>,
}

impl Shape {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("shape has no landmarks"));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite("shape coordinates"));
        }
        Ok(Self { points })
    }

    /// Builds a shape from interleaved `x0, y0, x1, y1, ...` coordinates.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "odd coordinate count {}",
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
    }

    pub fn zeros(landmark_count: usize) -> Self {
        Self { points: vec![Point::default(); landmark_count] }
    }

    pub fn landmark_count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Point] {
        &mut self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Shape {
        Shape { points: self.points.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect() }
    }

    fn check_same_count(&self, other: &Shape) -> Result<()> {
        if self.landmark_count() != other.landmark_count() {
            return Err(Error::LandmarkMismatch {
                expected: self.landmark_count(),
                found: other.landmark_count(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned face box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        let b = Self { x, y, width, height };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bounding box"));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Degenerate(format!(
                "bounding box {}x{} has no area",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    /// Tight box around `shape`; may have zero extent.
    pub fn enclosing(shape: &Shape) -> BoundingBox {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in shape.points() {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        BoundingBox { x: x0, y: y0, width: x1 - x0, height: y1 - y0 }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.x + self.width && p.y >= self.y && p.y <= self.y + self.height
    }
}

/// Maps image-frame landmarks into the box frame, where the box corners
/// land on (-1, -1) and (1, 1).
pub fn normalize_to_box(shape: &Shape, bbox: &BoundingBox) -> Result<Shape> {
    bbox.validate()?;
    let points = shape
        .points()
        .iter()
        .map(|p| {
            Point::new(
                2.0 * (p.x - bbox.x) / bbox.width - 1.0,
                2.0 * (p.y - bbox.y) / bbox.height - 1.0,
            )
        })
        .collect();
    Ok(Shape { points })
}

/// Inverse of [`normalize_to_box`].
pub fn denormalize_from_box(shape: &Shape, bbox: &BoundingBox) -> Result<Shape> {
    bbox.validate()?;
    let points = shape
        .points()
        .iter()
        .map(|p| {
            Point::new(
                bbox.x + (p.x + 1.0) * bbox.width / 2.0,
                bbox.y + (p.y + 1.0) * bbox.height / 2.0,
            )
        })
        .collect();
    Ok(Shape { points })
}

/// Per-landmark mean of the box-normalized shapes.
pub fn compute_mean_shape(shapes: &[Shape], boxes: &[BoundingBox]) -> Result<Shape> {
    if shapes.is_empty() {
        return Err(Error::Empty("no shapes to average"));
    }
    if shapes.len() != boxes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} shapes but {} boxes",
            shapes.len(),
            boxes.len()
        )));
    }
    let n = shapes[0].landmark_count();
    let mut acc = vec![Point::default(); n];
    for (shape, bbox) in shapes.iter().zip(boxes) {
        shapes[0].check_same_count(shape)?;
        let norm = normalize_to_box(shape, bbox)?;
        for (a, p) in acc.iter_mut().zip(norm.points()) {
            a.x += p.x;
            a.y += p.y;
        }
    }
    let count = shapes.len() as f64;
    Ok(Shape { points: acc.into_iter().map(|p| Point::new(p.x / count, p.y / count)).collect() })
}

/// `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Point,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub const fn identity() -> Self {
        Self { scale: 1.0, rotation: 0.0, translation: Point::new(0.0, 0.0) }
    }

    pub fn new(scale: f64, rotation: f64, translation: Point) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale, rotation, translation })
    }

    /// Linear part as `(a, b)` with matrix `[[a, -b], [b, a]]`.
    #[inline]
    pub fn linear(&self) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (self.scale * c, self.scale * s)
    }

    /// Rotates and scales a vector; translation is not applied.
    #[inline]
    pub fn apply_vector(&self, v: Point) -> Point {
        let (a, b) = self.linear();
        Point::new(a * v.x - b * v.y, b * v.x + a * v.y)
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        self.apply_vector(p) + self.translation
    }

    pub fn apply_shape(&self, shape: &Shape) -> Shape {
        Shape { points: shape.points().iter().map(|&p| self.apply(p)).collect() }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: -self.rotation,
            translation: Point::default(),
        };
        let t = inv.apply_vector(self.translation);
        SimilarityTransform { translation: Point::new(-t.x, -t.y), ..inv }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            translation: self.apply(other.translation),
        }
    }
}

/// Least-squares similarity (no reflection) taking `from` onto `to`.
pub fn estimate_similarity(from: &Shape, to: &Shape) -> Result<SimilarityTransform> {
    from.check_same_count(to)?;
    if from.landmark_count() < 2 {
        return Err(Error::InvalidArgument("similarity needs at least two landmarks".into()));
    }
    let cf = from.centroid();
    let ct = to.centroid();
    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for (f, t) in from.points().iter().zip(to.points()) {
        let f = *f - cf;
        let t = *t - ct;
        dot += f.x * t.x + f.y * t.y;
        cross += f.x * t.y - f.y * t.x;
        spread += f.x * f.x + f.y * f.y;
    }
    if spread <= f64::EPSILON * from.landmark_count() as f64 {
        return Err(Error::Degenerate("source shape has no spread".into()));
    }
    let scale = dot.hypot(cross) / spread;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("target shape has no spread".into()));
    }
    let rotation = cross.atan2(dot);
    let partial = SimilarityTransform { scale, rotation, translation: Point::default() };
    let moved = partial.apply_vector(cf);
    Ok(SimilarityTransform { translation: ct - moved, ..partial })
}

/// Denominator used to make alignment errors scale-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormalizationKind {
    InterOcular,
    InterPupil,
    BoxDiagonal,
}

impl NormalizationKind {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationKind::InterOcular => "inter-ocular",
            NormalizationKind::InterPupil => "inter-pupil",
            NormalizationKind::BoxDiagonal => "box-diagonal",
        }
    }

    /// Normalizing distance measured on the ground-truth shape.
    pub fn distance(self, truth: &Shape) -> Result<f64> {
        let pts = truth.points();
        let d = match self {
            NormalizationKind::InterOcular | NormalizationKind::InterPupil if pts.len() != 68 => {
                return Err(Error::InvalidArgument(format!(
                    "{} normalization needs the 68-point markup, got {} points",
                    self.name(),
                    pts.len()
                )))
            }
            NormalizationKind::InterOcular => pts[LEFT_EYE_OUTER].distance(pts[RIGHT_EYE_OUTER]),
            NormalizationKind::InterPupil => {
                ring_center(&pts[LEFT_EYE_RING]).distance(ring_center(&pts[RIGHT_EYE_RING]))
            }
            NormalizationKind::BoxDiagonal => BoundingBox::enclosing(truth).diagonal(),
        };
        if !(d > 0.0) {
            return Err(Error::Degenerate(format!("zero {} distance", self.name())));
        }
        Ok(d)
    }
}

impl std::str::FromStr for NormalizationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "inter-ocular" | "interocular" | "ocular" => Ok(NormalizationKind::InterOcular),
            "inter-pupil" | "interpupil" | "pupil" => Ok(NormalizationKind::InterPupil),
            "box-diagonal" | "box" | "diagonal" => Ok(NormalizationKind::BoxDiagonal),
            other => Err(Error::InvalidArgument(format!("unknown normalization '{other}'"))),
        }
    }
}

fn ring_center(ring: &[Point]) -> Point {
    let n = ring.len() as f64;
    let (sx, sy) = ring.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

/// Per-landmark Euclidean distances between two shapes.
pub fn landmark_distances(predicted: &Shape, truth: &Shape) -> Result<Vec<f64>> {
    truth.check_same_count(predicted)?;
    Ok(predicted.points().iter().zip(truth.points()).map(|(p, t)| p.distance(*t)).collect())
}

/// Mean landmark distance divided by the normalizing distance of `truth`.
pub fn alignment_error(predicted: &Shape, truth: &Shape, norm: NormalizationKind) -> Result<f64> {
    let dists = landmark_distances(predicted, truth)?;
    let denom = norm.distance(truth)?;
    Ok(dists.iter().sum::<f64>() / dists.len() as f64 / denom)
}

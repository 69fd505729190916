//! Synthetic faces for desk-scale experiments.
//!
//! A fixed 68-point template (jaw, brows, nose, eyes, mouth in the usual
//! markup order) is placed with a random similarity and per-landmark noise.
//! Each landmark is rendered as a Gaussian blob with its own peak intensity,
//! so pixel differences near a landmark say which landmark it is.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{derive_bbox, AnnotatedSample, DEFAULT_BOX_PADDING};
use crate::error::{Error, Result};
use crate::geometry::{Point, Shape, SimilarityTransform};
use crate::pixel::Image;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub landmark_count: usize,
    pub width: usize,
    pub height: usize,
    /// Half-width of the template face in pixels.
    pub face_radius: f64,
    pub scale_jitter: (f64, f64),
    /// Rotation drawn uniformly from `[-rotation_jitter, rotation_jitter]` radians.
    pub rotation_jitter: f64,
    /// Translation drawn uniformly per axis from `[-t, t]` pixels.
    pub translation_jitter: f64,
    pub landmark_noise: f64,
    /// Standard deviation of each landmark blob in pixels.
    pub blob_radius: f64,
    pub background_mean: f64,
    pub background_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 200,
            landmark_count: 68,
            width: 128,
            height: 128,
            face_radius: 40.0,
            scale_jitter: (0.85, 1.15),
            rotation_jitter: 0.25,
            translation_jitter: 8.0,
            landmark_noise: 1.0,
            blob_radius: 2.5,
            background_mean: 30.0,
            background_noise: 6.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.landmark_count < 2 || self.width < 8 || self.height < 8 {
            return bad("need at least 2 landmarks and an 8x8 image");
        }
        let (lo, hi) = self.scale_jitter;
        if !(lo > 0.0 && lo <= hi) {
            return bad("scale jitter range must be positive and ordered");
        }
        if [self.rotation_jitter, self.translation_jitter, self.landmark_noise, self.background_noise]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("jitter and noise magnitudes must be non-negative");
        }
        if !(self.face_radius > 0.0 && self.blob_radius > 0.0) {
            return bad("face and blob radii must be positive");
        }
        Ok(())
    }
}

fn ring(center: (f64, f64), radii: (f64, f64), n: usize) -> impl Iterator<Item = Point> {
    (0..n).map(move |i| {
        let a = PI - i as f64 * 2.0 * PI / n as f64;
        Point::new(center.0 + radii.0 * a.cos(), center.1 - radii.1 * a.sin())
    })
}

fn line(from: (f64, f64), to: (f64, f64), n: usize) -> impl Iterator<Item = Point> {
    (0..n).map(move |i| {
        let t = i as f64 / (n - 1) as f64;
        Point::new(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
    })
}

/// The canonical landmark layout, roughly spanning `[-1, 1]` horizontally.
pub fn template(landmark_count: usize) -> Shape {
    if landmark_count != 68 {
        // sunflower layout for arbitrary counts
        let golden = PI * (3.0 - 5f64.sqrt());
        let pts = (0..landmark_count)
            .map(|i| {
                let r = 0.2 + 0.75 * ((i as f64 + 0.5) / landmark_count as f64).sqrt();
                let a = i as f64 * golden;
                Point::new(r * a.cos(), r * a.sin())
            })
            .collect();
        return Shape::new(pts).expect("finite template");
    }
    let mut pts: Vec<Point> = (0..17)
        .map(|i| {
            let phi = PI * i as f64 / 16.0;
            Point::new(-0.95 * phi.cos(), -0.15 + phi.sin())
        })
        .collect();
    let brow = |sign: f64| {
        (0..5).map(move |i| {
            let t = i as f64 / 4.0;
            let x = sign * (0.75 - 0.6 * t);
            Point::new(x, -0.55 - 0.08 * (PI * t).sin())
        })
    };
    pts.extend(brow(-1.0));
    pts.extend(brow(1.0).collect::<Vec<_>>().into_iter().rev());
    pts.extend(line((0.0, -0.4), (0.0, 0.05), 4));
    pts.extend((0..5).map(|i| {
        let x = -0.2 + 0.1 * i as f64;
        Point::new(x, 0.2 + 0.04 * (1.0 - (x / 0.2).powi(2)))
    }));
    pts.extend(ring((-0.42, -0.32), (0.16, 0.07), 6));
    pts.extend(ring((0.42, -0.32), (0.16, 0.07), 6));
    pts.extend(ring((0.0, 0.5), (0.35, 0.15), 12));
    pts.extend(ring((0.0, 0.5), (0.22, 0.06), 8));
    debug_assert_eq!(pts.len(), 68);
    Shape::new(pts).expect("finite template")
}

/// Peak blob intensity of landmark `index`; distinct for the first 181.
pub fn landmark_intensity(index: usize) -> u8 {
    (70 + (index * 97) % 181) as u8
}

/// Renders blobs for `shape` over a noisy background.
fn render(config: &SyntheticConfig, shape: &Shape, rng: &mut crate::rng::Rng) -> Result<Image> {
    let (w, h) = (config.width, config.height);
    let noise = Normal::new(0.0, config.background_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut canvas: Vec<f64> = (0..w * h)
        .map(|_| config.background_mean + if config.background_noise > 0.0 { noise.sample(rng) } else { 0.0 })
        .collect();
    let sigma = config.blob_radius;
    let reach = (3.0 * sigma).ceil() as i64;
    let mut blobs = vec![0.0f64; w * h];
    for (j, p) in shape.points().iter().enumerate() {
        let peak = landmark_intensity(j) as f64;
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for y in (cy - reach).max(0)..=(cy + reach).min(h as i64 - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(w as i64 - 1) {
                let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                let v = peak * (-d2 / (2.0 * sigma * sigma)).exp();
                let cell = &mut blobs[y as usize * w + x as usize];
                *cell = cell.max(v);
            }
        }
    }
    for (c, b) in canvas.iter_mut().zip(&blobs) {
        *c = c.max(*b);
    }
    Image::new(w, h, canvas.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
}

/// Generates `config.count` samples; sample `i` depends only on the seed and `i`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<AnnotatedSample>> {
    config.validate()?;
    let base = template(config.landmark_count);
    let noise = Normal::new(0.0, config.landmark_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    (0..config.count)
        .map(|i| {
            let mut rng = seeded(config.seed, &[0x5A, i as u64]);
            let (lo, hi) = config.scale_jitter;
            let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let rot = if config.rotation_jitter > 0.0 {
                rng.random_range(-config.rotation_jitter..=config.rotation_jitter)
            } else {
                0.0
            };
            let mut shift = || {
                if config.translation_jitter > 0.0 {
                    rng.random_range(-config.translation_jitter..=config.translation_jitter)
                } else {
                    0.0
                }
            };
            let (tx, ty) = (shift(), shift());
            let placement = SimilarityTransform::new(
                config.face_radius * scale,
                rot,
                Point::new(config.width as f64 / 2.0 + tx, config.height as f64 / 2.0 + ty),
            )?;
            let mut shape = placement.apply_shape(&base);
            if config.landmark_noise > 0.0 {
                for p in shape.points_mut() {
                    p.x += noise.sample(&mut rng);
                    p.y += noise.sample(&mut rng);
                }
            }
            let image = render(config, &shape, &mut rng)?;
            let bbox = derive_bbox(shape.points(), DEFAULT_BOX_PADDING)?;
            AnnotatedSample::new(image, shape, bbox, format!("synthetic-{}-{i}", config.seed))
        })
        .collect()
}

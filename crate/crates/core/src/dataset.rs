//! Annotated samples: `.pts` landmark files, grayscale image I/O and
//! dataset manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader, Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point, Shape};
use crate::pixel::Image;

/// Padding added on each side of a box derived from landmarks.
pub const DEFAULT_BOX_PADDING: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub image: Image,
    pub shape: Shape,
    pub bbox: BoundingBox,
    pub source: String,
}

impl AnnotatedSample {
    pub fn new(image: Image, shape: Shape, bbox: BoundingBox, source: impl Into<String>) -> Result<Self> {
        bbox.validate()?;
        Ok(Self { image, shape, bbox, source: source.into() })
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses the `.pts` landmark format:
///
/// ```text
/// version: 1
/// n_points: 68
/// {
/// x y
/// ...
/// }
/// ```
pub fn parse_pts(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut declared = None;
    let mut opened = false;
    for (no, line) in lines.by_ref() {
        if line == "{" {
            opened = true;
            break;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(parse_err(no, format!("expected 'key: value' header or '{{', found '{line}'")));
        };
        if key.trim() == "n_points" {
            let n: usize = value.trim().parse().map_err(|_| parse_err(no, format!("bad n_points '{}'", value.trim())))?;
            declared = Some(n);
        }
    }
    if !opened {
        return Err(parse_err(text.lines().count(), "missing opening '{'"));
    }
    let expected = declared.ok_or_else(|| parse_err(1, "missing n_points header"))?;
    let mut points = Vec::with_capacity(expected);
    let mut closed = false;
    let mut last_line = 0;
    for (no, line) in lines.by_ref() {
        last_line = no;
        if line == "}" {
            closed = true;
            break;
        }
        let mut fields = line.split_whitespace();
        let mut coord = |name: &str| -> Result<f64> {
            let tok = fields.next().ok_or_else(|| parse_err(no, format!("missing {name} coordinate")))?;
            let v: f64 = tok.parse().map_err(|_| parse_err(no, format!("non-numeric {name} coordinate '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(no, format!("non-finite {name} coordinate")));
            }
            Ok(v)
        };
        let x = coord("x")?;
        let y = coord("y")?;
        if let Some(extra) = fields.next() {
            return Err(parse_err(no, format!("unexpected token '{extra}'")));
        }
        points.push(Point::new(x, y));
    }
    if !closed {
        return Err(parse_err(last_line.max(1), "missing closing '}'"));
    }
    if let Some((no, line)) = lines.next() {
        return Err(parse_err(no, format!("unexpected content after '}}': '{line}'")));
    }
    if points.len() != expected {
        return Err(parse_err(
            last_line,
            format!("n_points declares {expected} points but {} were found", points.len()),
        ));
    }
    Ok(points)
}

/// Serializes landmarks in `.pts` format; coordinates round-trip exactly.
pub fn write_pts(points: &[Point]) -> String {
    let mut out = format!("version: 1\nn_points: {}\n{{\n", points.len());
    for p in points {
        let _ = writeln!(out, "{:?} {:?}", p.x, p.y);
    }
    out.push_str("}\n");
    out
}

pub fn read_pts_file(path: &Path) -> Result<Shape> {
    Shape::new(parse_pts(&fs::read_to_string(path)?)?)
}

pub fn write_pts_file(path: &Path, shape: &Shape) -> Result<()> {
    fs::write(path, write_pts(shape.points()))?;
    Ok(())
}

/// Tight box around `points`, grown by `padding_fraction` of its size on
/// each side.
pub fn derive_bbox(points: &[Point], padding_fraction: f64) -> Result<BoundingBox> {
    if points.is_empty() {
        return Err(Error::Empty("no points to box"));
    }
    if !(padding_fraction >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative padding {padding_fraction}")));
    }
    let tight = BoundingBox::enclosing(&Shape::new(points.to_vec())?);
    let (px, py) = (tight.width * padding_fraction, tight.height * padding_fraction);
    BoundingBox::new(tight.x - px, tight.y - py, tight.width + 2.0 * px, tight.height + 2.0 * py)
}

/// Luma of an RGB pixel with 0.299/0.587/0.114 weights.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

/// Loads a PGM (P5) or PNG file as 8-bit grayscale.
pub fn load_image(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    let decoded = reader.decode().map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    from_dynamic(decoded)
}

fn from_dynamic(decoded: DynamicImage) -> Result<Image> {
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageLuma16(g) => g.pixels().map(|p| (p.0[0] as f64 / 257.0).round() as u8).collect(),
        other => other.to_rgb8().pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
    };
    Image::new(w, h, data)
}

fn gray(image: &Image) -> Result<GrayImage> {
    GrayImage::from_raw(image.width() as u32, image.height() as u32, image.data().to_vec())
        .ok_or_else(|| Error::Image("buffer size mismatch".into()))
}

pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    gray(image)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes a binary P5 PGM.
pub fn save_pgm(image: &Image, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend_from_slice(image.data());
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes `image` as RGB PNG with each landmark marked by a small red dot.
pub fn save_overlay_png(image: &Image, shape: &Shape, path: &Path) -> Result<()> {
    let mut rgb = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let v = image.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    let (w, h) = (image.width() as i64, image.height() as i64);
    for p in shape.points() {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    rgb.put_pixel(x as u32, y as u32, Rgb([255, 0, 0]));
                }
            }
        }
    }
    rgb.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Image/annotation file pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub pts_path: PathBuf,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "jpg", "jpeg"];

/// Lists dataset entries from a directory (images with same-stem `.pts`
/// files alongside) or a CSV manifest with `image_path,pts_path` columns.
/// Relative CSV paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if path.is_dir() {
        let mut entries = Vec::new();
        for e in fs::read_dir(path)? {
            let p = e?.path();
            let is_image = p
                .extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()));
            let pts = p.with_extension("pts");
            if is_image && pts.is_file() {
                entries.push(ManifestEntry { image_path: p, pts_path: pts });
            }
        }
        entries.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        if entries.is_empty() {
            return Err(Error::Empty("no image/.pts pairs in dataset directory"));
        }
        return Ok(entries);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("manifest lacks '{name}' column") })
    };
    let (ic, pc) = (col("image_path")?, col("pts_path")?);
    let mut entries = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |c: usize| {
            record.get(c).map(|v| base.join(v)).ok_or_else(|| Error::Parse {
                line: row + 2,
                message: "short manifest row".into(),
            })
        };
        entries.push(ManifestEntry { image_path: field(ic)?, pts_path: field(pc)? });
    }
    Ok(entries)
}

/// Loads every manifest entry; boxes are derived from the annotations.
pub fn load_dataset(path: &Path) -> Result<Vec<AnnotatedSample>> {
    read_manifest(path)?
        .into_par_iter()
        .map(|e| {
            let image = load_image(&e.image_path)?;
            let shape = read_pts_file(&e.pts_path)?;
            let bbox = derive_bbox(shape.points(), DEFAULT_BOX_PADDING)?;
            AnnotatedSample::new(image, shape, bbox, e.image_path.display().to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_pts() {
        let text = "version: 1\nn_points: 3\n{\n1.5 2\n  3 4.25\n5 6\n}\n";
        let pts = parse_pts(text).unwrap();
        assert_eq!(pts, vec![Point::new(1.5, 2.0), Point::new(3.0, 4.25), Point::new(5.0, 6.0)]);
    }

    #[test]
    fn pts_round_trip_full_precision() {
        let pts = vec![Point::new(0.1 + 0.2, -1e-17), Point::new(123456.789012345, std::f64::consts::PI)];
        assert_eq!(parse_pts(&write_pts(&pts)).unwrap(), pts);
    }

    #[test]
    fn pts_count_mismatch_names_both() {
        let mut text = String::from("version: 1\nn_points: 68\n{\n");
        for i in 0..67 {
            text.push_str(&format!("{i} {i}\n"));
        }
        text.push_str("}\n");
        let err = parse_pts(&text).unwrap_err().to_string();
        assert!(err.contains("68") && err.contains("67"), "{err}");
    }

    #[test]
    fn pts_errors_carry_line_numbers() {
        let err = parse_pts("version: 1\nn_points: 1\n{\n1 abc\n}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        assert!(parse_pts("version: 1\nn_points: 1\n1 2\n").is_err());
        assert!(parse_pts("version: 1\nn_points: 1\n{\n1 2\n").is_err());
        assert!(parse_pts("version: 1\n{\n1 2\n}\n").is_err());
    }

    #[test]
    fn bbox_cases() {
        let pts = [Point::new(0.0, 0.0), Point::new(10.0, 10.0)];
        assert_eq!(derive_bbox(&pts, 0.0).unwrap(), BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap());
        let b = derive_bbox(&pts, 0.1).unwrap();
        assert!((b.x + 1.0).abs() < 1e-12 && (b.y + 1.0).abs() < 1e-12);
        assert!((b.width - 12.0).abs() < 1e-12 && (b.height - 12.0).abs() < 1e-12);
        assert!(derive_bbox(&[], 0.1).is_err());
    }

    #[test]
    fn luma_weights() {
        assert_eq!(luma(255, 0, 0), 76);
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
    }
}

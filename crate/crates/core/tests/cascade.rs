use idf_align::cascade::{train, CascadeConfig, CascadeModel};
use idf_align::dataset::AnnotatedSample;
use idf_align::encoding::EncodingKind;
use idf_align::geometry::{BoundingBox, NormalizationKind};
use idf_align::model_io::{from_bytes, load_model, save_model, to_bytes};
use idf_align::pixel::Image;
use idf_align::synthetic::{generate_synthetic, SyntheticConfig};
use idf_align::Error;

fn data(count: usize, seed: u64) -> Vec<AnnotatedSample> {
    generate_synthetic(&SyntheticConfig { count, seed, ..Default::default() }).unwrap()
}

fn small_config(encoding: EncodingKind) -> CascadeConfig {
    CascadeConfig {
        encoding,
        candidates_per_landmark: 100,
        train_inits_per_sample: 3,
        initializations: 10,
        clusters: 3,
        seed: 11,
        ..CascadeConfig::with_shape(3, 3, 4)
    }
}

fn trained(encoding: EncodingKind) -> (CascadeModel, Vec<AnnotatedSample>) {
    let train_set = data(40, 1);
    let (model, log) = train(&train_set, &small_config(encoding)).unwrap();
    assert_eq!(log.stage_errors.len(), 4);
    assert!(log.stage_errors.iter().all(|e| e.is_finite()));
    (model, data(6, 2))
}

#[test]
fn truncation_matches_intermediate_shapes() {
    let (model, test) = trained(EncodingKind::Idf);
    for s in &test {
        let trace = model.run_from(&s.image, model.initial_shape(&s.bbox).unwrap()).unwrap();
        assert_eq!(trace.len(), 4);
        for stages in 0..=3 {
            let fitted = model.truncated(stages).fit(&s.image, &s.bbox, false).unwrap();
            assert_eq!(fitted, trace[stages]);
        }
    }
}

/// Moves image content by whole pixels, replicating edges so that clamped
/// reads agree with the original.
fn shift_image(img: &Image, dx: usize, dy: usize) -> Image {
    let (w, h) = (img.width() + 2 * dx, img.height() + 2 * dy);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let sx = x.saturating_sub(dx).min(img.width() - 1);
            let sy = y.saturating_sub(dy).min(img.height() - 1);
            data.push(img.get(sx, sy));
        }
    }
    Image::new(w, h, data).unwrap()
}

#[test]
fn fitting_is_translation_equivariant() {
    let (model, test) = trained(EncodingKind::Idf);
    let (dx, dy) = (13usize, 7usize);
    for s in &test {
        let a = model.fit(&s.image, &s.bbox, false).unwrap();
        let b = s.bbox;
        let moved = BoundingBox::new(b.x + dx as f64, b.y + dy as f64, b.width, b.height).unwrap();
        let c = model.fit(&shift_image(&s.image, dx, dy), &moved, false).unwrap();
        for (p, q) in a.points().iter().zip(c.points()) {
            assert!((q.x - p.x - dx as f64).abs() < 1e-6 && (q.y - p.y - dy as f64).abs() < 1e-6);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let train_set = data(30, 3);
    for enc in [EncodingKind::Idf, EncodingKind::Lbf] {
        let cfg = small_config(enc);
        let (a, la) = train(&train_set, &cfg).unwrap();
        let (b, lb) = train(&train_set, &cfg).unwrap();
        assert_eq!(to_bytes(&a), to_bytes(&b));
        assert_eq!(la, lb);
        let (c, _) = train(&train_set, &CascadeConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(to_bytes(&a), to_bytes(&c));
    }
}

#[test]
fn save_load_fit_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for enc in [EncodingKind::Idf, EncodingKind::Lbf, EncodingKind::Index] {
        let (model, test) = trained(enc);
        let path = dir.path().join(format!("{enc}.model"));
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        for s in &test {
            for multi in [false, true] {
                let a = model.fit(&s.image, &s.bbox, multi).unwrap();
                let b = loaded.fit(&s.image, &s.bbox, multi).unwrap();
                assert!(a.points().iter().zip(b.points()).all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.y.to_bits() == q.y.to_bits()));
            }
        }
    }
}

#[test]
fn malformed_model_files_are_rejected() {
    let (model, _) = trained(EncodingKind::Idf);
    let bytes = to_bytes(&model);
    for cut in [0, 3, 7, 50, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(from_bytes(&extra), Err(Error::Format(_))));
    let mut bad_kind = bytes.clone();
    bad_kind[8 + 20] = 9;
    assert!(matches!(from_bytes(&bad_kind), Err(Error::Format(_))));
}

#[test]
fn multi_init_median_is_reasonable() {
    let (model, test) = trained(EncodingKind::Idf);
    assert!(!model.init_shapes.is_empty());
    for s in &test {
        let single = model.fit(&s.image, &s.bbox, false).unwrap();
        let multi = model.fit(&s.image, &s.bbox, true).unwrap();
        let e1 = idf_align::geometry::alignment_error(&single, &s.shape, NormalizationKind::BoxDiagonal).unwrap();
        let e2 = idf_align::geometry::alignment_error(&multi, &s.shape, NormalizationKind::BoxDiagonal).unwrap();
        assert!(e1 < 0.1 && e2 < 0.1);
    }
}

#[test]
fn estimated_size_matches_serialized_size() {
    let train_set = data(40, 1);
    let cfg = CascadeConfig { initializations: 10, ..small_config(EncodingKind::Lbf) };
    let (model, _) = train(&train_set, &cfg).unwrap();
    assert_eq!(model.init_shapes.len(), 10);
    let dims = idf_align::cascade::report_dimensions(&cfg);
    assert_eq!(dims.estimated_model_bytes, to_bytes(&model).len());
    let params: usize = model.stages.iter().map(|s| s.regressor.parameter_count()).sum();
    assert_eq!(dims.linear_parameters + dims.bias_parameters, params);
}

use idf_align::dataset::{derive_bbox, parse_pts, write_pts};
use idf_align::encoding::{encode_lbf, feature_dim, idf_range, idf_value, normalize_idf, Encoder, EncodingKind, IdfParams};
use idf_align::forest::{leaves_for_depth, path_of_leaf, train_forest, ForestTrainConfig, LandmarkTrainingSet};
use idf_align::geometry::{
    alignment_error, denormalize_from_box, estimate_similarity, normalize_to_box, BoundingBox, NormalizationKind, Point,
    Shape, SimilarityTransform,
};
use idf_align::pixel::{pixel_diff, sample_candidates, CandidateSet, Image, PixelOffset, PixelPair};
use idf_align::rng::seeded;
use idf_align::shape_init::{kmeans_shapes, select_initializations};
use idf_align::synthetic::{generate_synthetic, SyntheticConfig};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point> {
    (-100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y)| Point::new(x, y))
}

fn shape(n: std::ops::Range<usize>) -> impl Strategy<Value = Shape> {
    prop::collection::vec(point(), n).prop_map(|p| Shape::new(p).unwrap())
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 1.0..200.0f64, 1.0..200.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
}

fn similarity() -> impl Strategy<Value = SimilarityTransform> {
    (0.5..2.0f64, -3.0..3.0f64, point()).prop_map(|(s, r, t)| SimilarityTransform::new(s, r, t).unwrap())
}

fn image(w: usize, h: usize, max: u8) -> impl Strategy<Value = Image> {
    prop::collection::vec(0..=max, w * h).prop_map(move |d| Image::new(w, h, d).unwrap())
}

proptest! {
    #[test]
    fn box_normalization_round_trips(s in shape(1..30), b in bbox()) {
        let back = denormalize_from_box(&normalize_to_box(&s, &b).unwrap(), &b).unwrap();
        for (p, q) in back.points().iter().zip(s.points()) {
            prop_assert!(p.distance(*q) < 1e-9);
        }
    }

    #[test]
    fn similarity_is_recovered(s in shape(3..40), t in similarity()) {
        prop_assume!(s.points().iter().any(|p| p.distance(s.centroid()) > 1.0));
        let got = estimate_similarity(&s, &t.apply_shape(&s)).unwrap();
        prop_assert!((got.scale - t.scale).abs() < 1e-9);
        prop_assert!((got.rotation - t.rotation).abs() < 1e-9);
        prop_assert!(got.translation.distance(t.translation) < 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity(t in similarity(), p in point()) {
        let q = t.compose(&t.inverse()).apply(p);
        prop_assert!(q.distance(p) < 1e-9);
        let q = t.inverse().compose(&t).apply(p);
        prop_assert!(q.distance(p) < 1e-9);
    }

    #[test]
    fn error_zero_iff_identical(s in shape(68..69), j in 0usize..68, d in 0.001..5.0f64) {
        prop_assume!(s.points()[36].distance(s.points()[45]) > 1.0);
        for norm in [NormalizationKind::InterOcular, NormalizationKind::InterPupil, NormalizationKind::BoxDiagonal] {
            prop_assert_eq!(alignment_error(&s, &s, norm).unwrap(), 0.0);
        }
        let mut moved = s.clone();
        moved.points_mut()[j].x += d;
        prop_assert!(alignment_error(&moved, &s, NormalizationKind::BoxDiagonal).unwrap() > 0.0);
    }

    #[test]
    fn inter_ocular_error_is_similarity_invariant(a in shape(68..69), b in shape(68..69), t in similarity()) {
        prop_assume!(a.points()[36].distance(a.points()[45]) > 1.0);
        let e = alignment_error(&b, &a, NormalizationKind::InterOcular).unwrap();
        let f = alignment_error(&t.apply_shape(&b), &t.apply_shape(&a), NormalizationKind::InterOcular).unwrap();
        prop_assert!((e - f).abs() <= 1e-9 * e.max(1.0));
    }

    #[test]
    fn pixel_diff_range_and_shift_invariance(
        img in image(12, 9, 200),
        shift in 0u8..=55,
        seed in any::<u64>(),
        anchor in (0.0..12.0f64, 0.0..9.0f64),
        t in similarity(),
    ) {
        let offsets = sample_candidates(&mut seeded(seed, &[]), 0.5, 20).unwrap();
        let cands = CandidateSet { landmark_index: 0, stage_index: 0, radius: 0.5, offsets };
        let s = Shape::new(vec![Point::new(anchor.0, anchor.1)]).unwrap();
        let mut lifted = img.clone();
        lifted.data_mut().iter_mut().for_each(|v| *v += shift);
        for first in 0..20u32 {
            let pair = PixelPair::new(first, (first + 7) % 20, 20).unwrap();
            let d = pixel_diff(&img, &s, 0, pair, &cands, &t);
            prop_assert!((-255..=255).contains(&d));
            prop_assert_eq!(d, pixel_diff(&lifted, &s, 0, pair, &cands, &t));
        }
    }

    #[test]
    fn zero_offsets_give_zero_diff(img in image(7, 7, 255), x in 0.0..7.0f64, y in 0.0..7.0f64) {
        let cands = CandidateSet { landmark_index: 0, stage_index: 0, radius: 0.1, offsets: vec![PixelOffset { dx: 0.0, dy: 0.0 }; 2] };
        let s = Shape::new(vec![Point::new(x, y)]).unwrap();
        let pair = PixelPair::new(0, 1, 2).unwrap();
        prop_assert_eq!(pixel_diff(&img, &s, 0, pair, &cands, &SimilarityTransform::identity()), 0);
    }

    #[test]
    fn offsets_stay_in_radius(seed in any::<u64>(), r in 0.01..1.0f64) {
        let offs = sample_candidates(&mut seeded(seed, &[]), r, 200).unwrap();
        prop_assert!(offs.iter().all(|o| o.dx * o.dx + o.dy * o.dy <= r * r));
        prop_assert_eq!(offs, sample_candidates(&mut seeded(seed, &[]), r, 200).unwrap());
    }

    #[test]
    fn forests_route_totally_and_deterministically(seed in any::<u64>(), n in 2usize..60, depth in 2usize..6) {
        let mut rng = seeded(seed, &[1]);
        use rand::Rng;
        let c = 12;
        let intensities: Vec<u8> = (0..n * c).map(|_| rng.random()).collect();
        let targets: Vec<Point> = (0..n).map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let set = LandmarkTrainingSet::from_parts(c, intensities, targets).unwrap();
        let cfg = ForestTrainConfig { depth, trees: 3, ..ForestTrainConfig::default() };
        let a = train_forest(&set, &cfg, seed, 0, 0).unwrap();
        prop_assert_eq!(&a, &train_forest(&set, &cfg, seed, 0, 0).unwrap());
        for tree in &a.trees {
            prop_assert!(tree.nodes().iter().all(|n| (-255..=255).contains(&n.threshold)));
            for i in 0..n {
                let leaf = set.leaf_index(tree, i);
                prop_assert!(leaf < leaves_for_depth(depth));
                let path = path_of_leaf(leaf, depth);
                prop_assert!(path.iter().all(|&v| v == 1 || v == 2));
            }
        }
    }

    #[test]
    fn normalized_idf_in_unit_interval(levels in 2usize..10, k in 2u32..40, leaf in any::<usize>()) {
        let depth = levels + 1;
        let path = path_of_leaf(leaf % leaves_for_depth(depth), depth);
        let v = normalize_idf(idf_value(&path, k).unwrap(), idf_range(levels, k).unwrap()).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn lbf_blocks_are_one_hot(depth in 2usize..9, leaves in prop::collection::vec(any::<u32>(), 1..40)) {
        let enc = Encoder::new(EncodingKind::Lbf, depth, IdfParams::default()).unwrap();
        let block = leaves_for_depth(depth);
        let leaves: Vec<u32> = leaves.iter().map(|l| l % block as u32).collect();
        let v = enc.encode(&leaves).values;
        prop_assert_eq!(v.len(), leaves.len() * block);
        for chunk in v.chunks(block) {
            prop_assert_eq!(chunk.iter().sum::<f64>(), 1.0);
            prop_assert!(chunk.iter().all(|&x| x == 0.0 || x == 1.0));
        }
        prop_assert_eq!(encode_lbf(leaves[0] as usize, block).unwrap(), v[..block].to_vec());
    }

    #[test]
    fn dimension_formulas(l in 1usize..100, t in 1usize..20, d in 2usize..10) {
        let idf = feature_dim(EncodingKind::Idf, l, t, d);
        prop_assert_eq!(idf, l * t);
        prop_assert_eq!(feature_dim(EncodingKind::Lbf, l, t, d), idf << (d - 1));
        prop_assert_eq!(feature_dim(EncodingKind::Index, l, t, d), idf);
    }

    #[test]
    fn kmeans_and_selection(seed in any::<u64>(), n in 3usize..40, k in 1usize..6, count in 1usize..40) {
        use rand::Rng;
        let mut rng = seeded(seed, &[2]);
        let shapes: Vec<Shape> = (0..n)
            .map(|_| Shape::new((0..4).map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).unwrap())
            .collect();
        let k = k.min(n);
        let c = kmeans_shapes(&shapes, k, 50, &mut seeded(seed, &[3])).unwrap();
        prop_assert_eq!(&c, &kmeans_shapes(&shapes, k, 50, &mut seeded(seed, &[3])).unwrap());
        prop_assert!(c.objective.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        prop_assert_eq!(c.clusters.len(), k);
        prop_assert!(c.clusters.iter().all(|cl| !cl.member_indices.is_empty()));
        let count = count.clamp(k, n);
        let init = select_initializations(&c.clusters, &shapes, count).unwrap();
        prop_assert_eq!(init.len(), count);
        for (s, &src) in init.shapes.iter().zip(&init.source_indices) {
            prop_assert_eq!(s, &shapes[src]);
        }
        for id in 0..k {
            prop_assert!(init.cluster_ids.contains(&id));
        }
    }

    #[test]
    fn pts_round_trip(pts in prop::collection::vec(point(), 1..80)) {
        prop_assert_eq!(parse_pts(&write_pts(&pts)).unwrap(), pts);
    }

    #[test]
    fn derived_box_contains_points(pts in prop::collection::vec(point(), 1..50), pad in 0.0..1.0f64) {
        // coincident or collinear points have no area and are rejected
        let Ok(b) = derive_bbox(&pts, pad) else { return Ok(()) };
        prop_assert!(pts.iter().all(|p| b.contains(*p)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_is_pure_and_boxed(seed in any::<u64>()) {
        let cfg = SyntheticConfig { count: 3, seed, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&a, &generate_synthetic(&cfg).unwrap());
        for s in &a {
            prop_assert!(s.shape.points().iter().all(|p| s.bbox.contains(*p)));
        }
    }
}

#[test]
fn single_split_all_left_normalizes_to_zero() {
    // with one level the all-left value equals the conventional minimum
    for k in [2, 10] {
        assert_eq!(normalize_idf(idf_value(&[1], k).unwrap(), idf_range(1, k).unwrap()).unwrap(), 0.0);
    }
}

#[test]
fn idf_is_injective() {
    for k in [2, 3, 10, 30] {
        for levels in 1..=8 {
            let depth = levels + 1;
            let mut values: Vec<f64> =
                (0..leaves_for_depth(depth)).map(|leaf| idf_value(&path_of_leaf(leaf, depth), k).unwrap()).collect();
            values.sort_by(f64::total_cmp);
            assert!(values.windows(2).all(|w| w[0] < w[1]), "k={k} L={levels}");
        }
    }
}

fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[test]
fn closer_relatives_have_closer_values() {
    for k in [3, 10, 30] {
        for levels in 1..=7 {
            let depth = levels + 1;
            let paths: Vec<Vec<u8>> = (0..leaves_for_depth(depth)).map(|l| path_of_leaf(l, depth)).collect();
            let vals: Vec<f64> = paths.iter().map(|p| idf_value(p, k).unwrap()).collect();
            for a in 0..paths.len() {
                for b in 0..paths.len() {
                    for c in 0..paths.len() {
                        if common_prefix(&paths[a], &paths[b]) > common_prefix(&paths[a], &paths[c]) {
                            assert!((vals[a] - vals[b]).abs() < (vals[a] - vals[c]).abs(), "k={k} L={levels}");
                        }
                    }
                }
            }
        }
    }
}

//! Library results checked against independent reference computations.

use idf_align::forest::{split_score, train_tree_on, ForestTrainConfig, LandmarkTrainingSet, NodeTrace};
use idf_align::geometry::{estimate_similarity, Point, Shape, SimilarityTransform};
use idf_align::rng::seeded;
use idf_align::solver::{fit_ridge, fit_ridge_sparse, Matrix, RidgeConfig, SparseMatrix};
use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect()
}

/// Trace of the population covariance, via explicit outer products.
fn covariance_trace(points: &[Point]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + Vector2::new(p.x, p.y)) / n;
    let cov = points.iter().fold(Matrix2::zeros(), |a, p| {
        let d = Vector2::new(p.x, p.y) - mean;
        a + d * d.transpose()
    }) / n;
    cov.trace()
}

fn weighted_oracle(left: &[Point], right: &[Point]) -> f64 {
    let n = (left.len() + right.len()) as f64;
    (left.len() as f64 * covariance_trace(left) + right.len() as f64 * covariance_trace(right)) / n
}

#[test]
fn split_score_matches_covariance() {
    let mut rng = seeded(1, &[]);
    for _ in 0..200 {
        let a = rng.random_range(0..40);
        let b = rng.random_range(if a == 0 { 1 } else { 0 }..40);
        let left = random_points(&mut rng, a);
        let right = random_points(&mut rng, b);
        let got = split_score(&left, &right).unwrap();
        assert!((got - weighted_oracle(&left, &right)).abs() <= 1e-10, "{got}");
        // within-group variance never exceeds the pooled variance
        let all: Vec<Point> = left.iter().chain(&right).copied().collect();
        assert!(got <= covariance_trace(&all) + 1e-10);
    }
}

#[test]
fn chosen_split_is_exhaustive_argmin() {
    let cfg = ForestTrainConfig { depth: 5, ..ForestTrainConfig::default() };
    let candidates = 30;
    for trial in 0..8u64 {
        let mut rng = seeded(100 + trial, &[]);
        let n = rng.random_range(20..=200);
        let intensities: Vec<u8> = (0..n * candidates).map(|_| rng.random()).collect();
        // targets correlated with one pixel so real splits exist
        let targets: Vec<Point> = (0..n)
            .map(|i| {
                let v = intensities[i * candidates + 3] as f64 / 50.0;
                Point::new(v + rng.random_range(-0.5..0.5), -v + rng.random_range(-0.5..0.5))
            })
            .collect();
        let set = LandmarkTrainingSet::from_parts(candidates, intensities.clone(), targets.clone()).unwrap();
        let subset: Vec<usize> = (0..n).collect();
        let mut trace: Vec<NodeTrace> = Vec::new();
        train_tree_on(&set, &subset, &cfg, &mut seeded(trial, &[]), Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 15);
        let mut chosen_any = false;
        for node in &trace {
            let reach: Vec<Point> = node.samples.iter().map(|&s| targets[s]).collect();
            let scores: Vec<f64> = node
                .proposals
                .iter()
                .map(|(pair, threshold)| {
                    let (mut l, mut r) = (Vec::new(), Vec::new());
                    for &s in &node.samples {
                        let f = intensities[s * candidates + pair.first as usize] as i32
                            - intensities[s * candidates + pair.second as usize] as i32;
                        if f < *threshold { l.push(targets[s]) } else { r.push(targets[s]) }
                    }
                    weighted_oracle(&l, &r)
                })
                .collect();
            let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
            match node.chosen {
                Some(i) => {
                    chosen_any = true;
                    assert!(scores[i] <= best + 1e-9, "node {} picked {} over {}", node.node, scores[i], best);
                    assert!(scores[..i].iter().all(|&s| s > scores[i] - 1e-9), "earlier proposal ties");
                }
                None => assert!(reach.len() < 2 || best >= covariance_trace(&reach) - 1e-9),
            }
        }
        assert!(chosen_any);
    }
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Centered regularized normal equations solved with LU.
fn ridge_oracle(x: &Matrix, y: &Matrix, lambda: f64) -> (DMatrix<f64>, Vec<f64>) {
    let (x, y) = (to_na(x), to_na(y));
    let xm = x.row_mean();
    let ym = y.row_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for mut r in xc.row_iter_mut() {
        r -= &xm;
    }
    for mut r in yc.row_iter_mut() {
        r -= &ym;
    }
    let p = x.ncols();
    let a = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
    let w = a.lu().solve(&(xc.transpose() * &yc)).unwrap();
    let bias = (&ym - &xm * &w).iter().copied().collect();
    (w, bias)
}

#[test]
fn ridge_matches_normal_equations() {
    let mut rng = seeded(7, &[]);
    // primal (p <= n) and dual (p > n) regimes
    for &(n, p, q, lambda) in &[(40, 5, 3, 0.1), (30, 12, 2, 1.0), (8, 25, 4, 0.5), (15, 60, 2, 2.0), (50, 3, 1, 0.0)] {
        let x = random_matrix(&mut rng, n, p);
        let y = random_matrix(&mut rng, n, q);
        let model = fit_ridge(&x, &y, &RidgeConfig { lambda }).unwrap();
        let (w, b) = ridge_oracle(&x, &y, lambda);
        let got = to_na(&model.weights);
        assert!((&got - &w).norm() / w.norm().max(1.0) < 1e-8, "n={n} p={p}");
        for (g, o) in model.bias.iter().zip(&b) {
            assert!((g - o).abs() < 1e-8);
        }
        // relative normal-equation residual
        let xn = to_na(&x);
        let yn = to_na(&y);
        let mut xc = xn.clone();
        let mut yc = yn.clone();
        let xm = xn.row_mean();
        let ym = yn.row_mean();
        for mut r in xc.row_iter_mut() {
            r -= &xm;
        }
        for mut r in yc.row_iter_mut() {
            r -= &ym;
        }
        let rhs = xc.transpose() * &yc;
        let lhs = (xc.transpose() * &xc + DMatrix::identity(p, p) * lambda) * &got;
        assert!((lhs - &rhs).norm() / rhs.norm() < 1e-8);
    }
}

#[test]
fn sparse_ridge_matches_dense() {
    let mut rng = seeded(8, &[]);
    for &(n, p, lambda) in &[(30, 10, 1.0), (12, 40, 0.5)] {
        let mut dense = Matrix::zeros(n, p);
        let mut sparse = SparseMatrix::new(p);
        for i in 0..n {
            let mut row = Vec::new();
            for j in 0..p {
                if rng.random_bool(0.3) {
                    let v = rng.random_range(-2.0..2.0);
                    dense.set(i, j, v);
                    row.push((j as u32, v));
                }
            }
            sparse.push_row(row).unwrap();
        }
        let y = random_matrix(&mut rng, n, 3);
        let a = fit_ridge(&dense, &y, &RidgeConfig { lambda }).unwrap();
        let b = fit_ridge_sparse(&sparse, &y, &RidgeConfig { lambda }).unwrap();
        for (u, v) in a.weights.data().iter().zip(b.weights.data()) {
            assert!((u - v).abs() < 1e-10);
        }
        for (u, v) in a.bias.iter().zip(&b.bias) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

#[test]
fn shrinkage_is_monotone_and_vanishes() {
    let mut rng = seeded(9, &[]);
    let x = random_matrix(&mut rng, 40, 6);
    let y = random_matrix(&mut rng, 40, 2);
    let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0, 100.0]
        .iter()
        .map(|&l| fit_ridge(&x, &y, &RidgeConfig { lambda: l }).unwrap().weights.frobenius_norm())
        .collect();
    assert!(norms.windows(2).all(|w| w[0] >= w[1]));
    let big = fit_ridge(&x, &y, &RidgeConfig { lambda: 1e14 }).unwrap();
    assert!(big.weights.frobenius_norm() < 1e-10);
    let ym = to_na(&y).row_mean();
    let pred = big.predict(x.row(0)).unwrap();
    for (p, m) in pred.iter().zip(ym.iter()) {
        assert!((p - m).abs() < 1e-9);
    }
}

/// Umeyama-style similarity via SVD of the cross-covariance.
fn similarity_oracle(from: &Shape, to: &Shape) -> (f64, f64) {
    let n = from.landmark_count() as f64;
    let (cf, ct) = (from.centroid(), to.centroid());
    let mut cov = Matrix2::zeros();
    let mut var = 0.0;
    for (a, b) in from.points().iter().zip(to.points()) {
        let a = Vector2::new(a.x - cf.x, a.y - cf.y);
        let b = Vector2::new(b.x - ct.x, b.y - ct.y);
        cov += b * a.transpose() / n;
        var += a.norm_squared() / n;
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix2::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(1, 1)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (svd.singular_values.component_mul(&Vector2::new(s[(0, 0)], s[(1, 1)]))).sum() / var;
    (scale, r[(1, 0)].atan2(r[(0, 0)]))
}

#[test]
fn procrustes_recovers_random_similarities() {
    let mut rng = seeded(10, &[]);
    for _ in 0..200 {
        let m = rng.random_range(3..70);
        let shape = Shape::new(random_points(&mut rng, m)).unwrap();
        let t = SimilarityTransform::new(
            rng.random_range(0.5..2.0),
            rng.random_range(-3.1..3.1),
            Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
        )
        .unwrap();
        let got = estimate_similarity(&shape, &t.apply_shape(&shape)).unwrap();
        assert!((got.scale - t.scale).abs() < 1e-9);
        assert!((got.rotation - t.rotation).abs() < 1e-9);
        assert!((got.translation.x - t.translation.x).abs() < 1e-9);
        assert!((got.translation.y - t.translation.y).abs() < 1e-9);

        // noisy targets: agree with the SVD solution
        let noisy = Shape::new(
            t.apply_shape(&shape).points().iter().map(|p| Point::new(p.x + rng.random_range(-1.0..1.0), p.y)).collect(),
        )
        .unwrap();
        let est = estimate_similarity(&shape, &noisy).unwrap();
        let (scale, rotation) = similarity_oracle(&shape, &noisy);
        assert!((est.scale - scale).abs() < 1e-9);
        let dr = (est.rotation - rotation).rem_euclid(2.0 * std::f64::consts::PI);
        assert!(dr < 1e-9 || 2.0 * std::f64::consts::PI - dr < 1e-9);
    }
}

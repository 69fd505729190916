//! Representative initial shapes: k-means over box-normalized training
//! shapes, then the members nearest each centroid.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::Shape;
use crate::rng::{seeded, stream, Rng};

pub const DEFAULT_CLUSTERS: usize = 7;
pub const DEFAULT_INITIALIZATIONS: usize = 50;
/// Starting shapes per training sample; the first is always the mean shape.
pub const DEFAULT_TRAIN_INITS_PER_SAMPLE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCluster {
    pub centroid: Shape,
    pub member_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub clusters: Vec<ShapeCluster>,
    /// Within-cluster sum of squared distances after every assignment step.
    pub objective: Vec<f64>,
}

/// Initialization shapes in the normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InitSet {
    pub shapes: Vec<Shape>,
    pub cluster_ids: Vec<usize>,
    /// Index of the training shape each initialization was copied from.
    pub source_indices: Vec<usize>,
}

impl InitSet {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(vectors: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(vectors[pick].clone());
        let last = centroids.last().expect("just pushed");
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, last));
        }
    }
    centroids
}

fn update_centroids(vectors: &[Vec<f64>], assign: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = vectors[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (v, &c) in vectors.iter().zip(assign) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(v) {
            *s += x;
        }
    }
    for ((centroid, sum), count) in centroids.iter_mut().zip(sums).zip(counts) {
        if count > 0 {
            *centroid = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(vectors: &[Vec<f64>], assign: &mut [usize], centroids: &mut [Vec<f64>]) {
    loop {
        let mut counts = vec![0usize; centroids.len()];
        assign.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, (v, &c)) in vectors.iter().zip(assign.iter()).enumerate() {
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(v, &centroids[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        centroids[empty] = vectors[i].clone();
        assign[i] = empty;
    }
}

fn objective(vectors: &[Vec<f64>], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    vectors.iter().zip(assign).map(|(v, &c)| sq_dist(v, &centroids[c])).sum()
}

/// Lloyd's k-means on flattened shape vectors with k-means++ seeding.
pub fn kmeans_shapes(shapes: &[Shape], k: usize, max_iters: usize, rng: &mut Rng) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if shapes.len() < k {
        return Err(Error::InvalidArgument(format!("{} shapes cannot form {k} clusters", shapes.len())));
    }
    let l = shapes[0].landmark_count();
    if let Some(s) = shapes.iter().find(|s| s.landmark_count() != l) {
        return Err(Error::LandmarkMismatch { expected: l, found: s.landmark_count() });
    }
    let vectors: Vec<Vec<f64>> = shapes.iter().map(Shape::to_flat).collect();
    let mut centroids = plus_plus_seeds(&vectors, k, rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut next: Vec<usize> = vectors.iter().map(|v| nearest(v, &centroids).0).collect();
        reseed_empty(&vectors, &mut next, &mut centroids);
        let obj = objective(&vectors, &next, &centroids);
        debug_assert!(history.last().is_none_or(|&prev: &f64| obj <= prev + 1e-9 * prev.abs().max(1.0)));
        history.push(obj);
        let converged = next == assign;
        assign = next;
        update_centroids(&vectors, &assign, &mut centroids);
        if converged {
            break;
        }
    }

    let mut members = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    let clusters = centroids
        .into_iter()
        .zip(members)
        .map(|(c, member_indices)| Ok(ShapeCluster { centroid: Shape::from_flat(&c)?, member_indices }))
        .collect::<Result<_>>()?;
    Ok(Clustering { clusters, objective: history })
}

/// Per-cluster quotas: one each, the rest proportional to cluster size with
/// largest-remainder rounding, never more than a cluster holds.
fn quotas(sizes: &[usize], count: usize) -> Vec<usize> {
    let k = sizes.len();
    let n: usize = sizes.iter().sum();
    let rest = count - k;
    let mut quota: Vec<usize> = sizes.iter().map(|&s| 1 + rest * s / n).collect();
    let mut remainders: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| ((rest * s) % n, i)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = count - quota.iter().sum::<usize>();
    for &(_, i) in remainders.iter().take(missing) {
        quota[i] += 1;
    }
    // spill anything above capacity onto clusters with room, largest room first
    let mut excess = 0;
    for (q, &s) in quota.iter_mut().zip(sizes) {
        if *q > s {
            excess += *q - s;
            *q = s;
        }
    }
    while excess > 0 {
        let i = (0..k).max_by(|&a, &b| (sizes[a] - quota[a]).cmp(&(sizes[b] - quota[b])).then(b.cmp(&a))).expect("k > 0");
        if sizes[i] == quota[i] {
            break;
        }
        quota[i] += 1;
        excess -= 1;
    }
    quota
}

/// Picks `count` exemplar training shapes spread over the clusters.
pub fn select_initializations(clusters: &[ShapeCluster], shapes: &[Shape], count: usize) -> Result<InitSet> {
    let nonempty: Vec<&ShapeCluster> = clusters.iter().filter(|c| !c.member_indices.is_empty()).collect();
    if nonempty.is_empty() {
        return Err(Error::Empty("no populated clusters"));
    }
    if count < nonempty.len() {
        return Err(Error::InvalidArgument(format!(
            "{count} initializations cannot cover {} clusters",
            nonempty.len()
        )));
    }
    let sizes: Vec<usize> = nonempty.iter().map(|c| c.member_indices.len()).collect();
    let total: usize = sizes.iter().sum();
    if count > total {
        return Err(Error::InvalidArgument(format!("{count} initializations requested from {total} shapes")));
    }
    let quota = quotas(&sizes, count);
    let mut set = InitSet { shapes: Vec::new(), cluster_ids: Vec::new(), source_indices: Vec::new() };
    for (cid, (cluster, q)) in clusters.iter().filter(|c| !c.member_indices.is_empty()).zip(quota).enumerate() {
        let centroid = cluster.centroid.to_flat();
        let mut ranked: Vec<(f64, usize)> = cluster
            .member_indices
            .iter()
            .map(|&i| {
                let shape = shapes.get(i).ok_or_else(|| Error::InvalidArgument(format!("member {i} out of range")))?;
                Ok((sq_dist(&shape.to_flat(), &centroid), i))
            })
            .collect::<Result<_>>()?;
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in ranked.iter().take(q) {
            set.shapes.push(shapes[i].clone());
            set.cluster_ids.push(cid);
            set.source_indices.push(i);
        }
    }
    Ok(set)
}

/// Clusters normalized training shapes and selects initializations,
/// shrinking `clusters` and `count` when the training set is smaller.
pub fn build_init_set(normalized: &[Shape], clusters: usize, count: usize, seed: u64) -> Result<InitSet> {
    if normalized.is_empty() {
        return Err(Error::Empty("no training shapes"));
    }
    let k = clusters.clamp(1, normalized.len());
    let count = count.clamp(k, normalized.len());
    let clustering = kmeans_shapes(normalized, k, 100, &mut seeded(seed, &[stream::KMEANS]))?;
    select_initializations(&clustering.clusters, normalized, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn shape(coords: &[(f64, f64)]) -> Shape {
        Shape::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn single_cluster_is_mean() {
        let shapes = vec![
            shape(&[(0.0, 0.0), (1.0, 2.0)]),
            shape(&[(2.0, 1.0), (3.0, 3.0)]),
            shape(&[(1.0, -1.0), (0.5, 0.5)]),
        ];
        let c = kmeans_shapes(&shapes, 1, 10, &mut seeded(1, &[])).unwrap();
        let expected = [1.0, 0.0, 1.5, 11.0 / 6.0];
        for (a, b) in c.clusters[0].centroid.to_flat().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(c.clusters[0].member_indices, vec![0, 1, 2]);
    }

    #[test]
    fn duplicates_do_not_break() {
        let shapes = vec![shape(&[(1.0, 1.0), (2.0, 2.0)]); 6];
        let c = kmeans_shapes(&shapes, 2, 20, &mut seeded(5, &[])).unwrap();
        assert_eq!(c.clusters.len(), 2);
        assert!(c.clusters.iter().all(|cl| !cl.member_indices.is_empty()));
        assert!(c.clusters.iter().all(|cl| cl.centroid.to_flat().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn too_few_shapes() {
        let shapes = vec![shape(&[(1.0, 1.0)])];
        assert!(kmeans_shapes(&shapes, 2, 10, &mut seeded(0, &[])).is_err());
        assert!(kmeans_shapes(&shapes, 0, 10, &mut seeded(0, &[])).is_err());
    }

    #[test]
    fn quota_rules() {
        assert_eq!(quotas(&[10, 10, 10], 3), vec![1, 1, 1]);
        let q = quotas(&[40, 30, 20, 10, 5, 3, 2], 50);
        assert_eq!(q.iter().sum::<usize>(), 50);
        assert!(q.iter().all(|&v| v >= 1));
        assert_eq!(quotas(&[1, 9], 5).iter().sum::<usize>(), 5);
        assert!(quotas(&[1, 9], 10).iter().zip([1, 9]).all(|(q, s)| *q <= s));
    }

    #[test]
    fn one_per_cluster_nearest_member() {
        let shapes = vec![
            shape(&[(0.0, 0.0)]),
            shape(&[(0.2, 0.0)]),
            shape(&[(10.0, 0.0)]),
            shape(&[(10.5, 0.0)]),
        ];
        let clusters = vec![
            ShapeCluster { centroid: shape(&[(0.15, 0.0)]), member_indices: vec![0, 1] },
            ShapeCluster { centroid: shape(&[(10.0, 0.0)]), member_indices: vec![2, 3] },
        ];
        let set = select_initializations(&clusters, &shapes, 2).unwrap();
        assert_eq!(set.source_indices, vec![1, 2]);
        assert_eq!(set.cluster_ids, vec![0, 1]);
        assert!(select_initializations(&clusters, &shapes, 1).is_err());
        assert!(select_initializations(&clusters, &shapes, 5).is_err());
    }
}

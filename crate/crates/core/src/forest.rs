//! Per-landmark regression forests over pixel-difference splits.
//!
//! Trees are complete: a tree of depth `d` has `2^(d-1) - 1` split nodes
//! stored in heap order and `2^(d-1)` leaves numbered left to right. A node
//! that cannot be split usefully becomes a pass-through node whose threshold
//! sends every input to the right child, so the leaf count never changes.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, SimilarityTransform};
use crate::pixel::{pixel_diff_linear, CandidateSet, Image, PixelPair};
use crate::rng::{seeded, stream, Rng};

/// Threshold of a pass-through node: no pixel difference is below it.
pub const PASS_THROUGH_THRESHOLD: i32 = -255;

/// Path value of a left (`1`) or right (`2`) branch.
pub const LEFT: u8 = 1;
pub const RIGHT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitNode {
    pub pair: PixelPair,
    pub threshold: i32,
}

impl SplitNode {
    pub fn pass_through() -> Self {
        Self { pair: PixelPair { first: 0, second: 1 }, threshold: PASS_THROUGH_THRESHOLD }
    }

    pub fn is_pass_through(&self) -> bool {
        self.threshold == PASS_THROUGH_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    depth: usize,
    nodes: Vec<SplitNode>,
    leaves: Vec<Point>,
}

/// Number of leaves of a complete tree of depth `depth`.
pub const fn leaves_for_depth(depth: usize) -> usize {
    1 << (depth - 1)
}

impl DecisionTree {
    pub fn from_parts(depth: usize, nodes: Vec<SplitNode>, leaves: Vec<Point>) -> Result<Self> {
        if !(2..=24).contains(&depth) {
            return Err(Error::InvalidArgument(format!("tree depth {depth} outside 2..=24")));
        }
        let leaf_count = leaves_for_depth(depth);
        if nodes.len() != leaf_count - 1 || leaves.len() != leaf_count {
            return Err(Error::InvalidArgument(format!(
                "depth {depth} needs {} nodes and {leaf_count} leaves, got {} and {}",
                leaf_count - 1,
                nodes.len(),
                leaves.len()
            )));
        }
        if let Some(n) = nodes.iter().find(|n| !(-255..=255).contains(&n.threshold) || n.pair.first == n.pair.second) {
            return Err(Error::InvalidArgument(format!("invalid split node {n:?}")));
        }
        Ok(Self { depth, nodes, leaves })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn nodes(&self) -> &[SplitNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[Point] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf reached by a landmark at `anchor`.
    pub fn leaf_index(&self, image: &Image, anchor: Point, transform: &SimilarityTransform, candidates: &CandidateSet) -> usize {
        self.leaf_index_linear(image, anchor, transform.linear(), candidates)
    }

    /// As [`leaf_index`](Self::leaf_index) with the transform's linear part precomputed.
    #[inline]
    pub fn leaf_index_linear(&self, image: &Image, anchor: Point, lin: (f64, f64), candidates: &CandidateSet) -> usize {
        let mut node = 0;
        while node < self.nodes.len() {
            let split = self.nodes[node];
            let v = pixel_diff_linear(image, anchor, split.pair, candidates, lin);
            node = 2 * node + if v < split.threshold { 1 } else { 2 };
        }
        node - self.nodes.len()
    }

    /// Root-to-leaf path as `d - 1` values in `{1, 2}`.
    pub fn route(&self, image: &Image, anchor: Point, transform: &SimilarityTransform, candidates: &CandidateSet) -> Vec<u8> {
        path_of_leaf(self.leaf_index(image, anchor, transform, candidates), self.depth)
    }

    fn leaf_index_from_intensities(&self, intensities: &[u8]) -> usize {
        let mut node = 0;
        while node < self.nodes.len() {
            let split = self.nodes[node];
            let v = intensities[split.pair.first as usize] as i32 - intensities[split.pair.second as usize] as i32;
            node = 2 * node + if v < split.threshold { 1 } else { 2 };
        }
        node - self.nodes.len()
    }
}

/// Path values of leaf `leaf` in a tree of the given depth, root first.
pub fn path_of_leaf(leaf: usize, depth: usize) -> Vec<u8> {
    let levels = depth - 1;
    (0..levels).map(|i| if (leaf >> (levels - 1 - i)) & 1 == 0 { LEFT } else { RIGHT }).collect()
}

/// Inverse of [`path_of_leaf`].
pub fn leaf_of_path(path: &[u8]) -> usize {
    path.iter().fold(0, |acc, &v| (acc << 1) | usize::from(v == RIGHT))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub landmark_index: usize,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn new(landmark_index: usize, trees: Vec<DecisionTree>) -> Result<Self> {
        if let Some(first) = trees.first() {
            if trees.iter().any(|t| t.depth() != first.depth()) {
                return Err(Error::InvalidArgument("trees in a forest must share a depth".into()));
            }
        }
        Ok(Self { landmark_index, trees })
    }

    /// Mean of the reached leaf outputs over all trees.
    pub fn predict(&self, image: &Image, anchor: Point, transform: &SimilarityTransform, candidates: &CandidateSet) -> Point {
        if self.trees.is_empty() {
            return Point::default();
        }
        let lin = transform.linear();
        let (mut sx, mut sy) = (0.0, 0.0);
        for tree in &self.trees {
            let out = tree.leaves[tree.leaf_index_linear(image, anchor, lin, candidates)];
            sx += out.x;
            sy += out.y;
        }
        let n = self.trees.len() as f64;
        Point::new(sx / n, sy / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestTrainConfig {
    pub depth: usize,
    pub trees: usize,
    pub candidates_per_node: usize,
    pub thresholds_per_candidate: usize,
    pub min_samples_per_node: usize,
    pub bagging_fraction: f64,
}

impl Default for ForestTrainConfig {
    fn default() -> Self {
        Self {
            depth: 7,
            trees: 11,
            candidates_per_node: 50,
            thresholds_per_candidate: 1,
            min_samples_per_node: 2,
            bagging_fraction: 0.8,
        }
    }
}

impl ForestTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=24).contains(&self.depth) {
            return Err(Error::InvalidArgument(format!("tree depth {} outside 2..=24", self.depth)));
        }
        if self.trees == 0 || self.candidates_per_node == 0 || self.thresholds_per_candidate == 0 || self.min_samples_per_node == 0 {
            return Err(Error::InvalidArgument("forest counts must be positive".into()));
        }
        if !(self.bagging_fraction > 0.0 && self.bagging_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bagging fraction {} outside (0, 1]",
                self.bagging_fraction
            )));
        }
        Ok(())
    }
}

/// Sum of per-coordinate population variances.
fn variance_trace(targets: &[Point]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let n = targets.len() as f64;
    let mx = targets.iter().map(|p| p.x).sum::<f64>() / n;
    let my = targets.iter().map(|p| p.y).sum::<f64>() / n;
    targets.iter().map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2)).sum::<f64>() / n
}

/// Size-weighted variance of the two children of a split.
pub fn split_score(left: &[Point], right: &[Point]) -> Result<f64> {
    let total = left.len() + right.len();
    if total == 0 {
        return Err(Error::Empty("both sides of the split are empty"));
    }
    let total = total as f64;
    Ok(left.len() as f64 / total * variance_trace(left) + right.len() as f64 / total * variance_trace(right))
}

/// One training example for a single landmark's tree.
#[derive(Debug, Clone, Copy)]
pub struct TreeSample<'a> {
    pub image: &'a Image,
    pub anchor: Point,
    pub transform: SimilarityTransform,
    pub target: Point,
}

/// Candidate intensities and residual targets of every training instance for
/// one landmark, shared by all trees of its forest.
#[derive(Debug, Clone)]
pub struct LandmarkTrainingSet {
    candidate_count: usize,
    intensities: Vec<u8>,
    targets: Vec<Point>,
}

impl LandmarkTrainingSet {
    pub fn from_samples(samples: &[TreeSample<'_>], candidates: &CandidateSet) -> Self {
        let mut intensities = Vec::with_capacity(samples.len() * candidates.len());
        for s in samples {
            intensities.extend(candidates.intensities(s.image, s.anchor, &s.transform));
        }
        Self {
            candidate_count: candidates.len(),
            intensities,
            targets: samples.iter().map(|s| s.target).collect(),
        }
    }

    pub fn from_parts(candidate_count: usize, intensities: Vec<u8>, targets: Vec<Point>) -> Result<Self> {
        if intensities.len() != candidate_count * targets.len() {
            return Err(Error::InvalidArgument("intensity table does not match sample count".into()));
        }
        Ok(Self { candidate_count, intensities, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[Point] {
        &self.targets
    }

    #[inline]
    fn row(&self, sample: usize) -> &[u8] {
        &self.intensities[sample * self.candidate_count..(sample + 1) * self.candidate_count]
    }

    #[inline]
    fn feature(&self, sample: usize, pair: PixelPair) -> i32 {
        let row = self.row(sample);
        row[pair.first as usize] as i32 - row[pair.second as usize] as i32
    }

    /// Leaf reached by training instance `sample`.
    pub fn leaf_index(&self, tree: &DecisionTree, sample: usize) -> usize {
        tree.leaf_index_from_intensities(self.row(sample))
    }
}

/// What happened at one split node during training.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub node: usize,
    /// Indices into the training set of samples reaching the node.
    pub samples: Vec<usize>,
    /// Every `(pair, threshold)` proposal that was scored, in draw order.
    pub proposals: Vec<(PixelPair, i32)>,
    /// Index into `proposals` of the kept split; `None` for pass-through.
    pub chosen: Option<usize>,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    n: usize,
    sx: f64,
    sy: f64,
}

impl Sums {
    fn add(&mut self, p: Point) {
        self.n += 1;
        self.sx += p.x;
        self.sy += p.y;
    }

    fn explained(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sx * self.sx + self.sy * self.sy) / self.n as f64
        }
    }
}

/// Trains one tree from scratch on raw samples.
pub fn train_tree(
    samples: &[TreeSample<'_>],
    candidates: &CandidateSet,
    config: &ForestTrainConfig,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to train a tree on"));
    }
    let set = LandmarkTrainingSet::from_samples(samples, candidates);
    let all: Vec<usize> = (0..set.len()).collect();
    train_tree_on(&set, &all, config, rng, None)
}

/// Trains one tree on the given subset of a shared training set, optionally
/// recording every node's proposals.
pub fn train_tree_on(
    set: &LandmarkTrainingSet,
    subset: &[usize],
    config: &ForestTrainConfig,
    rng: &mut Rng,
    mut trace: Option<&mut Vec<NodeTrace>>,
) -> Result<DecisionTree> {
    config.validate()?;
    if subset.is_empty() {
        return Err(Error::Empty("no samples to train a tree on"));
    }
    if set.candidate_count < 2 {
        return Err(Error::InvalidArgument("need at least two candidate pixels".into()));
    }
    let leaf_count = leaves_for_depth(config.depth);
    let internal = leaf_count - 1;
    let mut nodes = Vec::with_capacity(internal);
    let mut queue: Vec<Vec<usize>> = vec![subset.to_vec()];
    let mut features = Vec::new();

    for node in 0..internal {
        let samples = std::mem::take(&mut queue[node]);
        let (split, chosen, proposals) = choose_split(set, &samples, config, rng, &mut features);
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &s in &samples {
            if set.feature(s, split.pair) < split.threshold {
                left.push(s);
            } else {
                right.push(s);
            }
        }
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(NodeTrace { node, samples, proposals, chosen });
        }
        nodes.push(split);
        queue.push(left);
        queue.push(right);
    }

    let leaves = queue[internal..]
        .iter()
        .map(|reach| {
            if reach.is_empty() {
                return Point::default();
            }
            let mut s = Sums::default();
            reach.iter().for_each(|&i| s.add(set.targets[i]));
            Point::new(s.sx / s.n as f64, s.sy / s.n as f64)
        })
        .collect();
    DecisionTree::from_parts(config.depth, nodes, leaves)
}

fn choose_split(
    set: &LandmarkTrainingSet,
    samples: &[usize],
    config: &ForestTrainConfig,
    rng: &mut Rng,
    features: &mut Vec<i32>,
) -> (SplitNode, Option<usize>, Vec<(PixelPair, i32)>) {
    let mut proposals = Vec::new();
    if samples.len() < config.min_samples_per_node.max(2) {
        return (SplitNode::pass_through(), None, proposals);
    }
    let mut total = Sums::default();
    let mut sq = 0.0;
    for &s in samples {
        let t = set.targets[s];
        total.add(t);
        sq += t.x * t.x + t.y * t.y;
    }
    let n = samples.len() as f64;
    let node_score = (sq - total.explained()) / n;

    let count = set.candidate_count as u32;
    let mut best: Option<(f64, usize)> = None;
    for _ in 0..config.candidates_per_node {
        let first = rng.random_range(0..count);
        let mut second = rng.random_range(0..count - 1);
        if second >= first {
            second += 1;
        }
        let pair = PixelPair { first, second };
        features.clear();
        features.extend(samples.iter().map(|&s| set.feature(s, pair)));
        let lo = *features.iter().min().expect("nonempty");
        let hi = *features.iter().max().expect("nonempty");
        if lo == hi {
            continue;
        }
        for _ in 0..config.thresholds_per_candidate {
            // (lo, hi] keeps both children nonempty
            let threshold = rng.random_range(lo + 1..=hi);
            let mut left = Sums::default();
            for (&s, &f) in samples.iter().zip(features.iter()) {
                if f < threshold {
                    left.add(set.targets[s]);
                }
            }
            let right = Sums { n: total.n - left.n, sx: total.sx - left.sx, sy: total.sy - left.sy };
            let score = (sq - left.explained() - right.explained()) / n;
            let idx = proposals.len();
            proposals.push((pair, threshold));
            if best.is_none_or(|(b, _)| score < b) {
                best = Some((score, idx));
            }
        }
    }
    match best {
        Some((score, idx)) if node_score - score > 1e-12 * node_score.abs().max(f64::MIN_POSITIVE) => {
            let (pair, threshold) = proposals[idx];
            (SplitNode { pair, threshold }, Some(idx), proposals)
        }
        _ => (SplitNode::pass_through(), None, proposals),
    }
}

/// Trains the `config.trees` trees of one landmark's forest. Tree `i` draws
/// its bag and proposals from a generator keyed by `(seed, stage, landmark, i)`.
pub fn train_forest(
    set: &LandmarkTrainingSet,
    config: &ForestTrainConfig,
    seed: u64,
    stage: usize,
    landmark: usize,
) -> Result<Forest> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("no samples to train a forest on"));
    }
    let bag = ((set.len() as f64 * config.bagging_fraction).ceil() as usize).clamp(1, set.len());
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|tree| {
            let mut rng = seeded(seed, &[stream::TREE, stage as u64, landmark as u64, tree as u64]);
            let mut subset = index::sample(&mut rng, set.len(), bag).into_vec();
            subset.sort_unstable();
            train_tree_on(set, &subset, config, &mut rng, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Forest::new(landmark, trees)
}

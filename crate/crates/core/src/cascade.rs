//! Cascaded shape regression.
//!
//! Each stage trains one forest per landmark on that landmark's residual,
//! encodes the reached leaves of every tree into a global feature vector and
//! fits one ridge model from that vector to the full shape increment.
//! Residuals and increments live in the mean-shape frame: for every instance
//! the similarity from the mean shape to its current estimate maps
//! increments back into the image.

use rand::seq::index;
use rayon::prelude::*;

use crate::dataset::AnnotatedSample;
use crate::encoding::{feature_dim, EncodedFeature, Encoder, EncodingKind, IdfParams};
use crate::error::{Error, Result};
use crate::forest::{leaves_for_depth, train_forest, Forest, ForestTrainConfig, LandmarkTrainingSet, TreeSample};
use crate::geometry::{
    alignment_error, compute_mean_shape, denormalize_from_box, estimate_similarity, normalize_to_box, BoundingBox,
    NormalizationKind, Point, Shape, SimilarityTransform,
};
use crate::pixel::{sample_candidates, CandidateSet, Image, RadiusSchedule, DEFAULT_CANDIDATES};
use crate::rng::{seeded, stream};
use crate::shape_init::{
    build_init_set, InitSet, DEFAULT_CLUSTERS, DEFAULT_INITIALIZATIONS, DEFAULT_TRAIN_INITS_PER_SAMPLE,
};
use crate::solver::{fit_ridge, fit_ridge_sparse, LinearModel, Matrix, RidgeConfig, SparseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub stages: usize,
    pub landmarks: usize,
    pub forest: ForestTrainConfig,
    pub encoding: EncodingKind,
    pub idf: IdfParams,
    pub radii: RadiusSchedule,
    pub ridge: RidgeConfig,
    pub candidates_per_landmark: usize,
    pub train_inits_per_sample: usize,
    pub clusters: usize,
    pub initializations: usize,
    /// Metric used for the per-stage training error log.
    pub norm: NormalizationKind,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            stages: 7,
            landmarks: 68,
            forest: ForestTrainConfig::default(),
            encoding: EncodingKind::Idf,
            idf: IdfParams::default(),
            radii: RadiusSchedule::default_for(7),
            ridge: RidgeConfig::default(),
            candidates_per_landmark: DEFAULT_CANDIDATES,
            train_inits_per_sample: DEFAULT_TRAIN_INITS_PER_SAMPLE,
            clusters: DEFAULT_CLUSTERS,
            initializations: DEFAULT_INITIALIZATIONS,
            norm: NormalizationKind::BoxDiagonal,
            seed: 0,
        }
    }
}

impl CascadeConfig {
    /// Default configuration with the given stage count, trees and depth;
    /// the radius schedule is resampled to the stage count.
    pub fn with_shape(stages: usize, trees: usize, depth: usize) -> Self {
        Self {
            stages,
            forest: ForestTrainConfig { trees, depth, ..ForestTrainConfig::default() },
            radii: RadiusSchedule::default_for(stages),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        if self.landmarks == 0 {
            return Err(Error::InvalidArgument("landmark count must be positive".into()));
        }
        if self.radii.len() != self.stages {
            return Err(Error::InvalidArgument(format!(
                "radius schedule has {} entries for {} stages",
                self.radii.len(),
                self.stages
            )));
        }
        if self.candidates_per_landmark < 2 {
            return Err(Error::InvalidArgument("need at least two candidate pixels per landmark".into()));
        }
        if self.train_inits_per_sample == 0 {
            return Err(Error::InvalidArgument("need at least one initialization per sample".into()));
        }
        if self.idf.k < 2 {
            return Err(Error::InvalidArgument(format!("IDF magnitude k must be at least 2, got {}", self.idf.k)));
        }
        if !(self.ridge.lambda >= 0.0) {
            return Err(Error::InvalidArgument("ridge lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.encoding, self.landmarks, self.forest.trees, self.forest.depth)
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self.encoding, self.forest.depth, self.idf)
    }
}

/// One trained cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub candidates: Vec<CandidateSet>,
    pub forests: Vec<Forest>,
    pub regressor: LinearModel,
}

impl StageModel {
    pub fn landmarks(&self) -> usize {
        self.forests.len()
    }

    pub fn tree_count(&self) -> usize {
        self.forests.iter().map(|f| f.trees.len()).sum()
    }

    /// Leaf index of every tree, landmark-major.
    pub fn leaves(&self, image: &Image, shape: &Shape, transform: &SimilarityTransform) -> Vec<u32> {
        let lin = transform.linear();
        let mut out = Vec::with_capacity(self.tree_count());
        for ((forest, cands), anchor) in self.forests.iter().zip(&self.candidates).zip(shape.points()) {
            for tree in &forest.trees {
                out.push(tree.leaf_index_linear(image, *anchor, lin, cands) as u32);
            }
        }
        out
    }

    /// Predicted increment in the mean-shape frame from reached leaves.
    pub fn increment_from_leaves(&self, encoder: &Encoder, leaves: &[u32]) -> Result<Vec<f64>> {
        match encoder.kind() {
            EncodingKind::Lbf => self.regressor.predict_active(&encoder.active_columns(leaves)),
            _ => self.regressor.predict(&encoder.encode(leaves).values),
        }
    }

    /// Runs this stage once: returns the updated image-frame shape.
    pub fn apply(&self, encoder: &Encoder, image: &Image, shape: &Shape, mean_shape: &Shape) -> Result<Shape> {
        let transform = estimate_similarity(mean_shape, shape)?;
        let leaves = self.leaves(image, shape, &transform);
        let delta = self.increment_from_leaves(encoder, &leaves)?;
        Ok(add_increment(shape, &transform, &delta))
    }
}

fn add_increment(shape: &Shape, transform: &SimilarityTransform, delta: &[f64]) -> Shape {
    let mut out = shape.clone();
    for (p, d) in out.points_mut().iter_mut().zip(delta.chunks_exact(2)) {
        let v = transform.apply_vector(Point::new(d[0], d[1]));
        *p = *p + v;
    }
    out
}

/// Global feature vector of a stage for one image and shape estimate.
pub fn build_feature_vector(
    stage: &StageModel,
    encoder: &Encoder,
    image: &Image,
    shape: &Shape,
    transform: &SimilarityTransform,
    kind: EncodingKind,
) -> Result<EncodedFeature> {
    if kind != encoder.kind() {
        return Err(Error::InvalidArgument(format!(
            "stage was trained for {} features, not {kind}",
            encoder.kind()
        )));
    }
    if shape.landmark_count() != stage.landmarks() {
        return Err(Error::LandmarkMismatch { expected: stage.landmarks(), found: shape.landmark_count() });
    }
    Ok(encoder.encode(&stage.leaves(image, shape, transform)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub config: CascadeConfig,
    /// Mean training shape in the box-normalized frame.
    pub mean_shape: Shape,
    /// Initialization shapes in the box-normalized frame.
    pub init_shapes: Vec<Shape>,
    pub stages: Vec<StageModel>,
}

impl CascadeModel {
    pub fn encoder(&self) -> Result<Encoder> {
        self.config.encoder()
    }

    /// The first `stages` stages as a standalone model.
    pub fn truncated(&self, stages: usize) -> CascadeModel {
        let keep = stages.min(self.stages.len());
        let mut config = self.config.clone();
        config.stages = keep;
        config.radii = RadiusSchedule::new(self.config.radii.radii()[..keep].to_vec()).expect("prefix of valid schedule");
        CascadeModel {
            config,
            mean_shape: self.mean_shape.clone(),
            init_shapes: self.init_shapes.clone(),
            stages: self.stages[..keep].to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.config.landmarks;
        if self.mean_shape.landmark_count() != l {
            return Err(Error::Format("mean shape does not match landmark count".into()));
        }
        if self.stages.len() != self.config.stages {
            return Err(Error::Format(format!(
                "config declares {} stages, model has {}",
                self.config.stages,
                self.stages.len()
            )));
        }
        let dim = self.config.feature_dim();
        for (i, s) in self.stages.iter().enumerate() {
            if s.forests.len() != l || s.candidates.len() != l {
                return Err(Error::Format(format!("stage {i} does not have {l} forests")));
            }
            if s.regressor.feature_dim() != dim || s.regressor.target_dim() != 2 * l {
                return Err(Error::Format(format!("stage {i} regressor has wrong dimensions")));
            }
            for (f, c) in s.forests.iter().zip(&s.candidates) {
                if f.trees.len() != self.config.forest.trees {
                    return Err(Error::Format(format!("stage {i} forest has {} trees", f.trees.len())));
                }
                for t in &f.trees {
                    if t.depth() != self.config.forest.depth {
                        return Err(Error::Format(format!("stage {i} tree depth {}", t.depth())));
                    }
                    if t.nodes().iter().any(|n| n.pair.first as usize >= c.len() || n.pair.second as usize >= c.len()) {
                        return Err(Error::Format(format!("stage {i} split references a missing candidate")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The mean shape placed into `bbox`.
    pub fn initial_shape(&self, bbox: &BoundingBox) -> Result<Shape> {
        denormalize_from_box(&self.mean_shape, bbox)
    }

    /// Runs every stage from `initial`; returns the estimate after each stage,
    /// starting with `initial` itself.
    pub fn run_from(&self, image: &Image, initial: Shape) -> Result<Vec<Shape>> {
        if initial.landmark_count() != self.config.landmarks {
            return Err(Error::LandmarkMismatch { expected: self.config.landmarks, found: initial.landmark_count() });
        }
        let encoder = self.encoder()?;
        let mut trace = Vec::with_capacity(self.stages.len() + 1);
        let mut shape = initial;
        for stage in &self.stages {
            let next = stage.apply(&encoder, image, &shape, &self.mean_shape)?;
            trace.push(std::mem::replace(&mut shape, next));
        }
        trace.push(shape);
        Ok(trace)
    }

    /// Fits landmarks inside `bbox`. With `multi_init` the cascade runs from
    /// every stored initialization and the coordinate-wise median is returned.
    pub fn fit(&self, image: &Image, bbox: &BoundingBox, multi_init: bool) -> Result<Shape> {
        bbox.validate()?;
        if !multi_init || self.init_shapes.is_empty() {
            let mut trace = self.run_from(image, self.initial_shape(bbox)?)?;
            return Ok(trace.pop().expect("trace has the initial shape"));
        }
        let runs = self
            .init_shapes
            .iter()
            .map(|init| {
                let mut trace = self.run_from(image, denormalize_from_box(init, bbox)?)?;
                Ok(trace.pop().expect("nonempty"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(coordinate_median(&runs))
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-coordinate median of equally sized shapes.
pub fn coordinate_median(shapes: &[Shape]) -> Shape {
    let l = shapes[0].landmark_count();
    let points = (0..l)
        .map(|j| {
            let mut xs: Vec<f64> = shapes.iter().map(|s| s.points()[j].x).collect();
            let mut ys: Vec<f64> = shapes.iter().map(|s| s.points()[j].y).collect();
            Point::new(median(&mut xs), median(&mut ys))
        })
        .collect();
    Shape::new(points).expect("median of finite shapes")
}

/// One (sample, current estimate) pair being regressed.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sample: usize,
    pub shape: Shape,
}

/// Per-stage mean training error; entry 0 is before any stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub stage_errors: Vec<f64>,
}

fn check_dataset(dataset: &[AnnotatedSample], config: &CascadeConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    for s in dataset {
        if s.shape.landmark_count() != config.landmarks {
            return Err(Error::LandmarkMismatch { expected: config.landmarks, found: s.shape.landmark_count() });
        }
        s.bbox.validate()?;
    }
    Ok(())
}

/// Mean shape of a dataset in the normalized frame.
pub fn dataset_mean_shape(dataset: &[AnnotatedSample]) -> Result<Shape> {
    let shapes: Vec<Shape> = dataset.iter().map(|s| s.shape.clone()).collect();
    let boxes: Vec<BoundingBox> = dataset.iter().map(|s| s.bbox).collect();
    compute_mean_shape(&shapes, &boxes)
}

/// Clusters the dataset's normalized shapes and picks initializations.
pub fn dataset_init_set(dataset: &[AnnotatedSample], config: &CascadeConfig) -> Result<InitSet> {
    let normalized = dataset.iter().map(|s| normalize_to_box(&s.shape, &s.bbox)).collect::<Result<Vec<_>>>()?;
    build_init_set(&normalized, config.clusters, config.initializations, config.seed)
}

/// Starting instances: the mean shape for every sample, plus up to
/// `train_inits_per_sample - 1` initializations drawn from `init_set`
/// (never the sample's own annotation).
pub fn initial_instances(
    dataset: &[AnnotatedSample],
    mean_shape: &Shape,
    init_set: &InitSet,
    config: &CascadeConfig,
) -> Result<Vec<Instance>> {
    let mut instances = Vec::with_capacity(dataset.len() * config.train_inits_per_sample);
    for (i, sample) in dataset.iter().enumerate() {
        instances.push(Instance { sample: i, shape: denormalize_from_box(mean_shape, &sample.bbox)? });
        let pool: Vec<usize> = (0..init_set.len()).filter(|&k| init_set.source_indices[k] != i).collect();
        let extra = (config.train_inits_per_sample - 1).min(pool.len());
        if extra == 0 {
            continue;
        }
        let mut rng = seeded(config.seed, &[stream::INITS, i as u64]);
        for k in index::sample(&mut rng, pool.len(), extra) {
            let init = &init_set.shapes[pool[k]];
            instances.push(Instance { sample: i, shape: denormalize_from_box(init, &sample.bbox)? });
        }
    }
    Ok(instances)
}

/// Mean alignment error of instances against their ground truth.
pub fn mean_instance_error(dataset: &[AnnotatedSample], instances: &[Instance], norm: NormalizationKind) -> Result<f64> {
    let total = instances
        .iter()
        .map(|inst| alignment_error(&inst.shape, &dataset[inst.sample].shape, norm))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(total / instances.len() as f64)
}

struct Prepared {
    transforms: Vec<SimilarityTransform>,
    /// Residuals in the mean-shape frame, `2l` per instance.
    residuals: Matrix,
}

fn prepare(dataset: &[AnnotatedSample], instances: &[Instance], mean_shape: &Shape) -> Result<Prepared> {
    let l = mean_shape.landmark_count();
    let transforms = instances
        .par_iter()
        .map(|inst| estimate_similarity(mean_shape, &inst.shape))
        .collect::<Result<Vec<_>>>()?;
    let mut residuals = Matrix::zeros(instances.len(), 2 * l);
    for (i, (inst, t)) in instances.iter().zip(&transforms).enumerate() {
        let back = t.inverse();
        let truth = &dataset[inst.sample].shape;
        let row = residuals.row_mut(i);
        for (j, (cur, tru)) in inst.shape.points().iter().zip(truth.points()).enumerate() {
            let r = back.apply_vector(*tru - *cur);
            row[2 * j] = r.x;
            row[2 * j + 1] = r.y;
        }
    }
    Ok(Prepared { transforms, residuals })
}

/// Trains stage `stage` on the given instances. Pure in its inputs.
pub fn train_stage(
    dataset: &[AnnotatedSample],
    instances: &[Instance],
    mean_shape: &Shape,
    config: &CascadeConfig,
    stage: usize,
) -> Result<StageModel> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::Empty("no training instances"));
    }
    if stage >= config.stages {
        return Err(Error::InvalidArgument(format!("stage {stage} beyond {} stages", config.stages)));
    }
    let l = config.landmarks;
    let prepared = prepare(dataset, instances, mean_shape)?;
    let radius = config.radii.radius(stage);

    // per landmark: candidates, forest and the leaf reached by every instance
    let per_landmark = (0..l)
        .into_par_iter()
        .map(|j| -> Result<(CandidateSet, Forest, Vec<u32>)> {
            let mut rng = seeded(config.seed, &[stream::CANDIDATES, stage as u64, j as u64]);
            let candidates = CandidateSet {
                landmark_index: j,
                stage_index: stage,
                radius,
                offsets: sample_candidates(&mut rng, radius, config.candidates_per_landmark)?,
            };
            let samples: Vec<TreeSample<'_>> = instances
                .iter()
                .zip(&prepared.transforms)
                .enumerate()
                .map(|(i, (inst, t))| TreeSample {
                    image: &dataset[inst.sample].image,
                    anchor: inst.shape.points()[j],
                    transform: *t,
                    target: Point::new(prepared.residuals.get(i, 2 * j), prepared.residuals.get(i, 2 * j + 1)),
                })
                .collect();
            let set = LandmarkTrainingSet::from_samples(&samples, &candidates);
            let forest = train_forest(&set, &config.forest, config.seed, stage, j)?;
            let t = forest.trees.len();
            let mut leaves = vec![0u32; instances.len() * t];
            for i in 0..instances.len() {
                for (k, tree) in forest.trees.iter().enumerate() {
                    leaves[i * t + k] = set.leaf_index(tree, i) as u32;
                }
            }
            Ok((candidates, forest, leaves))
        })
        .collect::<Result<Vec<_>>>()?;

    let trees = config.forest.trees;
    let encoder = config.encoder()?;
    let n = instances.len();
    let instance_leaves = |i: usize| -> Vec<u32> {
        per_landmark.iter().flat_map(|(_, _, leaves)| leaves[i * trees..(i + 1) * trees].iter().copied()).collect()
    };
    let regressor = match config.encoding {
        EncodingKind::Lbf => {
            let mut x = SparseMatrix::new(config.feature_dim());
            for i in 0..n {
                x.push_row(encoder.active_columns(&instance_leaves(i)).into_iter().map(|c| (c, 1.0)))?;
            }
            fit_ridge_sparse(&x, &prepared.residuals, &config.ridge)?
        }
        _ => {
            let mut data = Vec::with_capacity(n * config.feature_dim());
            for i in 0..n {
                data.extend(encoder.encode(&instance_leaves(i)).values);
            }
            fit_ridge(&Matrix::from_vec(n, config.feature_dim(), data)?, &prepared.residuals, &config.ridge)?
        }
    };
    let (candidates, forests): (Vec<_>, Vec<_>) = per_landmark.into_iter().map(|(c, f, _)| (c, f)).unzip();
    Ok(StageModel { candidates, forests, regressor })
}

/// Advances every instance through one trained stage.
pub fn apply_stage(
    stage: &StageModel,
    encoder: &Encoder,
    dataset: &[AnnotatedSample],
    instances: &[Instance],
    mean_shape: &Shape,
) -> Result<Vec<Instance>> {
    instances
        .par_iter()
        .map(|inst| {
            let shape = stage.apply(encoder, &dataset[inst.sample].image, &inst.shape, mean_shape)?;
            Ok(Instance { sample: inst.sample, shape })
        })
        .collect()
}

/// Trains a full cascade. `init_set` supplies the extra training
/// initializations and is stored in the model for multi-init fitting.
pub fn train_cascade(
    dataset: &[AnnotatedSample],
    init_set: &InitSet,
    config: &CascadeConfig,
) -> Result<(CascadeModel, TrainingLog)> {
    config.validate()?;
    check_dataset(dataset, config)?;
    let mean_shape = dataset_mean_shape(dataset)?;
    let encoder = config.encoder()?;
    let mut instances = initial_instances(dataset, &mean_shape, init_set, config)?;
    let mut stage_errors = vec![mean_instance_error(dataset, &instances, config.norm)?];
    let mut stages = Vec::with_capacity(config.stages);
    for stage in 0..config.stages {
        let model = train_stage(dataset, &instances, &mean_shape, config, stage)?;
        instances = apply_stage(&model, &encoder, dataset, &instances, &mean_shape)?;
        stage_errors.push(mean_instance_error(dataset, &instances, config.norm)?);
        stages.push(model);
    }
    let model = CascadeModel { config: config.clone(), mean_shape, init_shapes: init_set.shapes.clone(), stages };
    Ok((model, TrainingLog { stage_errors }))
}

/// Convenience: builds the initialization set from the dataset, then trains.
pub fn train(dataset: &[AnnotatedSample], config: &CascadeConfig) -> Result<(CascadeModel, TrainingLog)> {
    config.validate()?;
    check_dataset(dataset, config)?;
    let init_set = dataset_init_set(dataset, config)?;
    train_cascade(dataset, &init_set, config)
}

/// Size figures for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub feature_dim: usize,
    /// Weight-matrix entries of all stage regressors.
    pub linear_parameters: usize,
    /// Bias entries of all stage regressors.
    pub bias_parameters: usize,
    /// Split nodes plus leaves over all trees of all stages.
    pub forest_nodes: usize,
    pub parameter_count: usize,
    /// Serialized size, assuming `config.initializations` stored init shapes.
    pub estimated_model_bytes: usize,
}

pub fn report_dimensions(config: &CascadeConfig) -> Dimensions {
    let fd = config.feature_dim();
    let l = config.landmarks;
    let t = config.forest.trees;
    let leaves = leaves_for_depth(config.forest.depth);
    let linear_parameters = config.stages * fd * 2 * l;
    let bias_parameters = config.stages * 2 * l;
    let forest_nodes = config.stages * l * t * (2 * leaves - 1);
    let shapes = (1 + config.initializations) * l * 16;
    let tree_bytes = 4 + (leaves - 1) * 12 + leaves * 16;
    let landmark_bytes = 8 + 4 + config.candidates_per_landmark * 16 + 4 + t * tree_bytes;
    let stage_bytes = l * landmark_bytes + 8 + (fd + 1) * 2 * l * 8;
    Dimensions {
        feature_dim: fd,
        linear_parameters,
        bias_parameters,
        forest_nodes,
        parameter_count: linear_parameters + bias_parameters + forest_nodes,
        estimated_model_bytes: crate::model_io::header_len(config) + 4 + 4 + shapes + 4 + config.stages * stage_bytes,
    }
}

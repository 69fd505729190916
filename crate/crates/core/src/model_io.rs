//! Binary model files.
//!
//! Little-endian throughout. Layout:
//!
//! ```text
//! "IDF1" magic, u32 version
//! config: u32 stages, landmarks, trees, depth, k
//!         u8 encoding, idf range, norm
//!         u32 candidates, candidates per node, thresholds per candidate, min samples
//!         f64 bagging fraction, lambda
//!         u32 train inits, clusters, initializations
//!         u64 seed
//!         u32 radius count, f64 radii
//! mean shape: u32 count, f64 (x, y) pairs
//! init shapes: u32 count, then each shape's (x, y) pairs
//! u32 stage count, per stage:
//!     per landmark: f64 radius, u32 offset count, f64 (dx, dy) pairs,
//!                   u32 tree count, per tree: u32 depth,
//!                   nodes as (u32 first, u32 second, i32 threshold),
//!                   leaves as f64 (x, y)
//!     regressor: u32 rows, u32 cols, f64 weights row-major, f64 bias
//! ```

use std::path::Path;

use crate::cascade::{CascadeConfig, CascadeModel, StageModel};
use crate::encoding::{EncodingKind, IdfParams, IdfRange};
use crate::error::{Error, Result};
use crate::forest::{leaves_for_depth, DecisionTree, Forest, ForestTrainConfig, SplitNode};
use crate::geometry::{NormalizationKind, Point, Shape};
use crate::pixel::{CandidateSet, PixelOffset, PixelPair, RadiusSchedule};
use crate::solver::{LinearModel, Matrix, RidgeConfig};

pub const MAGIC: &[u8; 4] = b"IDF1";
pub const VERSION: u32 = 1;

/// Bytes taken by the magic, version and configuration block.
pub fn header_len(config: &CascadeConfig) -> usize {
    8 + 5 * 4 + 3 + 4 * 4 + 2 * 8 + 3 * 4 + 8 + 4 + 8 * config.radii.len()
}

fn encoding_code(kind: EncodingKind) -> u8 {
    match kind {
        EncodingKind::Idf => 0,
        EncodingKind::Lbf => 1,
        EncodingKind::Index => 2,
    }
}

fn norm_code(kind: NormalizationKind) -> u8 {
    match kind {
        NormalizationKind::InterOcular => 0,
        NormalizationKind::InterPupil => 1,
        NormalizationKind::BoxDiagonal => 2,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend((v as u32).to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn points(&mut self, pts: &[Point]) {
        for p in pts {
            self.f64(p.x);
            self.f64(p.y);
        }
    }
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &CascadeModel) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer(Vec::with_capacity(crate::cascade::report_dimensions(c).estimated_model_bytes));
    w.0.extend(MAGIC);
    w.u32(VERSION as usize);
    for v in [c.stages, c.landmarks, c.forest.trees, c.forest.depth, c.idf.k as usize] {
        w.u32(v);
    }
    w.u8(encoding_code(c.encoding));
    w.u8(match c.idf.range {
        IdfRange::Conventional => 0,
        IdfRange::Achievable => 1,
    });
    w.u8(norm_code(c.norm));
    for v in [
        c.candidates_per_landmark,
        c.forest.candidates_per_node,
        c.forest.thresholds_per_candidate,
        c.forest.min_samples_per_node,
    ] {
        w.u32(v);
    }
    w.f64(c.forest.bagging_fraction);
    w.f64(c.ridge.lambda);
    for v in [c.train_inits_per_sample, c.clusters, c.initializations] {
        w.u32(v);
    }
    w.u64(c.seed);
    w.u32(c.radii.len());
    for r in c.radii.radii() {
        w.f64(*r);
    }

    w.u32(model.mean_shape.landmark_count());
    w.points(model.mean_shape.points());
    w.u32(model.init_shapes.len());
    for s in &model.init_shapes {
        w.points(s.points());
    }

    w.u32(model.stages.len());
    for stage in &model.stages {
        for (cands, forest) in stage.candidates.iter().zip(&stage.forests) {
            w.f64(cands.radius);
            w.u32(cands.offsets.len());
            for o in &cands.offsets {
                w.f64(o.dx);
                w.f64(o.dy);
            }
            w.u32(forest.trees.len());
            for tree in &forest.trees {
                w.u32(tree.depth());
                for n in tree.nodes() {
                    w.u32(n.pair.first as usize);
                    w.u32(n.pair.second as usize);
                    w.i32(n.threshold);
                }
                w.points(tree.leaves());
            }
        }
        let reg = &stage.regressor;
        w.u32(reg.weights.rows());
        w.u32(reg.weights.cols());
        for v in reg.weights.data() {
            w.f64(*v);
        }
        for v in &reg.bias {
            w.f64(*v);
        }
    }
    w.0
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::Format(format!("model file truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count whose items need at least `item_bytes` each; rejects counts
    /// that cannot fit in the remaining input.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(item_bytes.max(1)) > self.data.len() - self.pos {
            return Err(Error::Format(format!("count {n} at byte {} exceeds file size", self.pos - 4)));
        }
        Ok(n)
    }
    fn points(&mut self, n: usize) -> Result<Vec<Point>> {
        (0..n).map(|_| Ok(Point::new(self.f64()?, self.f64()?))).collect()
    }
    fn shape(&mut self, n: usize) -> Result<Shape> {
        Shape::new(self.points(n)?).map_err(|e| Error::Format(format!("bad shape: {e}")))
    }
}

fn read_config(r: &mut Reader<'_>) -> Result<CascadeConfig> {
    let stages = r.u32()?;
    let landmarks = r.u32()?;
    let trees = r.u32()?;
    let depth = r.u32()?;
    let k = r.u32()? as u32;
    let encoding = match r.u8()? {
        0 => EncodingKind::Idf,
        1 => EncodingKind::Lbf,
        2 => EncodingKind::Index,
        x => return Err(Error::Format(format!("unknown encoding code {x}"))),
    };
    let range = match r.u8()? {
        0 => IdfRange::Conventional,
        1 => IdfRange::Achievable,
        x => return Err(Error::Format(format!("unknown IDF range code {x}"))),
    };
    let norm = match r.u8()? {
        0 => NormalizationKind::InterOcular,
        1 => NormalizationKind::InterPupil,
        2 => NormalizationKind::BoxDiagonal,
        x => return Err(Error::Format(format!("unknown normalization code {x}"))),
    };
    let candidates_per_landmark = r.u32()?;
    let candidates_per_node = r.u32()?;
    let thresholds_per_candidate = r.u32()?;
    let min_samples_per_node = r.u32()?;
    let bagging_fraction = r.f64()?;
    let lambda = r.f64()?;
    let train_inits_per_sample = r.u32()?;
    let clusters = r.u32()?;
    let initializations = r.u32()?;
    let seed = r.u64()?;
    let n = r.count(8)?;
    let radii = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let config = CascadeConfig {
        stages,
        landmarks,
        forest: ForestTrainConfig {
            depth,
            trees,
            candidates_per_node,
            thresholds_per_candidate,
            min_samples_per_node,
            bagging_fraction,
        },
        encoding,
        idf: IdfParams { k, range },
        radii: RadiusSchedule::new(radii).map_err(|e| Error::Format(format!("bad radius schedule: {e}")))?,
        ridge: RidgeConfig { lambda },
        candidates_per_landmark,
        train_inits_per_sample,
        clusters,
        initializations,
        norm,
        seed,
    };
    config.validate().map_err(|e| Error::Format(format!("bad config: {e}")))?;
    Ok(config)
}

fn read_stage(r: &mut Reader<'_>, config: &CascadeConfig, index: usize) -> Result<StageModel> {
    let bad = |m: String| Error::Format(format!("stage {index}: {m}"));
    let mut candidates = Vec::with_capacity(config.landmarks);
    let mut forests = Vec::with_capacity(config.landmarks);
    for j in 0..config.landmarks {
        let radius = r.f64()?;
        let n = r.count(16)?;
        let offsets = (0..n).map(|_| Ok(PixelOffset { dx: r.f64()?, dy: r.f64()? })).collect::<Result<Vec<_>>>()?;
        let t = r.count(4)?;
        let mut trees = Vec::with_capacity(t);
        for _ in 0..t {
            let depth = r.u32()?;
            if !(2..=24).contains(&depth) {
                return Err(bad(format!("tree depth {depth}")));
            }
            let leaves = leaves_for_depth(depth);
            let mut nodes = Vec::with_capacity(leaves - 1);
            for _ in 0..leaves - 1 {
                let (first, second) = (r.u32()? as u32, r.u32()? as u32);
                let threshold = r.i32()?;
                let pair = PixelPair::new(first, second, n).map_err(|e| bad(e.to_string()))?;
                nodes.push(SplitNode { pair, threshold });
            }
            let outputs = r.points(leaves)?;
            trees.push(DecisionTree::from_parts(depth, nodes, outputs).map_err(|e| bad(e.to_string()))?);
        }
        candidates.push(CandidateSet { landmark_index: j, stage_index: index, radius, offsets });
        forests.push(Forest::new(j, trees).map_err(|e| bad(e.to_string()))?);
    }
    let rows = r.u32()?;
    let cols = r.u32()?;
    let cells = rows.checked_mul(cols).ok_or_else(|| bad("regressor too large".into()))?;
    if cells.saturating_mul(8) > r.data.len() - r.pos {
        return Err(bad("regressor exceeds file size".into()));
    }
    let weights = (0..cells).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let bias = (0..cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let regressor = LinearModel::new(Matrix::from_vec(rows, cols, weights)?, bias).map_err(|e| bad(e.to_string()))?;
    Ok(StageModel { candidates, forests, regressor })
}

/// Parses a model; every structural inconsistency is a `Format` error.
pub fn from_bytes(data: &[u8]) -> Result<CascadeModel> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let config = read_config(&mut r)?;
    let l = r.u32()?;
    if l != config.landmarks {
        return Err(Error::Format(format!("mean shape has {l} points, config says {}", config.landmarks)));
    }
    let mean_shape = r.shape(l)?;
    let m = r.count(16 * l)?;
    let init_shapes = (0..m).map(|_| r.shape(l)).collect::<Result<Vec<_>>>()?;
    let s = r.count(1)?;
    let stages = (0..s).map(|i| read_stage(&mut r, &config, i)).collect::<Result<Vec<_>>>()?;
    if r.pos != data.len() {
        return Err(Error::Format(format!("{} trailing bytes", data.len() - r.pos)));
    }
    let model = CascadeModel { config, mean_shape, init_shapes, stages };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &CascadeModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CascadeModel> {
    from_bytes(&std::fs::read(path)?)
}

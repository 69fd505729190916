//! Leaf-path encodings of forest outputs.
//!
//! Every tree contributes one block to the stage's global feature vector:
//!
//! * `Idf`: a single scalar. The root-to-leaf path `p` (values 1 = left,
//!   2 = right) is read as digits in base `k`, root first, and rescaled into
//!   `[0, 1]`. Leaves that share a longer prefix get closer values.
//! * `Lbf`: a one-hot block with a 1 at the reached leaf.
//! * `Index`: the leaf number scaled into `[0, 1]`.

use crate::error::{Error, Result};
use crate::forest::{leaves_for_depth, path_of_leaf};

/// Default IDF magnitude value.
pub const DEFAULT_K: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingKind {
    Idf,
    Lbf,
    Index,
}

impl EncodingKind {
    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Idf => "idf",
            EncodingKind::Lbf => "lbf",
            EncodingKind::Index => "index",
        }
    }

    /// Values per tree in the global feature vector.
    pub fn block_len(self, depth: usize) -> usize {
        match self {
            EncodingKind::Idf | EncodingKind::Index => 1,
            EncodingKind::Lbf => leaves_for_depth(depth),
        }
    }
}

impl std::str::FromStr for EncodingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idf" => Ok(EncodingKind::Idf),
            "lbf" => Ok(EncodingKind::Lbf),
            "index" => Ok(EncodingKind::Index),
            other => Err(Error::InvalidArgument(format!("unknown encoding '{other}'"))),
        }
    }
}

impl std::fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Dimension of the global feature vector for `landmarks` forests of
/// `trees` trees each.
pub fn feature_dim(kind: EncodingKind, landmarks: usize, trees: usize, depth: usize) -> usize {
    landmarks * trees * kind.block_len(depth)
}

/// Which interval IDF values are rescaled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum IdfRange {
    /// `[k^(L-1), 2 (k^L - 1) / (k - 1)]`; the lower end is below every path value.
    #[default]
    Conventional,
    /// From the all-left path value to the all-right path value.
    Achievable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IdfParams {
    pub k: u32,
    pub range: IdfRange,
}

impl Default for IdfParams {
    fn default() -> Self {
        Self { k: DEFAULT_K, range: IdfRange::Conventional }
    }
}

fn check_k(k: u32) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("IDF magnitude k must be at least 2, got {k}")));
    }
    Ok(())
}

/// Positional value of a root-first path of 1/2 digits in base `k`.
pub fn idf_value(path: &[u8], k: u32) -> Result<f64> {
    check_k(k)?;
    if path.is_empty() {
        return Err(Error::Empty("IDF path has no levels"));
    }
    if let Some(v) = path.iter().find(|v| !matches!(v, 1 | 2)) {
        return Err(Error::InvalidArgument(format!("path value {v} is not 1 or 2")));
    }
    let k = k as f64;
    Ok(path.iter().fold(0.0, |acc, &v| acc * k + v as f64))
}

/// Conventional normalization interval for paths of `levels` digits.
pub fn idf_range(levels: usize, k: u32) -> Result<(f64, f64)> {
    check_k(k)?;
    if levels == 0 {
        return Err(Error::InvalidArgument("IDF range needs at least one level".into()));
    }
    let kf = k as f64;
    let top = kf.powi(levels as i32);
    Ok((top / kf, 2.0 * (top - 1.0) / (kf - 1.0)))
}

/// Interval spanned by actual paths: all-left to all-right.
pub fn achievable_idf_range(levels: usize, k: u32) -> Result<(f64, f64)> {
    let (_, max) = idf_range(levels, k)?;
    Ok((max / 2.0, max))
}

pub fn normalize_idf(value: f64, (min, max): (f64, f64)) -> Result<f64> {
    if !(max > min) {
        return Err(Error::InvalidArgument(format!("empty IDF range [{min}, {max}]")));
    }
    if !(min..=max).contains(&value) {
        return Err(Error::InvalidArgument(format!("IDF value {value} outside [{min}, {max}]")));
    }
    Ok((value - min) / (max - min))
}

pub fn encode_lbf(leaf_index: usize, leaves_per_tree: usize) -> Result<Vec<f64>> {
    if leaf_index >= leaves_per_tree {
        return Err(Error::InvalidArgument(format!(
            "leaf {leaf_index} out of range for {leaves_per_tree} leaves"
        )));
    }
    let mut block = vec![0.0; leaves_per_tree];
    block[leaf_index] = 1.0;
    Ok(block)
}

pub fn encode_index(leaf_index: usize, leaves_per_tree: usize) -> Result<f64> {
    if leaf_index >= leaves_per_tree {
        return Err(Error::InvalidArgument(format!(
            "leaf {leaf_index} out of range for {leaves_per_tree} leaves"
        )));
    }
    if leaves_per_tree == 1 {
        return Ok(0.0);
    }
    Ok(leaf_index as f64 / (leaves_per_tree - 1) as f64)
}

/// A stage's global feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeature {
    pub kind: EncodingKind,
    pub values: Vec<f64>,
}

impl EncodedFeature {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Turns per-tree leaf indices into feature values for one encoding and
/// tree depth. Per-leaf values are tabulated once.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    kind: EncodingKind,
    depth: usize,
    table: Vec<f64>,
}

impl Encoder {
    pub fn new(kind: EncodingKind, depth: usize, idf: IdfParams) -> Result<Self> {
        if !(2..=24).contains(&depth) {
            return Err(Error::InvalidArgument(format!("tree depth {depth} outside 2..=24")));
        }
        let leaves = leaves_for_depth(depth);
        let table = match kind {
            EncodingKind::Idf => {
                let levels = depth - 1;
                let range = match idf.range {
                    IdfRange::Conventional => idf_range(levels, idf.k)?,
                    IdfRange::Achievable => achievable_idf_range(levels, idf.k)?,
                };
                (0..leaves)
                    .map(|leaf| normalize_idf(idf_value(&path_of_leaf(leaf, depth), idf.k)?, range))
                    .collect::<Result<_>>()?
            }
            EncodingKind::Index => (0..leaves).map(|leaf| encode_index(leaf, leaves)).collect::<Result<_>>()?,
            EncodingKind::Lbf => Vec::new(),
        };
        Ok(Self { kind, depth, table })
    }

    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaves_per_tree(&self) -> usize {
        leaves_for_depth(self.depth)
    }

    pub fn dimension(&self, tree_count: usize) -> usize {
        tree_count * self.kind.block_len(self.depth)
    }

    /// Scalar value of a leaf (IDF and index encodings only).
    pub fn leaf_value(&self, leaf: usize) -> f64 {
        self.table[leaf]
    }

    /// Dense feature vector; `leaves` holds one leaf index per tree.
    pub fn encode(&self, leaves: &[u32]) -> EncodedFeature {
        let values = match self.kind {
            EncodingKind::Lbf => {
                let block = self.leaves_per_tree();
                let mut v = vec![0.0; leaves.len() * block];
                for (tree, &leaf) in leaves.iter().enumerate() {
                    v[tree * block + leaf as usize] = 1.0;
                }
                v
            }
            _ => leaves.iter().map(|&leaf| self.table[leaf as usize]).collect(),
        };
        EncodedFeature { kind: self.kind, values }
    }

    /// Positions of the ones in the LBF vector.
    pub fn active_columns(&self, leaves: &[u32]) -> Vec<u32> {
        let block = self.leaves_per_tree() as u32;
        leaves.iter().enumerate().map(|(tree, &leaf)| tree as u32 * block + leaf).collect()
    }
}

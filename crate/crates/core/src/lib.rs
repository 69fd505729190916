//! Face alignment by cascaded random forests with compact leaf encodings.
//!
//! A [`cascade::CascadeModel`] refines a shape estimate inside a face box
//! over a fixed number of stages. Every stage routes each landmark through a
//! small forest of pixel-difference trees and regresses the shape increment
//! from the reached leaves. Leaves can be encoded as one value per tree
//! ([`encoding::EncodingKind::Idf`], the default), a one-hot block per tree
//! ([`encoding::EncodingKind::Lbf`]) or a plain leaf index.

pub mod bench;
pub mod cascade;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod forest;
pub mod geometry;
pub mod model_io;
pub mod pixel;
pub mod rng;
pub mod shape_init;
pub mod solver;
pub mod synthetic;

pub use cascade::{train, train_cascade, CascadeConfig, CascadeModel, StageModel, TrainingLog};
pub use encoding::EncodingKind;
pub use error::{Error, Result};
pub use geometry::{BoundingBox, NormalizationKind, Point, Shape, SimilarityTransform};
pub use pixel::Image;

//! Complex autoencoder that learns transformation-invariant magnitude
//! features and transformation-coding phase differences, with pipelines for
//! repeated-section discovery, sequence alignment and invariant
//! classification.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod basis;
pub mod cli;
pub mod classify;
pub mod config;
pub mod data;
pub mod discovery;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod render;
pub mod train;
pub mod transforms;

pub use basis::{polar_encode, wrap_phase, ComplexBasis, PolarCode};
pub use error::{Error, Result};
pub use grad::{GradientSet, LossPower};
pub use model::CaeModel;
pub use train::{train, NormMode, TrainConfig, TrainOutcome};
pub use transforms::{PairScheme, TransformPairBatch, TransformSpec};

//! Anti-forensic generator attacks against synthetic-image detectors.
//!
//! The crate bundles a small reverse-mode differentiation engine, the generator and
//! detector networks, a deterministic synthetic corpus, both attack-training
//! protocols (white-box and ensemble) and the evaluation metrics.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod kernels;
pub mod models;
pub mod param;
pub mod scalar;
pub mod selfcheck;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use kernels::PoolKind;
pub use models::{DetectorKind, DetectorNet, GeneratorNet, Label, Model};
pub use param::{sgd_step, xavier_init, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Generator32 = GeneratorNet<f32>;
pub type Generator64 = GeneratorNet<f64>;
pub type Detector32 = DetectorNet<f32>;
pub type Detector64 = DetectorNet<f64>;

//! Knowledge-augmented artwork captioning at desk scale: corpus ingestion, a
//! heterogeneous metadata graph, a graph attention encoder, a toy captioning
//! transformer, multi-task training and caption metrics.
//!
//! Differentiable code is generic over [`numeric::Scalar`]; the aliases
//! below fix the element type to `f64`.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod graph;
pub mod han;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod synthetic;
pub mod text;
pub mod train;

pub type Tensor = numeric::Tensor<f64>;
pub type Tape = numeric::Tape<f64>;
pub type ParamStore = numeric::ParamStore<f64>;

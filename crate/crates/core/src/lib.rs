//! Visual-geometric affordance learning: a two-branch network that reads
//! contact regions off a human-object interaction image and transfers them
//! to an image of the object alone, fusing pose and image features through
//! deep-equilibrium layers.

pub mod blocks;
pub mod data;
pub mod deq;
pub mod error;
pub mod fsutil;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod tnsr;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use rng::SplitMix64;
pub use tensor::Tensor;

//! Positional-encoder graph neural networks for geographic regression.
//!
//! Points carry longitude/latitude coordinates; the model encodes them with a
//! multi-scale sinusoidal transform, propagates over a k-nearest-neighbour
//! graph and can be trained jointly on an auxiliary local Moran's I target.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod geo;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod moran;
pub mod optim;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
pub use checkpoint::Checkpoint;
pub use data::{CsvSchema, Dataset, GeoPoint};
pub use geo::LonLat;
pub use model::{LossMode, ModelConfig, PeGnnModel};
pub use training::{evaluate, train, Metrics, TrainConfig};

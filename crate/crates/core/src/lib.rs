//! Multi-modal graph convolutional action segmentation.
//!
//! The crate fuses dense skeleton/object motion with sparse visual features
//! to label every frame of a sequence with an action class. Modules:
//!
//! - [`tensor`]: dense tensors with a reverse-mode differentiation tape.
//! - [`encoding`]: sinusoidal joint encoder.
//! - [`augment`]: label smoothing and Beta-weighted intra-batch mixing.
//! - [`graph`]: skeleton/object graph and the graph encoder-decoder stream.
//! - [`fusion`]: temporal feature refinement of visual and motion features.
//! - [`model`]: the assembled network, training loop and cost model.
//! - [`metrics`]: framewise and segmental evaluation.
//! - [`data`]: dataset format, synthetic generator and node dropout.

pub mod augment;
pub mod data;
pub mod encoding;
pub mod error;
pub mod fsio;
pub mod fusion;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};

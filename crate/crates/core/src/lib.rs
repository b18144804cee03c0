//! ANN-to-SNN conversion: percentile normalization, burst integrate-and-fire
//! simulation, spike calibration, spiking max pooling and Bayesian selection
//! of the normalization percentile.

pub mod boa;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mlipool;
pub mod model;
pub mod normalize;
pub mod snn;
pub mod spicalib;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Layer, NetworkGraph};
pub use normalize::{ActivationStats, NormalizedGraph};
pub use snn::{ConversionConfig, SimulationTrace};
pub use tensor::Tensor;

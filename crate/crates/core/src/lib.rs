//! Deep echo state networks: stacked leaky reservoirs joined by
//! unsupervised projection encoders, with a ridge readout over the last
//! reservoir, the raw input and every encoder output.

pub mod datasets;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod persist;
pub mod reservoir;
pub mod seed;
pub mod stack;

pub use encoder::{EncoderKind, EncoderSpec, FittedEncoder};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use reservoir::{ReservoirLayer, ReservoirParams};
pub use stack::{DeepEsnConfig, DeepEsnModel};

//! Physical-layer secret key generation over reciprocal two-port channels.

pub mod sounding;
pub mod spectral;
pub mod tdst;
pub mod topology;
pub mod tmt;
pub mod quantize;
pub mod metrics;
pub mod experiment;

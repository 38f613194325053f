//! Random-weight CNN–DCN networks and the machinery around them.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – dense feature maps, patch extraction and every layer primitive.
//! * [`weights`] – filter distributions, seeded filter banks and their moments.
//! * [`network`] – declarative network specs, presets and the forward engine.
//! * [`theory`] – analytic convergence fields, route counts, Gram recurrences,
//!   variance/cosine bounds and Monte-Carlo verifiers.
//! * [`metrics`] – grayscale conversion, Pearson correlation and SSIM.
//! * [`trainer`] – backpropagation through a DCN and Adam training against a
//!   fixed random CNN.
//! * [`harness`] – image I/O, synthetic data, reconstruction sweeps and CSV output.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod theory;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
pub use network::{LayerSpec, Mode, NetworkSpec};
pub use tensor::FeatureMaps;
pub use weights::{DistributionSpec, Family, FilterBank, Moments};

/// Float formatting used by every CSV writer: 17 significant digits, so a
/// value survives a text round trip bit for bit.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

//! Forecasting of frozen vision-encoder features with a masked
//! spatio-temporal transformer.
//!
//! Features from several encoder layers are concatenated and compressed with
//! PCA ([`feature_space`]); a factorized-attention transformer
//! ([`forecaster`]) is trained by masked feature modelling ([`training`]) and
//! rolled out into the future ([`inference`]); forecasts are scored with
//! linear readout heads ([`evaluation`]). [`io`] holds file formats and the
//! synthetic corpus generator.

pub mod error;
pub mod evaluation;
pub mod feature_space;
pub mod forecaster;
pub mod inference;
pub mod io;
pub mod real;
pub mod training;

pub use error::{Error, Result};
pub use feature_space::{FeatureSequence, PcaModel};
pub use forecaster::{ForecasterConfig, ForecasterWeights, MaskPlan};

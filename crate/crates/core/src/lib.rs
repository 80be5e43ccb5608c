//! Statistical component separation: recover summary statistics of a signal
//! from a noisy mixture by matching statistics of noise-corrupted candidates
//! to those of the observation.

pub mod analytic;
pub mod error;
pub mod fields;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod oracle;
pub mod seed;
pub mod separation;
pub mod synthdata;
pub mod wavelets;
pub mod wph;

pub use error::{Error, Result};
pub use fields::{ComplexField, Field2D, RealField, Spectrum2D};

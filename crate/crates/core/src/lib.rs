//! Multichannel speech enhancement with a cascade of full-band spatial,
//! narrow-band spatial, sub-band spectral and full-band spectral recurrent
//! modules predicting a compressed complex ratio mask.

pub mod audio;
pub mod cli;
pub mod config;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod features;
pub mod mask;
pub mod model;
pub mod normalize;
pub mod simulate;
pub mod stft;
pub mod train;

pub use error::{Error, Result};
pub use model::Mode;

pub type Complex = num_complex::Complex64;

//! Fourier-invertible neural encoder: a translation-equivariant, bijective
//! encoder/decoder on periodic grids whose only information loss is an
//! explicit Fourier truncation.

pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use io::Dataset;
pub use layers::ActivationFamily;
pub use model::{Architecture, FineModel};
pub use spectral::{Field, Grid, ModeSet, Spectrum};

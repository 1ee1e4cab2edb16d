//! Spectral state-space modeling of convection–diffusion fields on periodic grids.
//!
//! The library approximates a scalar field driven by spatially-varying
//! convection, diffusion and decay by a truncated Fourier expansion whose
//! real-packed coefficients evolve under a coupled linear ODE. On top of
//! that core it provides:
//!
//! * real-valued 2D DFT analysis, symmetric coefficient packing and
//!   low-pass filtering ([`spectral`]);
//! * parametric velocity / diffusivity / decay fields ([`fields`]);
//! * Galerkin assembly of the coupled transition generator, its exponential,
//!   process-noise covariances and the equivalent redistribution-kernel step
//!   ([`galerkin`]);
//! * an augmented source–sink state-space model with a spectral-domain
//!   Kalman filter, likelihood evaluation and nowcasting ([`dstm`]);
//! * exact-discretization trajectory simulation ([`sim`]);
//! * maximum-likelihood parameter estimation ([`estimate`]);
//! * text file formats, run configs and plot emission for the `advecta`
//!   command line tool ([`config`], [`fileio`], [`plot`]).

extern crate blas_src;

pub mod config;
pub mod dstm;
pub mod estimate;
pub mod fields;
pub mod fileio;
pub mod galerkin;
pub mod grid;
pub mod linalg;
pub mod plot;
pub mod sim;
pub mod spectral;

pub use grid::{GridSpec, RealGridField};
pub use spectral::{PackingForm, SpectralCoeffVector, SpectrumTable, WavenumberSets};

/// Library-wide error type.
///
/// Variants map onto the CLI exit codes: configuration errors exit 2,
/// data/spectrum validation errors exit 3, numeric failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum AdvectaError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data validation error: {0}")]
    Data(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AdvectaError {
    /// Process exit code for the CLI front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            AdvectaError::Config(_) => 2,
            AdvectaError::Data(_) | AdvectaError::InvalidSpectrum(_) | AdvectaError::Io(_) => 3,
            AdvectaError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, AdvectaError>;

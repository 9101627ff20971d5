//! Adaptive-illumination Fourier ptychographic microscopy: LED geometry,
//! forward imaging with sensor noise, PSNR-driven acquisition and EPRY
//! reconstruction.

pub mod acquisition;
pub mod config;
pub mod error;
pub mod fft;
pub mod io;
pub mod noise;
pub mod optics;
pub mod pipeline;
pub mod recon;
pub mod sim;
pub mod target;

pub use error::{FpmError, Result};

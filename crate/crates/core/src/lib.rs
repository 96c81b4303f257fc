//! Spherical-piston acoustic scenes, cross-spectral matrices, and a complex-valued
//! GAN that filters ambient sound, reflections and directivity out of them.

pub mod acoustics;
pub mod cli;
pub mod csm;
pub mod cxnn;
pub mod error;
pub mod gan;
pub mod sphmath;
pub mod tasks;

pub use error::{Error, Result};

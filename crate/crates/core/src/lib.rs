//! Gaussian-process-guided spatio-temporal video denoising.
//!
//! The crate covers the full pipeline at desk scale: mixed-degradation
//! synthesis ([`degrade`]), noise-cue extraction ([`cues`]), the sparse
//! GP fusion block ([`gp_fusion`]), the end-to-end network ([`network`]),
//! the heteroscedastic objective and training loop ([`objective`]),
//! overlap-tiled inference ([`tiling`]) and evaluation ([`evaluation`]).

pub mod autograd;
pub mod cli;
pub mod cues;
pub mod degrade;
pub mod error;
pub mod evaluation;
pub mod gp_fusion;
mod layers;
pub mod media;
pub mod network;
pub mod objective;
pub mod tiling;

pub use error::{Error, Result};

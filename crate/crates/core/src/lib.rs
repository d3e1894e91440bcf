//! Text-guided colorization by cold diffusion in a latent space.
//!
//! A grayscale image is encoded, then iteratively restored toward its color
//! latent by a time- and text-conditioned denoiser, with classifier-free
//! guidance against a negative prompt. The final color residual can be
//! rescaled after the fact and the input's lightness is always kept.

pub mod cold_diffusion;
pub mod colorspace;
pub mod denoiser;
pub mod embed;
pub mod enhance;
pub mod error;
pub mod latent_codec;
pub mod metrics;
pub mod nn;
pub mod prompts;
pub mod ranker;
pub mod sampler;
pub mod toy;

pub use colorspace::{GrayImage, LabImage, RgbImage};
pub use denoiser::{ColorRestorer, Denoiser, DenoiserConfig, TextEmbedding};
pub use error::{Error, Result};
pub use latent_codec::{CodecBackend, ColorResidual, LatentGrid, LearnedCodec};
pub use sampler::{colorize, ColorizationResult, SamplerConfig};

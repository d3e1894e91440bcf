//! Encoder/decoder pairs defining the latent space the diffusion runs in,
//! and the color-latent analysis built on top of them.
//!
//! Two backends exist. [`CodecBackend::Identity`] uses the image itself as a
//! `3 × H × W` latent, which keeps every diffusion-level test independent of
//! autoencoder quality. [`CodecBackend::Learned`] is a small convolutional
//! autoencoder with a downsampling factor of 8 by default. It is trained once
//! on reconstruction and then kept frozen.

use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{AdamW, Conv2d, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorspace::{colorfulness_of_samples, GrayImage, RgbImage};
use crate::error::{shape_mismatch, Error, Result};
use crate::metrics::spearman;
use crate::nn;

/// A `C × H/f × W/f` latent, stored channel-first in `f64`.
///
/// Values produced by encoders are `f32`-representable, so differences and
/// sums of latents computed here are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    factor: usize,
    data: Vec<f64>,
}

/// Latent-shaped color vector `z_color − z_gray`, possibly scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorResidual(LatentGrid);

impl LatentGrid {
    pub fn new(channels: usize, height: usize, width: usize, factor: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_mismatch(channels * height * width, data.len()));
        }
        if factor == 0 {
            return Err(Error::InvalidInput("downsample factor must be positive".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite latent value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            factor,
            data,
        })
    }

    /// Skips the finiteness check so callers can report where a
    /// non-finite value arose.
    pub(crate) fn new_unchecked(channels: usize, height: usize, width: usize, factor: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            factor,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize, factor: usize) -> Self {
        Self {
            channels,
            height,
            width,
            factor,
            data: vec![0.0; channels * height * width],
        }
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Pixel dimensions `(width, height)` this latent decodes to.
    pub fn image_dims(&self) -> (usize, usize) {
        (self.width * self.factor, self.height * self.factor)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.shape() != other.shape() || self.factor != other.factor {
            return Err(shape_mismatch(
                (self.shape(), self.factor),
                (other.shape(), other.factor),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &LatentGrid, f: impl Fn(f64, f64) -> f64) -> Result<LatentGrid> {
        self.check_same_shape(other)?;
        Ok(LatentGrid {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn add_residual(&self, r: &ColorResidual) -> Result<LatentGrid> {
        self.zip_with(&r.0, |a, b| a + b)
    }

    /// `self + weight · r`.
    pub fn add_scaled(&self, r: &ColorResidual, weight: f64) -> Result<LatentGrid> {
        self.zip_with(&r.0, |a, b| a + weight * b)
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (1, self.channels, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Accepts `(1, C, H, W)` or `(C, H, W)` tensors.
    pub fn from_tensor(t: &Tensor, factor: usize) -> Result<Self> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            3 => t.clone(),
            r => return Err(shape_mismatch("rank 3 or 4", r)),
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Self::new(c, h, w, factor, data)
    }

    /// Weighted elementwise combination `(1 − w)·a + w·b`.
    pub(crate) fn lerp(a: &LatentGrid, b: &LatentGrid, w: f64) -> Result<LatentGrid> {
        a.zip_with(b, |x, y| (1.0 - w) * x + w * y)
    }
}

impl ColorResidual {
    pub fn new(grid: LatentGrid) -> Self {
        Self(grid)
    }

    pub fn grid(&self) -> &LatentGrid {
        &self.0
    }

    pub fn into_grid(self) -> LatentGrid {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    pub fn scaled(&self, s: f64) -> ColorResidual {
        ColorResidual(LatentGrid {
            data: self.0.data.iter().map(|v| v * s).collect(),
            ..self.0
        })
    }

    /// Mean of squared entries.
    pub fn mean_square(&self) -> f64 {
        self.0.data.iter().map(|v| v * v).sum::<f64>() / self.0.data.len().max(1) as f64
    }
}

/// `z_color − z_gray`.
pub fn color_latent(z_color: &LatentGrid, z_gray: &LatentGrid) -> Result<ColorResidual> {
    Ok(ColorResidual(z_color.zip_with(z_gray, |a, b| a - b)?))
}

/// Architecture of the learned autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub latent_channels: usize,
    /// Feature widths per downsampling stage; the factor is `2^len`.
    pub widths: Vec<usize>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            widths: vec![16, 32, 64],
        }
    }
}

impl CodecConfig {
    pub fn factor(&self) -> usize {
        1 << self.widths.len()
    }
}

/// JSON sidecar written next to the codec weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSidecar {
    pub kind: String,
    pub f: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub corpus_hash: String,
    pub config: CodecConfig,
}

#[derive(Debug, Clone)]
pub struct CodecTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of training samples presented as their grayscale version, so
    /// gray inputs stay inside the span of the decoder.
    pub gray_fraction: f64,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 16,
            learning_rate: 2e-3,
            gray_fraction: 0.3,
            seed: 0,
        }
    }
}

struct Encoder {
    conv_in: Conv2d,
    stages: Vec<(Conv2d, Conv2d)>,
    conv_out: Conv2d,
}

struct Decoder {
    conv_in: Conv2d,
    stages: Vec<(Conv2d, Conv2d)>,
    conv_out: Conv2d,
}

impl Encoder {
    fn new(cfg: &CodecConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let w0 = cfg.widths[0];
        let conv_in = nn::conv3x3(3, w0, 1, vb.pp("conv_in"))?;
        let mut stages = Vec::new();
        let mut prev = w0;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let vs = vb.pp(format!("down{i}"));
            stages.push((nn::conv3x3(prev, w, 2, vs.pp("a"))?, nn::conv3x3(w, w, 1, vs.pp("b"))?));
            prev = w;
        }
        let conv_out = nn::conv1x1(prev, cfg.latent_channels, vb.pp("conv_out"))?;
        Ok(Self {
            conv_in,
            stages,
            conv_out,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = self.conv_in.forward(x)?.silu()?;
        for (a, b) in &self.stages {
            h = a.forward(&h)?.silu()?;
            h = b.forward(&h)?.silu()?;
        }
        self.conv_out.forward(&h)
    }
}

impl Decoder {
    fn new(cfg: &CodecConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let top = *cfg.widths.last().expect("at least one stage");
        let conv_in = nn::conv3x3(cfg.latent_channels, top, 1, vb.pp("conv_in"))?;
        let mut stages = Vec::new();
        let mut prev = top;
        for (i, &w) in cfg.widths.iter().enumerate().rev() {
            let vs = vb.pp(format!("up{i}"));
            stages.push((nn::conv3x3(prev, w, 1, vs.pp("a"))?, nn::conv3x3(w, w, 1, vs.pp("b"))?));
            prev = w;
        }
        let conv_out = nn::conv3x3(prev, 3, 1, vb.pp("conv_out"))?;
        Ok(Self {
            conv_in,
            stages,
            conv_out,
        })
    }

    fn forward(&self, z: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = self.conv_in.forward(z)?.silu()?;
        for (a, b) in &self.stages {
            h = nn::upsample2(&h)?;
            h = a.forward(&h)?.silu()?;
            h = b.forward(&h)?.silu()?;
        }
        self.conv_out.forward(&h)
    }
}

/// Small convolutional autoencoder. Deterministic: encoding returns the
/// code itself, there is no posterior sampling.
pub struct LearnedCodec {
    config: CodecConfig,
    corpus_hash: String,
    varmap: VarMap,
    encoder: Encoder,
    decoder: Decoder,
    device: Device,
}

impl std::fmt::Debug for LearnedCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LearnedCodec")
            .field("config", &self.config)
            .field("corpus_hash", &self.corpus_hash)
            .finish()
    }
}

impl LearnedCodec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.latent_channels == 0 {
            return Err(Error::InvalidInput(
                "codec needs at least one stage and one channel".into(),
            ));
        }
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let encoder = Encoder::new(&config, vb.pp("encoder"))?;
        let decoder = Decoder::new(&config, vb.pp("decoder"))?;
        nn::reinit_seeded(&varmap, seed)?;
        Ok(Self {
            config,
            corpus_hash: String::new(),
            varmap,
            encoder,
            decoder,
            device,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn sidecar(&self) -> CodecSidecar {
        CodecSidecar {
            kind: "learned-autoencoder".into(),
            f: self.config.factor(),
            c: self.config.latent_channels,
            corpus_hash: self.corpus_hash.clone(),
            config: self.config.clone(),
        }
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        nn::save_checkpoint(&self.varmap, stem, &self.sidecar())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: CodecSidecar = nn::read_sidecar(stem)?;
        if meta.kind != "learned-autoencoder" || meta.f != meta.config.factor() {
            return Err(Error::Checkpoint(format!("inconsistent codec sidecar: {meta:?}")));
        }
        let mut codec = Self::new(meta.config, 0)?;
        nn::load_weights(&mut codec.varmap, stem)?;
        codec.corpus_hash = meta.corpus_hash;
        Ok(codec)
    }

    fn images_to_tensor(&self, images: &[&RgbImage]) -> Result<Tensor> {
        let mut parts = Vec::with_capacity(images.len());
        for img in images {
            parts.push(rgb_to_chw(img, &self.device)?);
        }
        let x = Tensor::stack(&parts, 0)?;
        Ok(((x * 2.0)? - 1.0)?)
    }

    fn encode_tensor(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.encoder.forward(x)
    }

    fn decode_tensor(&self, z: &Tensor) -> candle_core::Result<Tensor> {
        (self.decoder.forward(z)? * 0.5)? + 0.5
    }

    /// Reconstruction training on `images`; returns the per-step losses.
    pub fn train(&mut self, images: &[RgbImage], cfg: &CodecTrainConfig) -> Result<Vec<f32>> {
        if images.is_empty() {
            return Err(Error::InvalidInput("codec training needs images".into()));
        }
        let f = self.config.factor();
        if let Some(bad) = images.iter().find(|i| i.width() % f != 0 || i.height() % f != 0) {
            return Err(Error::InvalidInput(format!(
                "image {}x{} not divisible by codec factor {f}",
                bad.width(),
                bad.height()
            )));
        }
        self.corpus_hash = corpus_hash(images);
        let grays: Vec<RgbImage> = images.iter().map(|i| i.to_gray().to_rgb()).collect();
        let mut opt = AdamW::new(
            self.varmap.all_vars(),
            ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut cursor = order.len();
        let mut losses = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let i = order[cursor];
                cursor += 1;
                batch.push(if rng.random_bool(cfg.gray_fraction) {
                    &grays[i]
                } else {
                    &images[i]
                });
            }
            let x = self.images_to_tensor(&batch)?;
            let recon = self.decoder.forward(&self.encode_tensor(&x)?)?;
            let loss = (recon - &x)?.sqr()?.mean_all()?;
            let value = loss.to_scalar::<f32>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: "codec reconstruction loss".into(),
                });
            }
            opt.backward_step(&loss)?;
            losses.push(value);
        }
        Ok(losses)
    }
}

fn rgb_to_chw(img: &RgbImage, device: &Device) -> Result<Tensor> {
    let (w, h) = img.dims();
    let t = Tensor::from_slice(img.data(), (h, w, 3), device)?;
    Ok(t.permute((2, 0, 1))?.contiguous()?)
}

/// Hash of the pixel content of a training corpus, recorded in sidecars.
pub fn corpus_hash(images: &[RgbImage]) -> String {
    let mut hasher = Sha256::new();
    for img in images {
        hasher.update((img.width() as u64).to_le_bytes());
        hasher.update((img.height() as u64).to_le_bytes());
        for v in img.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// The encoder/decoder pair used by the pipeline. Immutable once built.
#[derive(Debug)]
pub enum CodecBackend {
    Identity,
    Learned(Box<LearnedCodec>),
}

impl CodecBackend {
    pub fn factor(&self) -> usize {
        match self {
            CodecBackend::Identity => 1,
            CodecBackend::Learned(c) => c.config.factor(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            CodecBackend::Identity => 3,
            CodecBackend::Learned(c) => c.config.latent_channels,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CodecBackend::Identity => "identity",
            CodecBackend::Learned(_) => "learned-autoencoder",
        }
    }

    fn check_divisible(&self, width: usize, height: usize) -> Result<()> {
        let f = self.factor();
        if !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(Error::InvalidInput(format!(
                "image {width}x{height} not divisible by codec factor {f}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, img: &RgbImage) -> Result<LatentGrid> {
        self.check_divisible(img.width(), img.height())?;
        match self {
            CodecBackend::Identity => {
                let (w, h) = img.dims();
                let mut data = vec![0.0; 3 * w * h];
                for (i, p) in img.pixels().enumerate() {
                    for c in 0..3 {
                        data[c * w * h + i] = f64::from(p[c]);
                    }
                }
                LatentGrid::new(3, h, w, 1, data)
            }
            CodecBackend::Learned(codec) => {
                let x = codec.images_to_tensor(&[img])?;
                let z = codec.encode_tensor(&x)?;
                LatentGrid::from_tensor(&z, codec.config.factor())
            }
        }
    }

    /// Gray inputs are replicated to three channels before encoding.
    pub fn encode_gray(&self, gray: &GrayImage) -> Result<LatentGrid> {
        self.encode(&gray.to_rgb())
    }

    fn check_latent(&self, z: &LatentGrid) -> Result<()> {
        let (c, _, _) = z.shape();
        if c != self.channels() || z.factor() != self.factor() {
            return Err(shape_mismatch((self.channels(), self.factor()), (c, z.factor())));
        }
        Ok(())
    }

    /// Decoder output before clamping, channel-last.
    pub fn decode_raw(&self, z: &LatentGrid) -> Result<Vec<f32>> {
        self.check_latent(z)?;
        let (c, h, w) = z.shape();
        match self {
            CodecBackend::Identity => {
                let mut out = vec![0.0_f32; c * h * w];
                for i in 0..h * w {
                    for ch in 0..3 {
                        out[i * 3 + ch] = z.values()[ch * h * w + i] as f32;
                    }
                }
                Ok(out)
            }
            CodecBackend::Learned(codec) => {
                let t = z.to_tensor(&codec.device, DType::F32)?;
                let x = codec.decode_tensor(&t)?.squeeze(0)?.permute((1, 2, 0))?;
                Ok(x.flatten_all()?.to_vec1::<f32>()?)
            }
        }
    }

    pub fn decode(&self, z: &LatentGrid) -> Result<RgbImage> {
        let raw = self.decode_raw(z)?;
        let (w, h) = z.image_dims();
        RgbImage::from_clamped(w, h, raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub scale: f64,
    pub mean_colorfulness: f64,
}

/// Colorfulness of `decode(z_gray + s·Δ)` across scales, measured on the
/// unclamped decoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub backend: String,
    pub image_count: usize,
    pub rows: Vec<ProbeRow>,
    /// Mean colorfulness of the decoded grayscale latents.
    pub gray_colorfulness: f64,
    /// Spearman rank correlation between scale and mean colorfulness.
    pub spearman: f64,
}

pub const MIN_PROBE_IMAGES: usize = 10;

pub fn linearity_probe(images: &[RgbImage], scales: &[f64], backend: &CodecBackend) -> Result<ProbeReport> {
    if images.len() < MIN_PROBE_IMAGES {
        return Err(Error::InvalidInput(format!(
            "linearity probe needs at least {MIN_PROBE_IMAGES} images, got {}",
            images.len()
        )));
    }
    if scales.len() < 2 || scales.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("need at least two finite scales".into()));
    }
    let mut sums = vec![0.0; scales.len()];
    let mut gray_sum = 0.0;
    for img in images {
        let z_color = backend.encode(img)?;
        let z_gray = backend.encode_gray(&img.to_gray())?;
        let delta = color_latent(&z_color, &z_gray)?;
        gray_sum += colorfulness_of_samples(&backend.decode_raw(&z_gray)?);
        for (acc, &s) in sums.iter_mut().zip(scales) {
            let z = z_gray.add_scaled(&delta, s)?;
            *acc += colorfulness_of_samples(&backend.decode_raw(&z)?);
        }
    }
    let n = images.len() as f64;
    let rows: Vec<ProbeRow> = scales
        .iter()
        .zip(&sums)
        .map(|(&scale, &sum)| ProbeRow {
            scale,
            mean_colorfulness: sum / n,
        })
        .collect();
    let colorfulness: Vec<f64> = rows.iter().map(|r| r.mean_colorfulness).collect();
    Ok(ProbeReport {
        backend: backend.kind().into(),
        image_count: images.len(),
        spearman: spearman(scales, &colorfulness),
        rows,
        gray_colorfulness: gray_sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u32) -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| {
            let v = ((x as u32 * 7 + y as u32 * 13 + seed * 29) % 17) as f32 / 16.0;
            [v, 1.0 - v, (x as f32) / 15.0]
        })
        .unwrap()
    }

    #[test]
    fn identity_round_trip_is_exact() {
        let b = CodecBackend::Identity;
        let x = img(1);
        let z = b.encode(&x).unwrap();
        assert_eq!(z.shape(), (3, 16, 16));
        assert_eq!(b.decode(&z).unwrap(), x);
    }

    #[test]
    fn identity_constant_image_gives_constant_latent() {
        let b = CodecBackend::Identity;
        let z = b.encode(&RgbImage::constant(8, 8, [0.2, 0.4, 0.6]).unwrap()).unwrap();
        for c in 0..3 {
            let plane = &z.values()[c * 64..(c + 1) * 64];
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }

    #[test]
    fn identity_color_latent_is_pixel_chroma_difference() {
        let b = CodecBackend::Identity;
        let x = img(2);
        let g = x.to_gray();
        let delta = color_latent(&b.encode(&x).unwrap(), &b.encode_gray(&g).unwrap()).unwrap();
        let (w, h) = x.dims();
        for (i, p) in x.pixels().enumerate() {
            for c in 0..3 {
                let expected = f64::from(p[c]) - f64::from(g.data()[i]);
                assert_eq!(delta.values()[c * w * h + i], expected);
            }
        }
    }

    #[test]
    fn residual_reconstructs_exactly() {
        let b = CodecBackend::Identity;
        let z_color = b.encode(&img(3)).unwrap();
        let z_gray = b.encode_gray(&img(3).to_gray()).unwrap();
        let delta = color_latent(&z_color, &z_gray).unwrap();
        assert_eq!(z_gray.add_residual(&delta).unwrap(), z_color);
        let zero = color_latent(&z_color, &z_color).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let a = LatentGrid::zeros(3, 4, 4, 1);
        let b = LatentGrid::zeros(3, 4, 5, 1);
        assert!(color_latent(&a, &b).is_err());
        let learned = CodecBackend::Learned(Box::new(LearnedCodec::new(CodecConfig::default(), 0).unwrap()));
        assert!(learned.encode(&RgbImage::constant(12, 16, [0.5; 3]).unwrap()).is_err());
        assert!(learned.decode(&a).is_err());
    }

    #[test]
    fn learned_shapes_are_consistent() {
        let codec = CodecBackend::Learned(Box::new(LearnedCodec::new(CodecConfig::default(), 7).unwrap()));
        let x = RgbImage::constant(32, 16, [0.3, 0.5, 0.7]).unwrap();
        let z = codec.encode(&x).unwrap();
        assert_eq!(z.shape(), (4, 2, 4));
        assert_eq!(codec.decode(&z).unwrap().dims(), (32, 16));
    }

    #[test]
    fn seeded_codecs_match() {
        let a = LearnedCodec::new(CodecConfig::default(), 11).unwrap();
        let b = LearnedCodec::new(CodecConfig::default(), 11).unwrap();
        let x = img(4);
        let za = CodecBackend::Learned(Box::new(a)).encode(&x).unwrap();
        let zb = CodecBackend::Learned(Box::new(b)).encode(&x).unwrap();
        assert_eq!(za, zb);
    }

    #[test]
    fn identity_probe_is_monotone() {
        let images: Vec<RgbImage> = (0..10).map(img).collect();
        let scales = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5];
        let report = linearity_probe(&images, &scales, &CodecBackend::Identity).unwrap();
        assert_eq!(report.spearman, 1.0);
        assert!(report
            .rows
            .windows(2)
            .all(|w| w[1].mean_colorfulness >= w[0].mean_colorfulness));
        assert!((report.rows[0].mean_colorfulness - report.gray_colorfulness).abs() < 1e-9);
        assert!(linearity_probe(&images[..3], &scales, &CodecBackend::Identity).is_err());
    }
}

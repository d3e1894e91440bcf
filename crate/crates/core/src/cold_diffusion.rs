//! Deterministic degradation toward the grayscale latent, timestep handling,
//! and the training objective.
//!
//! A degraded latent at level `t` is the convex combination
//! `(1 − t)·z_gray + t·z_color`: `t = 0` is fully gray, `t = 1` is the clean
//! color latent. The network learns the residual back to the clean latent.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::colorspace::{mean_saturation, scale_chroma, to_grayscale, GrayImage, RgbImage};
use crate::denoiser::{ResidualModel, TrainableModel};
use crate::error::{shape_mismatch, Error, Result};
use crate::latent_codec::{color_latent, CodecBackend, ColorResidual, LatentGrid};

/// Number of discrete levels above zero in the timestep embedding grid.
pub const LEVELS: u32 = 100;

/// A degradation level. `t` is kept exactly; `level` is its position on the
/// 101-point embedding grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timestep {
    t: f64,
    level: u32,
}

impl Timestep {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("timestep {t} outside [0, 1]")));
        }
        Ok(Self {
            t,
            level: (t * f64::from(LEVELS)).round() as u32,
        })
    }

    pub fn from_level(level: u32) -> Result<Self> {
        if level > LEVELS {
            return Err(Error::InvalidInput(format!("level {level} outside 0..={LEVELS}")));
        }
        Ok(Self {
            t: f64::from(level) / f64::from(LEVELS),
            level,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// The level with the roles of gray and color swapped, `1 − t`.
    pub fn complement(&self) -> Self {
        Self::new(1.0 - self.t).expect("complement of a valid timestep is valid")
    }
}

/// `(1 − t)·z_gray + t·z_color`.
pub fn degrade(z_color: &LatentGrid, z_gray: &LatentGrid, t: Timestep) -> Result<LatentGrid> {
    LatentGrid::lerp(z_gray, z_color, t.t())
}

/// What the network should add to `z_t` to reach `z_color`.
pub fn residual_target(z_color: &LatentGrid, z_t: &LatentGrid) -> Result<ColorResidual> {
    color_latent(z_color, z_t)
}

pub const MAX_STEPS: usize = 100;

/// `T` degradation severities descending from 1 with constant stride `1/T`:
/// `[1, 1 − 1/T, …, 1/T]`.
pub fn make_schedule(steps: usize) -> Result<Vec<Timestep>> {
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(Error::InvalidInput(format!("steps {steps} outside 1..={MAX_STEPS}")));
    }
    (0..steps)
        .map(|i| Timestep::new(1.0 - i as f64 / steps as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: RgbImage,
    pub caption: String,
    pub caption_dropped: bool,
}

impl TrainSample {
    pub fn new(image: RgbImage, caption: impl Into<String>) -> Self {
        Self {
            image,
            caption: caption.into(),
            caption_dropped: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Fraction of `learning_rate` reached at the last step by cosine
    /// decay; 1 keeps the rate constant.
    #[serde(default = "constant_rate")]
    pub final_lr_fraction: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub caption_drop_prob: f64,
    /// Probability of perturbing contrast and brightness of the gray input.
    pub gray_aug_prob: f64,
    pub contrast_range: (f64, f64),
    pub brightness_range: (f64, f64),
    /// Probability of boosting the target's chroma.
    pub chroma_aug_prob: f64,
    pub chroma_range: (f64, f64),
    /// Images with a lower mean HSV saturation are dropped.
    pub min_saturation: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

fn constant_rate() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            final_lr_fraction: 1.0,
            betas: (0.9, 0.999),
            weight_decay: 0.01,
            batch_size: 16,
            total_steps: 10_000,
            caption_drop_prob: 0.1,
            gray_aug_prob: 0.1,
            contrast_range: (0.8, 1.2),
            brightness_range: (0.9, 1.1),
            chroma_aug_prob: 0.1,
            chroma_range: (1.0, 1.2),
            min_saturation: 0.1,
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for training a small model from scratch on a toy corpus.
    /// The default learning rate assumes fine-tuning a pretrained network
    /// and barely moves a randomly initialized one.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            total_steps: 1500,
            checkpoint_every: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.final_lr_fraction,
            self.caption_drop_prob,
            self.gray_aug_prob,
            self.chroma_aug_prob,
            self.min_saturation,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(
                "probabilities and the final learning-rate fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidInput(
                "learning rate and batch size must be positive".into(),
            ));
        }
        for (lo, hi) in [self.contrast_range, self.brightness_range, self.chroma_range] {
            if !(lo <= hi) {
                return Err(Error::InvalidInput(format!("empty range ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// Learning rate for update `step` (0-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.final_lr_fraction == 1.0 || self.total_steps < 2 {
            return self.learning_rate;
        }
        let progress = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }

    pub fn optimizer_params(&self) -> ParamsAdamW {
        ParamsAdamW {
            lr: self.learning_rate,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

/// Keeps samples whose mean HSV saturation is at least `min_saturation`.
/// Returns the kept samples and the number dropped.
pub fn saturation_filter(samples: Vec<TrainSample>, min_saturation: f64) -> (Vec<TrainSample>, usize) {
    let before = samples.len();
    let kept: Vec<TrainSample> = samples
        .into_iter()
        .filter(|s| mean_saturation(&s.image) >= min_saturation)
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// `clamp(((g − ½)·contrast + ½)·brightness)`.
pub fn adjust_gray(gray: &GrayImage, contrast: f64, brightness: f64) -> Result<GrayImage> {
    let (w, h) = gray.dims();
    let data = gray
        .data()
        .iter()
        .map(|&g| (((f64::from(g) - 0.5) * contrast + 0.5) * brightness) as f32)
        .collect();
    GrayImage::from_clamped(w, h, data)
}

#[derive(Debug, Deserialize, Serialize)]
struct CaptionLine {
    file: String,
    caption: String,
}

pub const CAPTIONS_FILE: &str = "captions.jsonl";

/// Reads `<dir>/captions.jsonl` (`{file, caption}` per line) and the images
/// it names.
pub fn load_corpus(dir: &Path) -> Result<Vec<TrainSample>> {
    let text = std::fs::read_to_string(dir.join(CAPTIONS_FILE))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CaptionLine = serde_json::from_str(line)
            .map_err(|e| Error::InvalidInput(format!("{CAPTIONS_FILE} line {}: {e}", n + 1)))?;
        let image = RgbImage::load(dir.join(&entry.file))?;
        out.push(TrainSample::new(image, entry.caption));
    }
    Ok(out)
}

/// Writes images as PNG plus the caption index; the inverse of
/// [`load_corpus`].
pub fn write_corpus(dir: &Path, samples: &[TrainSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (i, s) in samples.iter().enumerate() {
        let file = format!("{i:06}.png");
        s.image.save_png(dir.join(&file))?;
        index.push_str(&serde_json::to_string(&CaptionLine {
            file,
            caption: s.caption.clone(),
        })?);
        index.push('\n');
    }
    std::fs::write(dir.join(CAPTIONS_FILE), index)?;
    Ok(())
}

/// Latent pairs, levels and prompts for one optimization step.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub z_color: Tensor,
    pub z_gray: Tensor,
    pub timesteps: Vec<Timestep>,
    pub prompts: Vec<String>,
}

impl PreparedBatch {
    pub fn from_latents(
        pairs: &[(LatentGrid, LatentGrid)],
        timesteps: Vec<Timestep>,
        prompts: Vec<String>,
        dtype: DType,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if timesteps.len() != pairs.len() || prompts.len() != pairs.len() {
            return Err(shape_mismatch(pairs.len(), (timesteps.len(), prompts.len())));
        }
        let dev = Device::Cpu;
        let mut colors = Vec::with_capacity(pairs.len());
        let mut grays = Vec::with_capacity(pairs.len());
        for (c, g) in pairs {
            if c.shape() != g.shape() || c.shape() != pairs[0].0.shape() {
                return Err(shape_mismatch(pairs[0].0.shape(), (c.shape(), g.shape())));
            }
            colors.push(c.to_tensor(&dev, dtype)?.squeeze(0)?);
            grays.push(g.to_tensor(&dev, dtype)?.squeeze(0)?);
        }
        Ok(Self {
            z_color: Tensor::stack(&colors, 0)?,
            z_gray: Tensor::stack(&grays, 0)?,
            timesteps,
            prompts,
        })
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Degraded latents `(1 − t)·z_gray + t·z_color`, per sample.
    pub fn degraded(&self) -> Result<Tensor> {
        let dtype = self.z_color.dtype();
        let t: Vec<f64> = self.timesteps.iter().map(Timestep::t).collect();
        let t = Tensor::from_vec(t, (self.len(), 1, 1, 1), self.z_color.device())?.to_dtype(dtype)?;
        let one_minus = (t.ones_like()? - &t)?;
        Ok((self.z_gray.broadcast_mul(&one_minus)? + self.z_color.broadcast_mul(&t)?)?)
    }

    pub fn levels(&self) -> Vec<u32> {
        self.timesteps.iter().map(Timestep::level).collect()
    }
}

/// Draws the per-sample randomness of one batch: caption dropout, input and
/// target augmentation, and a uniform level in `0..=100`.
pub fn prepare_batch(
    samples: &[TrainSample],
    codec: &CodecBackend,
    cfg: &TrainConfig,
    rng: &mut StdRng,
    dtype: DType,
) -> Result<PreparedBatch> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    let mut timesteps = Vec::with_capacity(samples.len());
    let mut prompts = Vec::with_capacity(samples.len());
    for s in samples {
        let dropped = s.caption_dropped || rng.random_bool(cfg.caption_drop_prob);
        prompts.push(if dropped { String::new() } else { s.caption.clone() });
        let mut gray = to_grayscale(&s.image);
        if rng.random_bool(cfg.gray_aug_prob) {
            let c = rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1);
            let b = rng.random_range(cfg.brightness_range.0..=cfg.brightness_range.1);
            gray = adjust_gray(&gray, c, b)?;
        }
        let target = if rng.random_bool(cfg.chroma_aug_prob) {
            let k = rng.random_range(cfg.chroma_range.0..=cfg.chroma_range.1);
            scale_chroma(&s.image, k)?
        } else {
            s.image.clone()
        };
        pairs.push((codec.encode(&target)?, codec.encode_gray(&gray)?));
        timesteps.push(Timestep::from_level(rng.random_range(0..=LEVELS))?);
    }
    PreparedBatch::from_latents(&pairs, timesteps, prompts, dtype)
}

/// Mean over all latent elements and the batch of
/// `(z_color − (z_t + prediction))²`.
pub fn batch_loss(model: &dyn ResidualModel, batch: &PreparedBatch) -> Result<Tensor> {
    let z_t = batch.degraded()?;
    let pred = model.predict_batch(&z_t, &batch.levels(), &batch.prompts)?;
    if pred.dims() != z_t.dims() {
        return Err(shape_mismatch(z_t.dims(), pred.dims()));
    }
    let pred = pred.to_dtype(z_t.dtype())?;
    // Same value as ||z_color − (z_t + pred)||², written against the
    // residual target so an exact predictor scores exactly zero.
    let target = (&batch.z_color - z_t)?;
    Ok((target - pred)?.sqr()?.mean_all()?)
}

/// One optimizer update. Non-finite losses abort before touching weights.
pub fn training_step(model: &dyn TrainableModel, opt: &mut AdamW, batch: &PreparedBatch, step: usize) -> Result<f32> {
    let loss = batch_loss(model, batch)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        let levels = batch.levels();
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("loss {value} on batch of {} with levels {levels:?}", batch.len()),
        });
    }
    opt.backward_step(&loss)?;
    Ok(value as f32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f32>,
    pub dropped_low_saturation: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// Destination and writer for periodic checkpoints.
pub struct CheckpointPlan<'a> {
    pub dir: &'a Path,
    pub save: &'a dyn Fn(&Path) -> Result<()>,
}

/// Runs `cfg.total_steps` updates over `samples` after the saturation
/// filter. Samples are visited in seeded shuffled epochs.
pub fn train(
    model: &dyn TrainableModel,
    samples: Vec<TrainSample>,
    codec: &CodecBackend,
    cfg: &TrainConfig,
    dtype: DType,
    checkpoints: Option<CheckpointPlan>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (samples, dropped) = saturation_filter(samples, cfg.min_saturation);
    if samples.is_empty() {
        return Err(Error::Degenerate("no samples left after the saturation filter".into()));
    }
    if dropped > 0 {
        log::info!("saturation filter dropped {dropped} samples");
    }
    let mut opt = AdamW::new(model.trainable_vars(), cfg.optimizer_params())?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let mut written = Vec::new();
    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(samples[order[cursor]].clone());
            cursor += 1;
        }
        let prepared = prepare_batch(&batch, codec, cfg, &mut rng, dtype)?;
        opt.set_learning_rate(cfg.learning_rate_at(step));
        let loss = training_step(model, &mut opt, &prepared, step)?;
        losses.push(loss);
        if step % 100 == 0 {
            log::debug!("step {step} loss {loss:.6}");
        }
        if let Some(plan) = &checkpoints {
            let done = step + 1;
            if cfg.checkpoint_every > 0 && (done % cfg.checkpoint_every == 0 || done == cfg.total_steps) {
                let stem = plan.dir.join(format!("step-{done:06}"));
                (plan.save)(&stem)?;
                std::fs::write(stem.with_extension("train.json"), serde_json::to_vec_pretty(cfg)?)?;
                written.push(stem);
            }
        }
    }
    Ok(TrainReport {
        losses,
        dropped_low_saturation: dropped,
        checkpoints: written,
    })
}

//! Iterative colorization with classifier-free guidance.
//!
//! Starting from the gray latent, each of `T` iterations predicts the clean
//! latent `ẑ` under the positive and negative prompts, combines them as
//! `ẑ = z + P_neg + s·(P_pos − P_neg)`, and moves the running latent a
//! `1/T` step along `ẑ − z_gray`. The final color residual `ẑ − z_gray` is
//! scaled by the color scale, decoded, and merged with the input lightness.

use serde::{Deserialize, Serialize};

use crate::cold_diffusion::{make_schedule, Timestep, MAX_STEPS};
use crate::colorspace::{colorfulness, replace_luma, GrayImage, RgbImage};
use crate::denoiser::{ColorRestorer, TextEmbedding};
use crate::error::{shape_mismatch, Error, Result};
use crate::latent_codec::{color_latent, CodecBackend, ColorResidual, LatentGrid};
use crate::prompts::{PromptBundle, DEFAULT_NEGATIVE_PROMPT};

pub const DEFAULT_GUIDANCE_SCALE: f64 = 1.6;
pub const DEFAULT_COLOR_SCALE: f64 = 0.8;
pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub color_scale: f64,
    pub positive: String,
    pub negative: String,
    /// Added to every token of the positive prompt embedding.
    #[serde(default)]
    pub positive_shift: Option<Vec<f64>>,
    #[serde(default)]
    pub trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            color_scale: DEFAULT_COLOR_SCALE,
            positive: String::new(),
            negative: DEFAULT_NEGATIVE_PROMPT.into(),
            positive_shift: None,
            trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn with_prompts(mut self, bundle: &PromptBundle) -> Self {
        self.positive = bundle.positive.clone();
        self.negative = bundle.negative.clone();
        self.positive_shift = bundle.direction.as_ref().map(|d| d.vector.clone());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_STEPS).contains(&self.steps) {
            return Err(Error::InvalidInput(format!(
                "steps {} outside 1..={MAX_STEPS}",
                self.steps
            )));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "guidance scale {} must be finite and non-negative",
                self.guidance_scale
            )));
        }
        check_color_scale(self.color_scale)
    }
}

/// Zero is allowed and yields the gray image.
fn check_color_scale(s: f64) -> Result<()> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "color scale {s} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// The clean-latent estimate after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    /// Degradation severity of the iteration, descending from 1.
    pub t: f64,
    pub z_hat: LatentGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub colorfulness: f64,
}

/// Everything needed to re-render the output at another color scale
/// without running the denoiser again.
#[derive(Debug, Clone)]
pub struct ColorizationResult {
    pub image: RgbImage,
    /// Final color residual `ẑ − z_gray`, before color scaling.
    pub residual: ColorResidual,
    pub z_gray: LatentGrid,
    pub source: GrayImage,
    pub color_scale: f64,
    pub trace: Option<Vec<TraceStep>>,
}

/// `z_gray + s·delta`.
pub fn scale_color(z_gray: &LatentGrid, delta: &ColorResidual, s: f64) -> Result<LatentGrid> {
    z_gray.add_scaled(delta, s)
}

/// Reflects an index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflection-pads a channel-last buffer on the right and bottom.
fn reflect_pad(data: &[f32], w: usize, h: usize, channels: usize, new_w: usize, new_h: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(new_w * new_h * channels);
    for y in 0..new_h {
        let sy = reflect(y as isize, h);
        for x in 0..new_w {
            let sx = reflect(x as isize, w);
            let base = (sy * w + sx) * channels;
            out.extend_from_slice(&data[base..base + channels]);
        }
    }
    out
}

fn crop(img: &RgbImage, w: usize, h: usize) -> Result<RgbImage> {
    if img.dims() == (w, h) {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(w * h * 3);
    let stride = img.width() * 3;
    for y in 0..h {
        data.extend_from_slice(&img.data()[y * stride..y * stride + w * 3]);
    }
    RgbImage::new(w, h, data)
}

/// Pixel multiple the latent pipeline needs for this model and codec.
pub fn size_multiple(model: &dyn ColorRestorer, codec: &CodecBackend) -> usize {
    codec.factor() * model.spatial_multiple()
}

fn padded_dims(w: usize, h: usize, m: usize) -> (usize, usize) {
    (w.div_ceil(m) * m, h.div_ceil(m) * m)
}

pub fn pad_gray(gray: &GrayImage, multiple: usize) -> Result<GrayImage> {
    let (w, h) = gray.dims();
    let (pw, ph) = padded_dims(w, h, multiple);
    if (pw, ph) == (w, h) {
        return Ok(gray.clone());
    }
    GrayImage::new(pw, ph, reflect_pad(gray.data(), w, h, 1, pw, ph))
}

pub fn pad_rgb(img: &RgbImage, multiple: usize) -> Result<RgbImage> {
    let (w, h) = img.dims();
    let (pw, ph) = padded_dims(w, h, multiple);
    if (pw, ph) == (w, h) {
        return Ok(img.clone());
    }
    RgbImage::new(pw, ph, reflect_pad(img.data(), w, h, 3, pw, ph))
}

struct Prompts {
    positive: TextEmbedding,
    negative: Option<TextEmbedding>,
}

fn embed_prompts(model: &dyn ColorRestorer, cfg: &SamplerConfig, conditional_only: bool) -> Result<Prompts> {
    let mut positive = model.embed_text(&cfg.positive)?;
    if let Some(shift) = &cfg.positive_shift {
        positive = positive.shifted(shift)?;
    }
    // At unit guidance the negative branch cancels algebraically; skipping
    // it keeps the output bit-identical to the conditional-only sampler.
    let negative = if conditional_only || cfg.guidance_scale == 1.0 {
        None
    } else {
        Some(model.embed_text(&cfg.negative)?)
    };
    Ok(Prompts { positive, negative })
}

/// Output of the iterative loop, before color scaling and decoding.
#[derive(Debug, Clone)]
pub struct LoopOutput {
    /// Clean-latent estimate from the last iteration that ran, or the
    /// starting latent when none did.
    pub z_hat: LatentGrid,
    pub trace: Option<Vec<TraceStep>>,
}

fn guided_estimate(
    model: &dyn ColorRestorer,
    z: &LatentGrid,
    t: Timestep,
    prompts: &Prompts,
    guidance: f64,
) -> Result<LatentGrid> {
    let p_pos = model.predict_residual(z, t, &prompts.positive)?;
    if p_pos.shape() != z.shape() {
        return Err(shape_mismatch(z.shape(), p_pos.shape()));
    }
    match &prompts.negative {
        None => z.add_residual(&p_pos),
        Some(neg) => {
            let p_neg = model.predict_residual(z, t, neg)?;
            if p_neg.shape() != z.shape() {
                return Err(shape_mismatch(z.shape(), p_neg.shape()));
            }
            let pos = p_pos.values();
            let data = z
                .values()
                .iter()
                .zip(p_neg.values())
                .zip(pos)
                .map(|((&zv, &n), &p)| zv + n + guidance * (p - n))
                .collect();
            let (c, h, w) = z.shape();
            Ok(LatentGrid::new_unchecked(c, h, w, z.factor(), data))
        }
    }
}

/// Runs iterations `start..T` from `z_init`. The model is conditioned on
/// the current mix level `i/T`, which is where the running latent sits on
/// the gray-to-color path.
pub fn run_loop(
    model: &dyn ColorRestorer,
    z_init: &LatentGrid,
    z_gray: &LatentGrid,
    start: usize,
    cfg: &SamplerConfig,
) -> Result<LoopOutput> {
    cfg.validate()?;
    run_loop_with(model, z_init, z_gray, start, cfg, false)
}

fn run_loop_with(
    model: &dyn ColorRestorer,
    z_init: &LatentGrid,
    z_gray: &LatentGrid,
    start: usize,
    cfg: &SamplerConfig,
    conditional_only: bool,
) -> Result<LoopOutput> {
    if start > cfg.steps {
        return Err(Error::InvalidInput(format!(
            "start iteration {start} beyond {} steps",
            cfg.steps
        )));
    }
    if z_init.shape() != z_gray.shape() {
        return Err(shape_mismatch(z_gray.shape(), z_init.shape()));
    }
    let prompts = embed_prompts(model, cfg, conditional_only)?;
    let schedule = make_schedule(cfg.steps)?;
    let step = 1.0 / cfg.steps as f64;
    let mut z = z_init.clone();
    let mut z_hat = z_init.clone();
    let mut trace = cfg.trace.then(Vec::new);
    for (i, severity) in schedule.iter().enumerate().skip(start) {
        z_hat = guided_estimate(model, &z, severity.complement(), &prompts, cfg.guidance_scale)?;
        if !z_hat.is_finite() {
            return Err(Error::NonFiniteLatent { step: i });
        }
        let direction = color_latent(&z_hat, z_gray)?;
        z = z.add_scaled(&direction, step)?;
        if !z.is_finite() {
            return Err(Error::NonFiniteLatent { step: i });
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceStep {
                step: i,
                t: severity.t(),
                z_hat: z_hat.clone(),
            });
        }
    }
    Ok(LoopOutput { z_hat, trace })
}

/// Decodes `z_gray + s·delta`, crops to the source size and restores the
/// source lightness.
pub fn render(
    codec: &CodecBackend,
    z_gray: &LatentGrid,
    delta: &ColorResidual,
    s: f64,
    source: &GrayImage,
) -> Result<RgbImage> {
    check_color_scale(s)?;
    let decoded = codec.decode(&scale_color(z_gray, delta, s)?)?;
    let (w, h) = source.dims();
    replace_luma(&crop(&decoded, w, h)?, source)
}

/// Shared tail of colorization and enhancement: run the loop from `z_init`
/// and render the final residual.
pub(crate) fn finish(
    model: &dyn ColorRestorer,
    codec: &CodecBackend,
    source: &GrayImage,
    z_init: &LatentGrid,
    z_gray: LatentGrid,
    start: usize,
    cfg: &SamplerConfig,
    conditional_only: bool,
) -> Result<ColorizationResult> {
    let out = run_loop_with(model, z_init, &z_gray, start, cfg, conditional_only)?;
    let residual = color_latent(&out.z_hat, &z_gray)?;
    let image = render(codec, &z_gray, &residual, cfg.color_scale, source)?;
    Ok(ColorizationResult {
        image,
        residual,
        z_gray,
        source: source.clone(),
        color_scale: cfg.color_scale,
        trace: out.trace,
    })
}

fn colorize_impl(
    gray: &GrayImage,
    cfg: &SamplerConfig,
    model: &dyn ColorRestorer,
    codec: &CodecBackend,
    conditional_only: bool,
) -> Result<ColorizationResult> {
    cfg.validate()?;
    gray.ensure_pipeline_size()?;
    let padded = pad_gray(gray, size_multiple(model, codec))?;
    let z_gray = codec.encode_gray(&padded)?;
    finish(model, codec, gray, &z_gray.clone(), z_gray, 0, cfg, conditional_only)
}

/// Colorizes a grayscale image. Deterministic for fixed inputs.
pub fn colorize(
    gray: &GrayImage,
    cfg: &SamplerConfig,
    model: &dyn ColorRestorer,
    codec: &CodecBackend,
) -> Result<ColorizationResult> {
    colorize_impl(gray, cfg, model, codec, false)
}

/// The same loop with the negative branch removed, `ẑ = z + P_pos`.
pub fn colorize_conditional_only(
    gray: &GrayImage,
    cfg: &SamplerConfig,
    model: &dyn ColorRestorer,
    codec: &CodecBackend,
) -> Result<ColorizationResult> {
    colorize_impl(gray, cfg, model, codec, true)
}

impl ColorizationResult {
    /// Re-renders at another color scale from the cached residual.
    pub fn rescale(&self, codec: &CodecBackend, s: f64) -> Result<RgbImage> {
        render(codec, &self.z_gray, &self.residual, s, &self.source)
    }

    /// The final clean-latent estimate `z_gray + residual`.
    pub fn final_latent(&self) -> Result<LatentGrid> {
        self.z_gray.add_residual(&self.residual)
    }
}

/// One decoded, lightness-merged frame per iteration, rendered at unit
/// color scale.
pub fn step_trace(result: &ColorizationResult, codec: &CodecBackend) -> Result<Vec<RgbImage>> {
    let trace = result
        .trace
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("colorization ran without a trace".into()))?;
    trace
        .iter()
        .map(|s| {
            let delta = color_latent(&s.z_hat, &result.z_gray)?;
            render(codec, &result.z_gray, &delta, 1.0, &result.source)
        })
        .collect()
}

pub fn trace_records(result: &ColorizationResult, frames: &[RgbImage]) -> Result<Vec<TraceRecord>> {
    let trace = result
        .trace
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("colorization ran without a trace".into()))?;
    if trace.len() != frames.len() {
        return Err(shape_mismatch(trace.len(), frames.len()));
    }
    Ok(trace
        .iter()
        .zip(frames)
        .map(|(s, f)| TraceRecord {
            step: s.step,
            t: s.t,
            colorfulness: colorfulness(f),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn padding_then_crop_is_identity() {
        let img = RgbImage::from_fn(10, 9, |x, y| [x as f32 / 9.0, y as f32 / 8.0, 0.5]).unwrap();
        let padded = pad_rgb(&img, 8).unwrap();
        assert_eq!(padded.dims(), (16, 16));
        assert_eq!(padded.pixel(10, 0), img.pixel(8, 0));
        assert_eq!(crop(&padded, 10, 9).unwrap(), img);
    }

    #[test]
    fn scale_color_is_affine() {
        let g = LatentGrid::new(1, 1, 3, 1, vec![0.125, 0.25, 0.375]).unwrap();
        let d = ColorResidual::new(LatentGrid::new(1, 1, 3, 1, vec![0.5, -0.25, 1.0]).unwrap());
        assert_eq!(scale_color(&g, &d, 0.0).unwrap(), g);
        assert_eq!(scale_color(&g, &d, 1.0).unwrap(), g.add_residual(&d).unwrap());
        let two = scale_color(&g, &d, 2.0).unwrap();
        let one = scale_color(&g, &d, 1.0).unwrap();
        assert_eq!(color_latent(&two, &one).unwrap(), d);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SamplerConfig)| {
            let mut c = SamplerConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.steps = 0));
        assert!(bad(|c| c.steps = 101));
        assert!(bad(|c| c.guidance_scale = -0.1));
        assert!(bad(|c| c.color_scale = f64::NAN));
    }
}

//! Color enhancement of faded photos.
//!
//! The faded image's a/b channels are multiplied by a small seed factor,
//! the result is encoded, and the sampler starts from that latent, skipping
//! the first few iterations. Sweeping seeds and starting iterations gives a
//! grid of options for a person to choose from.

use serde::{Deserialize, Serialize};

use crate::colorspace::{hsv_to_rgb, mean_saturation, rgb_to_hsv, to_grayscale, to_lab, RgbImage};
use crate::denoiser::ColorRestorer;
use crate::error::{Error, Result};
use crate::latent_codec::CodecBackend;
use crate::sampler::{finish, pad_gray, pad_rgb, size_multiple, SamplerConfig};

pub const DEFAULT_SEEDS: [f64; 4] = [0.0, 0.001, 0.003, 0.005];
pub const DEFAULT_STARTS: [usize; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    /// Multipliers on the a/b channels of the faded input; grid rows.
    pub chroma_seeds: Vec<f64>,
    /// Sampler iterations to skip; grid columns.
    pub start_steps: Vec<usize>,
    pub sampler: SamplerConfig,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            chroma_seeds: DEFAULT_SEEDS.to_vec(),
            start_steps: DEFAULT_STARTS.to_vec(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.chroma_seeds.is_empty() || self.start_steps.is_empty() {
            return Err(Error::InvalidInput("enhancement grid needs seeds and starts".into()));
        }
        if let Some(s) = self.chroma_seeds.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "chroma seed {s} must be finite and non-negative"
            )));
        }
        if let Some(k) = self.start_steps.iter().find(|&&k| k > self.sampler.steps) {
            return Err(Error::InvalidInput(format!(
                "start step {k} beyond {} sampler steps",
                self.sampler.steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EnhanceCell {
    pub seed: f64,
    pub start: usize,
    pub row: usize,
    pub col: usize,
    /// The rendered cell, or the error that stopped it.
    pub outcome: std::result::Result<RgbImage, String>,
}

#[derive(Debug, Clone)]
pub struct EnhanceGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major: seeds down, starts across.
    pub cells: Vec<EnhanceCell>,
}

/// The faded image with its a/b channels multiplied by `seed`. A zero seed
/// gives exactly the replicated grayscale image.
pub fn chroma_seeded(faded: &RgbImage, seed: f64) -> RgbImage {
    if seed == 0.0 {
        return to_grayscale(faded).to_rgb();
    }
    let mut lab = to_lab(faded);
    lab.scale_ab(seed);
    lab.to_rgb()
}

fn enhance_cell(
    faded: &RgbImage,
    seed: f64,
    start: usize,
    cfg: &SamplerConfig,
    model: &dyn ColorRestorer,
    codec: &CodecBackend,
) -> Result<RgbImage> {
    let gray = to_grayscale(faded);
    let multiple = size_multiple(model, codec);
    let z_gray = codec.encode_gray(&pad_gray(&gray, multiple)?)?;
    let z_init = codec.encode(&pad_rgb(&chroma_seeded(faded, seed), multiple)?)?;
    Ok(finish(model, codec, &gray, &z_init, z_gray, start, cfg, false)?.image)
}

/// Runs every `(seed, start)` cell. A failing cell is recorded and the rest
/// of the grid still runs.
pub fn enhance_grid(
    faded: &RgbImage,
    cfg: &EnhanceConfig,
    model: &dyn ColorRestorer,
    codec: &CodecBackend,
) -> Result<EnhanceGrid> {
    cfg.validate()?;
    faded.ensure_pipeline_size()?;
    let mut cells = Vec::with_capacity(cfg.chroma_seeds.len() * cfg.start_steps.len());
    for (row, &seed) in cfg.chroma_seeds.iter().enumerate() {
        for (col, &start) in cfg.start_steps.iter().enumerate() {
            let outcome = enhance_cell(faded, seed, start, &cfg.sampler, model, codec).map_err(|e| {
                log::warn!("enhancement cell seed={seed} start={start} failed: {e}");
                e.to_string()
            });
            cells.push(EnhanceCell {
                seed,
                start,
                row,
                col,
                outcome,
            });
        }
    }
    Ok(EnhanceGrid {
        rows: cfg.chroma_seeds.len(),
        cols: cfg.start_steps.len(),
        cells,
    })
}

/// Tiles the grid into one image with a `gap`-pixel white border between
/// cells. Failed cells are drawn black.
pub fn contact_sheet(grid: &EnhanceGrid, gap: usize) -> Result<RgbImage> {
    let (cw, ch) = grid
        .cells
        .iter()
        .find_map(|c| c.outcome.as_ref().ok().map(RgbImage::dims))
        .ok_or_else(|| Error::InvalidInput("every grid cell failed".into()))?;
    let width = grid.cols * cw + (grid.cols + 1) * gap;
    let height = grid.rows * ch + (grid.rows + 1) * gap;
    let mut data = vec![1.0_f32; width * height * 3];
    for cell in &grid.cells {
        let x0 = gap + cell.col * (cw + gap);
        let y0 = gap + cell.row * (ch + gap);
        for y in 0..ch {
            for x in 0..cw {
                let px = match &cell.outcome {
                    Ok(img) => img.pixel(x, y),
                    Err(_) => [0.0; 3],
                };
                let i = ((y0 + y) * width + x0 + x) * 3;
                data[i..i + 3].copy_from_slice(&px);
            }
        }
    }
    RgbImage::new(width, height, data)
}

#[derive(Debug, Clone)]
pub struct SaturationAdjusted {
    pub image: RgbImage,
    /// Multiplier applied to every pixel's HSV saturation before clipping.
    pub factor: f64,
    /// Set when the target mean saturation could not be reached.
    pub unreachable: bool,
}

/// Uniformly scales HSV saturation (clipped at 1) so the mean saturation
/// matches `target`. Hue and value are unchanged.
pub fn saturation_baseline(faded: &RgbImage, target_mean_s: f64) -> Result<SaturationAdjusted> {
    if !(0.0..=1.0).contains(&target_mean_s) {
        return Err(Error::InvalidInput(format!(
            "target saturation {target_mean_s} outside [0, 1]"
        )));
    }
    let hsv: Vec<[f64; 3]> = faded
        .pixels()
        .map(|p| rgb_to_hsv([f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]))
        .collect();
    let n = hsv.len() as f64;
    let mean_at = |k: f64| hsv.iter().map(|p| (p[1] * k).min(1.0)).sum::<f64>() / n;
    let min_positive = hsv
        .iter()
        .map(|p| p[1])
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_positive.is_finite() {
        return Ok(SaturationAdjusted {
            image: faded.clone(),
            factor: 1.0,
            unreachable: target_mean_s > 0.0,
        });
    }
    let k_max = 1.0 / min_positive;
    let (factor, unreachable) = if mean_at(k_max) < target_mean_s {
        (k_max, true)
    } else {
        let (mut lo, mut hi) = (0.0, k_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_at(mid) < target_mean_s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), false)
    };
    let (w, h) = faded.dims();
    let data = hsv
        .iter()
        .flat_map(|p| hsv_to_rgb([p[0], (p[1] * factor).min(1.0), p[2]]).map(|v| v as f32))
        .collect();
    let image = RgbImage::from_clamped(w, h, data)?;
    if unreachable {
        log::warn!(
            "target saturation {target_mean_s} unreachable; reached {:.4}",
            mean_saturation(&image)
        );
    }
    Ok(SaturationAdjusted {
        image,
        factor,
        unreachable,
    })
}

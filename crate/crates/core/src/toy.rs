//! Synthetic captioned scenes for desk-scale training and evaluation.
//!
//! Each scene is a colored circle or square on a vertically graded
//! background. Named colors have distinct lightness, so color is largely
//! recoverable from the gray image and the shape, which is what makes the
//! corpus learnable by a small model.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::cold_diffusion::{Timestep, TrainSample};
use crate::colorspace::{colorfulness, scale_chroma, to_lab, RgbImage};
use crate::denoiser::{ColorRestorer, TextEmbedding};
use crate::error::{shape_mismatch, Result};
use crate::latent_codec::{color_latent, ColorResidual, LatentGrid};
use crate::ranker::{PairLabel, Preferred};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Circle,
    Square,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
        }
    }
}

/// Object colors. Circles use the first half, squares the second.
pub const OBJECT_COLORS: [(&str, [f32; 3]); 8] = [
    ("red", [0.85, 0.10, 0.10]),
    ("yellow", [0.95, 0.85, 0.15]),
    ("purple", [0.50, 0.15, 0.70]),
    ("orange", [0.95, 0.50, 0.10]),
    ("blue", [0.10, 0.25, 0.90]),
    ("green", [0.20, 0.70, 0.15]),
    ("cyan", [0.10, 0.80, 0.85]),
    ("pink", [0.95, 0.45, 0.70]),
];

/// Background tones as (top, bottom) gradient endpoints.
pub const BACKGROUNDS: [(&str, [f32; 3], [f32; 3]); 3] = [
    ("sky", [0.45, 0.70, 0.95], [0.70, 0.85, 1.00]),
    ("grass", [0.20, 0.45, 0.15], [0.35, 0.60, 0.25]),
    ("sand", [0.90, 0.80, 0.55], [0.80, 0.65, 0.40]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: String,
    pub background: String,
    /// Chroma multiplier; values near zero give washed-out scenes.
    pub chroma: f64,
}

impl SceneSpec {
    pub fn caption(&self) -> String {
        format!(
            "a {} {} on a {} background",
            self.color,
            self.shape.name(),
            self.background
        )
    }

    /// How an automatic captioner might describe the gray version.
    pub fn gray_caption(&self) -> String {
        format!(
            "a black and white photo of a {} on a grayscale background",
            self.shape.name()
        )
    }
}

#[derive(Debug, Clone)]
pub struct ToyConfig {
    pub size: usize,
    /// Fraction of scenes rendered with almost no color.
    pub washed_out_fraction: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: 16,
            washed_out_fraction: 0.03,
            seed: 0,
        }
    }
}

fn jitter(rng: &mut StdRng, c: [f32; 3], amount: f32) -> [f32; 3] {
    c.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

fn render(rng: &mut StdRng, size: usize, washed_out: bool) -> Result<(RgbImage, SceneSpec)> {
    let shape = if rng.random_bool(0.5) {
        Shape::Circle
    } else {
        Shape::Square
    };
    let offset = match shape {
        Shape::Circle => 0,
        Shape::Square => 4,
    };
    let (color_name, color) = OBJECT_COLORS[offset + rng.random_range(0..4)];
    let (bg_name, top, bottom) = BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())];
    let color = jitter(rng, color, 0.04);
    let (top, bottom) = (jitter(rng, top, 0.03), jitter(rng, bottom, 0.03));
    let s = size as f32;
    let radius = rng.random_range(0.2 * s..=0.35 * s);
    let cx = rng.random_range(radius..=s - radius);
    let cy = rng.random_range(radius..=s - radius);
    let img = RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let inside = match shape {
            Shape::Circle => (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius,
            Shape::Square => (px - cx).abs() <= radius * 0.85 && (py - cy).abs() <= radius * 0.85,
        };
        if inside {
            color
        } else {
            let w = py / s;
            [0, 1, 2].map(|c| top[c] * (1.0 - w) + bottom[c] * w)
        }
    })?;
    let chroma = if washed_out { rng.random_range(0.0..0.1) } else { 1.0 };
    let img = if washed_out { scale_chroma(&img, chroma)? } else { img };
    Ok((
        img,
        SceneSpec {
            shape,
            color: color_name.into(),
            background: bg_name.into(),
            chroma,
        },
    ))
}

/// `count` scenes with captions. Deterministic in `cfg.seed`.
pub fn toy_scenes(count: usize, cfg: &ToyConfig) -> Result<Vec<(TrainSample, SceneSpec)>> {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    (0..count)
        .map(|_| {
            let washed = rng.random_bool(cfg.washed_out_fraction);
            let (img, spec) = render(&mut rng, cfg.size, washed)?;
            Ok((TrainSample::new(img, spec.caption()), spec))
        })
        .collect()
}

pub fn toy_corpus(count: usize, cfg: &ToyConfig) -> Result<Vec<TrainSample>> {
    Ok(toy_scenes(count, cfg)?.into_iter().map(|(s, _)| s).collect())
}

/// Vivid scenes only, for evaluation.
pub fn toy_images(count: usize, size: usize, seed: u64) -> Result<Vec<RgbImage>> {
    let cfg = ToyConfig {
        size,
        washed_out_fraction: 0.0,
        seed,
    };
    Ok(toy_corpus(count, &cfg)?.into_iter().map(|s| s.image).collect())
}

/// Pairs of the same scene at two random a/b scales in `[0, 1.5]`, labeled
/// by a known rule: the rendition whose colorfulness is closer to
/// `target_colorfulness` wins.
pub fn toy_preference_pairs(count: usize, size: usize, target_colorfulness: f64, seed: u64) -> Result<Vec<PairLabel>> {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5e_ed0f_9a15);
    let scenes = toy_images(count, size, seed)?;
    Ok(scenes
        .iter()
        .map(|img| {
            let render = |s: f64| {
                let mut lab = to_lab(img);
                lab.scale_ab(s);
                lab.to_rgb()
            };
            let a = render(rng.random_range(0.0..1.5));
            let b = render(rng.random_range(0.0..1.5));
            let gap = |x: &RgbImage| (colorfulness(x) - target_colorfulness).abs();
            let preferred = if gap(&a) <= gap(&b) { Preferred::A } else { Preferred::B };
            PairLabel { a, b, preferred }
        })
        .collect())
}

/// A restorer that already knows the clean latent and always predicts the
/// exact residual toward it, whatever the text or level. Useful for checking
/// samplers, since any error left over is the sampler's.
#[derive(Debug, Clone)]
pub struct OracleRestorer {
    pub target: LatentGrid,
}

impl ColorRestorer for OracleRestorer {
    fn embed_text(&self, prompt: &str) -> Result<TextEmbedding> {
        TextEmbedding::new(prompt, 1, vec![0.0])
    }

    fn predict_residual(&self, z_t: &LatentGrid, _t: Timestep, _c: &TextEmbedding) -> Result<ColorResidual> {
        if z_t.shape() != self.target.shape() {
            return Err(shape_mismatch(self.target.shape(), z_t.shape()));
        }
        color_latent(&self.target, z_t)
    }
}

//! Image and text embedders used by the metrics and the ranker.
//!
//! [`ColorStatsFeaturizer`] is a fixed, dependency-free descriptor of an
//! image's color distribution. [`JointEmbedder`] is a small contrastive
//! text-image model trained on captioned images; its image tower sits on top
//! of the color statistics.

use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{AdamW, Embedding, Linear, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{colorfulness, rgb_to_hsv, to_lab, RgbImage};
use crate::error::{Error, Result};
use crate::nn;

pub trait ImageEmbedder: Send + Sync {
    /// Stable identifier recorded alongside models trained on the features.
    fn id(&self) -> String;
    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Raw pixel values, channel-last. Only useful for tiny images and tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeaturizer;

impl ImageEmbedder for IdentityFeaturizer {
    fn id(&self) -> String {
        "identity".into()
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        Ok(img.data().iter().map(|&v| f64::from(v)).collect())
    }
}

const CHROMA_BINS: usize = 16;
const CHROMA_MAX: f64 = 128.0;
const SAT_BINS: usize = 8;

/// Color-distribution descriptor: Lab moments, colorfulness, chroma and
/// saturation histograms, and mean a/b over a 2×2 spatial grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorStatsFeaturizer;

impl ColorStatsFeaturizer {
    pub const DIM: usize = 10 + CHROMA_BINS + SAT_BINS + 8;
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl ImageEmbedder for ColorStatsFeaturizer {
    fn id(&self) -> String {
        "color-stats-v1".into()
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let lab = to_lab(img);
        let chroma: Vec<f64> = lab.a.iter().zip(&lab.b).map(|(a, b)| a.hypot(*b)).collect();
        let (ml, sl) = mean_std(&lab.l);
        let (ma, sa) = mean_std(&lab.a);
        let (mb, sb) = mean_std(&lab.b);
        let (mc, sc) = mean_std(&chroma);
        let clr = colorfulness(img) / 100.0;
        let mut f = vec![
            ml / 100.0,
            sl / 100.0,
            ma / 100.0,
            sa / 100.0,
            mb / 100.0,
            sb / 100.0,
            mc / 100.0,
            sc / 100.0,
            clr,
            clr * clr,
        ];
        let n = chroma.len() as f64;
        let mut hist = [0.0; CHROMA_BINS];
        for c in &chroma {
            let bin = ((c / CHROMA_MAX) * CHROMA_BINS as f64) as usize;
            hist[bin.min(CHROMA_BINS - 1)] += 1.0 / n;
        }
        f.extend(hist);
        let mut sat = [0.0; SAT_BINS];
        for p in img.pixels() {
            let s = rgb_to_hsv([f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])[1];
            let bin = (s * SAT_BINS as f64) as usize;
            sat[bin.min(SAT_BINS - 1)] += 1.0 / n;
        }
        f.extend(sat);
        let (w, h) = img.dims();
        let mut grid = [0.0; 8];
        let mut counts = [0.0; 4];
        for y in 0..h {
            for x in 0..w {
                let cell = usize::from(y * 2 >= h) * 2 + usize::from(x * 2 >= w);
                let i = y * w + x;
                grid[cell * 2] += lab.a[i] / 100.0;
                grid[cell * 2 + 1] += lab.b[i] / 100.0;
                counts[cell] += 1.0;
            }
        }
        for (cell, &c) in counts.iter().enumerate() {
            if c > 0.0 {
                grid[cell * 2] /= c;
                grid[cell * 2 + 1] /= c;
            }
        }
        f.extend(grid);
        debug_assert_eq!(f.len(), Self::DIM);
        Ok(f)
    }
}

/// Lowercased word tokens; punctuation other than `-` and `&` splits words.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '&'))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// FNV-1a hash of a word into `1..vocab`; bucket 0 is reserved.
pub fn word_bucket(word: &str, vocab: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    1 + (h % (vocab as u64 - 1)) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEmbedderConfig {
    pub dim: usize,
    pub vocab_size: usize,
}

impl Default for JointEmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            vocab_size: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            learning_rate: 1e-2,
            temperature: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointSidecar {
    kind: String,
    config: JointEmbedderConfig,
}

/// Contrastive image/text embedder. Both towers map into a shared
/// `dim`-dimensional space and outputs are unit-normalized.
pub struct JointEmbedder {
    config: JointEmbedderConfig,
    varmap: VarMap,
    image_proj: Linear,
    words: Embedding,
    text_proj: Linear,
}

impl std::fmt::Debug for JointEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JointEmbedder").field("config", &self.config).finish()
    }
}

impl JointEmbedder {
    pub fn new(config: JointEmbedderConfig, seed: u64) -> Result<Self> {
        if config.vocab_size < 2 || config.dim == 0 {
            return Err(Error::InvalidInput("embedder needs vocab ≥ 2 and dim ≥ 1".into()));
        }
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let image_proj = candle_nn::linear(ColorStatsFeaturizer::DIM, config.dim, vb.pp("image_proj"))?;
        let words = candle_nn::embedding(config.vocab_size, config.dim, vb.pp("words"))?;
        let text_proj = candle_nn::linear(config.dim, config.dim, vb.pp("text_proj"))?;
        nn::reinit_seeded(&varmap, seed)?;
        Ok(Self {
            config,
            varmap,
            image_proj,
            words,
            text_proj,
        })
    }

    pub fn config(&self) -> &JointEmbedderConfig {
        &self.config
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let meta = JointSidecar {
            kind: "joint-embedder".into(),
            config: self.config.clone(),
        };
        nn::save_checkpoint(&self.varmap, stem, &meta)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: JointSidecar = nn::read_sidecar(stem)?;
        if meta.kind != "joint-embedder" {
            return Err(Error::Checkpoint(format!(
                "expected a joint embedder, found {}",
                meta.kind
            )));
        }
        let mut e = Self::new(meta.config, 0)?;
        nn::load_weights(&mut e.varmap, stem)?;
        Ok(e)
    }

    fn image_tensor(&self, images: &[&RgbImage]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(images.len() * ColorStatsFeaturizer::DIM);
        for img in images {
            rows.extend(ColorStatsFeaturizer.embed_image(img)?.into_iter().map(|v| v as f32));
        }
        let x = Tensor::from_vec(rows, (images.len(), ColorStatsFeaturizer::DIM), &Device::Cpu)?;
        Ok(self.image_proj.forward(&x)?)
    }

    /// Mean of word vectors followed by a projection; empty text uses the
    /// reserved bucket.
    fn text_tensor(&self, captions: &[&str]) -> Result<Tensor> {
        let mut pooled = Vec::with_capacity(captions.len());
        for c in captions {
            let mut ids: Vec<u32> = words(c)
                .iter()
                .map(|w| word_bucket(w, self.config.vocab_size) as u32)
                .collect();
            if ids.is_empty() {
                ids.push(0);
            }
            let t = Tensor::new(ids.as_slice(), &Device::Cpu)?;
            pooled.push(self.words.forward(&t)?.mean(0)?);
        }
        let x = Tensor::stack(&pooled, 0)?;
        Ok(self.text_proj.forward(&x)?)
    }

    fn unit_rows(x: &Tensor) -> candle_core::Result<Tensor> {
        let n = x.sqr()?.sum_keepdim(1)?.sqrt()?;
        x.broadcast_div(&(n + 1e-8)?)
    }

    fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
        let t = Self::unit_rows(t)?.squeeze(0)?;
        Ok(t.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
    }

    pub fn embed_caption(&self, caption: &str) -> Result<Vec<f64>> {
        Self::to_vec(&self.text_tensor(&[caption])?)
    }

    /// Symmetric InfoNCE over in-batch pairs; returns per-step losses.
    pub fn train(&mut self, images: &[RgbImage], captions: &[String], cfg: &JointTrainConfig) -> Result<Vec<f32>> {
        if images.len() != captions.len() {
            return Err(crate::error::shape_mismatch(images.len(), captions.len()));
        }
        if images.len() < 2 {
            return Err(Error::InvalidInput(
                "contrastive training needs at least two pairs".into(),
            ));
        }
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
        let bs = cfg.batch_size.min(images.len()).max(2);
        let mut losses = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            order.shuffle(&mut rng);
            let idx = &order[..bs];
            let imgs: Vec<&RgbImage> = idx.iter().map(|&i| &images[i]).collect();
            let caps: Vec<&str> = idx.iter().map(|&i| captions[i].as_str()).collect();
            let zi = Self::unit_rows(&self.image_tensor(&imgs)?)?;
            let zt = Self::unit_rows(&self.text_tensor(&caps)?)?;
            let logits = (zi.matmul(&zt.t()?.contiguous()?)? / cfg.temperature)?;
            let targets = Tensor::arange(0u32, bs as u32, &Device::Cpu)?;
            let l1 = candle_nn::loss::cross_entropy(&logits, &targets)?;
            let l2 = candle_nn::loss::cross_entropy(&logits.t()?.contiguous()?, &targets)?;
            let loss = ((l1 + l2)? * 0.5)?;
            let value = loss.to_scalar::<f32>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: "contrastive embedder loss".into(),
                });
            }
            opt.backward_step(&loss)?;
            losses.push(value);
        }
        Ok(losses)
    }
}

impl ImageEmbedder for JointEmbedder {
    fn id(&self) -> String {
        format!("joint-embedder-d{}", self.config.dim)
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        Self::to_vec(&self.image_tensor(&[img])?)
    }
}

//! Linear scorer over image embeddings that picks a color scale.
//!
//! Trained on pairwise preferences with a logistic loss on score
//! differences, then used pointwise: each rendition on the scale grid is
//! scored independently and the best one wins.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::colorspace::RgbImage;
use crate::embed::{l2_normalize, ImageEmbedder};
use crate::error::{shape_mismatch, Error, Result};
use crate::latent_codec::{CodecBackend, ColorResidual, LatentGrid};
use crate::sampler::scale_color;

pub const DEFAULT_GRID: [f64; 8] = [0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preferred {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLabel {
    pub a: RgbImage,
    pub b: RgbImage,
    pub preferred: Preferred,
}

impl PairLabel {
    pub fn flipped(&self) -> Self {
        Self {
            preferred: match self.preferred {
                Preferred::A => Preferred::B,
                Preferred::B => Preferred::A,
            },
            ..self.clone()
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelLine {
    a: String,
    b: String,
    preferred: Preferred,
}

/// Reads JSON lines `{a, b, preferred}` with image paths relative to the
/// label file.
pub fn load_pairs(path: &Path) -> Result<Vec<PairLabel>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: LabelLine = serde_json::from_str(line)
            .map_err(|e| Error::InvalidInput(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(PairLabel {
            a: RgbImage::load(base.join(&l.a))?,
            b: RgbImage::load(base.join(&l.b))?,
            preferred: l.preferred,
        });
    }
    Ok(out)
}

/// Writes pairs as PNGs plus a label file in `dir`.
pub fn write_pairs(dir: &Path, pairs: &[PairLabel]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (i, p) in pairs.iter().enumerate() {
        let (a, b) = (format!("{i:05}-a.png"), format!("{i:05}-b.png"));
        p.a.save_png(dir.join(&a))?;
        p.b.save_png(dir.join(&b))?;
        index.push_str(&serde_json::to_string(&LabelLine {
            a,
            b,
            preferred: p.preferred,
        })?);
        index.push('\n');
    }
    std::fs::write(dir.join("labels.jsonl"), index)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub embedder_id: String,
    pub grid: Vec<f64>,
}

impl RankerModel {
    pub fn new(weights: Vec<f64>, bias: f64, embedder_id: impl Into<String>, grid: Vec<f64>) -> Result<Self> {
        let m = Self {
            weights,
            bias,
            embedder_id: embedder_id.into(),
            grid,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::InvalidInput("ranker weights must be finite".into()));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(format!(
                "scale grid {:?} must be non-empty and strictly increasing",
                self.grid
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    fn check_embedder(&self, embedder: &dyn ImageEmbedder) -> Result<()> {
        if embedder.id() != self.embedder_id {
            return Err(Error::InvalidInput(format!(
                "ranker was trained on {} features, got {}",
                self.embedder_id,
                embedder.id()
            )));
        }
        Ok(())
    }

    /// `w · f` without the bias; the bias cannot change any comparison.
    fn feature_term(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(shape_mismatch(self.weights.len(), features.len()));
        }
        Ok(self.weights.iter().zip(features).map(|(w, f)| w * f).sum())
    }
}

/// L2-normalized embedding used as the scorer's input.
pub fn ranker_features(img: &RgbImage, embedder: &dyn ImageEmbedder) -> Result<Vec<f64>> {
    let mut f = embedder.embed_image(img)?;
    l2_normalize(&mut f);
    Ok(f)
}

/// `w · normalize(embed(img)) + b`.
pub fn score(img: &RgbImage, model: &RankerModel, embedder: &dyn ImageEmbedder) -> Result<f64> {
    model.check_embedder(embedder)?;
    Ok(model.feature_term(&ranker_features(img, embedder)?)? + model.bias)
}

#[derive(Debug, Clone)]
pub struct RankerTrainConfig {
    /// Ridge penalty; keeps the optimum finite on separable data.
    pub l2: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub grid: Vec<f64>,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iterations: 100,
            tolerance: 1e-10,
            grid: DEFAULT_GRID.to_vec(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Minimizes the mean of `log(1 + exp(−(s_pref − s_other)))` plus a ridge
/// term with Newton iterations. The bias is left at zero since pairwise
/// differences do not determine it.
pub fn train_ranker(pairs: &[PairLabel], embedder: &dyn ImageEmbedder, cfg: &RankerTrainConfig) -> Result<RankerModel> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("ranker training needs at least one pair".into()));
    }
    if !(cfg.l2 > 0.0) {
        return Err(Error::InvalidInput("ridge penalty must be positive".into()));
    }
    let mut diffs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let fa = ranker_features(&p.a, embedder)?;
        let fb = ranker_features(&p.b, embedder)?;
        if fa.len() != fb.len() {
            return Err(shape_mismatch(fa.len(), fb.len()));
        }
        let (pref, other) = match p.preferred {
            Preferred::A => (fa, fb),
            Preferred::B => (fb, fa),
        };
        diffs.push(DVector::from_iterator(
            pref.len(),
            pref.iter().zip(&other).map(|(x, y)| x - y),
        ));
    }
    let d = diffs[0].len();
    if diffs.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidInput("embedder returned varying feature sizes".into()));
    }
    let spread = diffs.iter().map(|v| v.amax()).fold(0.0, f64::max);
    if spread < 1e-12 {
        return Err(Error::Degenerate(format!(
            "all {} pairs have identical embeddings; nothing to learn",
            pairs.len()
        )));
    }
    let n = diffs.len() as f64;
    let mut w = DVector::zeros(d);
    for iter in 0..cfg.max_iterations {
        let mut grad = &w * cfg.l2;
        let mut hess = DMatrix::identity(d, d) * cfg.l2;
        for v in &diffs {
            let p = sigmoid(w.dot(v));
            grad -= v * ((1.0 - p) / n);
            hess += (v * v.transpose()) * (p * (1.0 - p) / n);
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Degenerate("ranker Hessian is not positive definite".into()))?
            .solve(&grad);
        w -= &step;
        if step.amax() < cfg.tolerance {
            log::debug!("ranker converged after {} Newton steps", iter + 1);
            break;
        }
    }
    RankerModel::new(w.iter().copied().collect(), 0.0, embedder.id(), cfg.grid.clone())
}

/// Fraction of pairs whose preferred image scores higher; ties count half.
pub fn pairwise_accuracy(model: &RankerModel, pairs: &[PairLabel], embedder: &dyn ImageEmbedder) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to evaluate".into()));
    }
    let mut correct = 0.0;
    for p in pairs {
        let (sa, sb) = (score(&p.a, model, embedder)?, score(&p.b, model, embedder)?);
        let margin = match p.preferred {
            Preferred::A => sa - sb,
            Preferred::B => sb - sa,
        };
        correct += if margin > 0.0 {
            1.0
        } else if margin == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    Ok(correct / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleChoice {
    pub best_scale: f64,
    /// `(scale, score)` for every grid entry, in grid order.
    pub scored: Vec<(f64, f64)>,
}

/// Scores `render(s)` for each grid scale and returns the best. Ties go to
/// the smaller scale.
pub fn rank_scales_with(
    grid: &[f64],
    mut render: impl FnMut(f64) -> Result<RgbImage>,
    mut scorer: impl FnMut(&RgbImage) -> Result<f64>,
) -> Result<ScaleChoice> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty scale grid".into()));
    }
    let mut scored = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &s in grid {
        let v = scorer(&render(s)?)?;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite score at scale {s}")));
        }
        scored.push((s, v));
        if best.is_none_or(|(bs, b)| v > b || (v == b && s < bs)) {
            best = Some((s, v));
        }
    }
    Ok(ScaleChoice {
        best_scale: best.expect("non-empty grid").0,
        scored,
    })
}

/// Decodes `z_gray + s·delta` for each grid scale and picks the rendition
/// the model prefers. Comparisons use the bias-free part of the score, so
/// the choice does not depend on the bias at all.
pub fn rank_scales(
    z_gray: &LatentGrid,
    delta: &ColorResidual,
    model: &RankerModel,
    embedder: &dyn ImageEmbedder,
    codec: &CodecBackend,
) -> Result<ScaleChoice> {
    model.check_embedder(embedder)?;
    let choice = rank_scales_with(
        &model.grid,
        |s| codec.decode(&scale_color(z_gray, delta, s)?),
        |img| model.feature_term(&ranker_features(img, embedder)?),
    )?;
    Ok(ScaleChoice {
        scored: choice.scored.into_iter().map(|(s, v)| (s, v + model.bias)).collect(),
        ..choice
    })
}

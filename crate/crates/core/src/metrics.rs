//! Evaluation metrics: Fréchet distance between Gaussian feature fits,
//! colorfulness deltas, embedding similarity, PSNR/SSIM, and Elo ratings.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{colorfulness, RgbImage};
use crate::embed::{cosine, ImageEmbedder, JointEmbedder};
use crate::error::{shape_mismatch, Error, Result};

/// Mean and covariance of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

const PSD_TOL: f64 = 1e-9;

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(shape_mismatch((d, d), (cov.nrows(), cov.ncols())));
        }
        if count < 2 {
            return Err(Error::InvalidInput("gaussian stats need at least two samples".into()));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > PSD_TOL * scale {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -PSD_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive semi-definite (min eigenvalue {min_eig})"
            )));
        }
        Ok(Self { mean, cov, count })
    }

    /// Sample mean and unbiased covariance of row vectors.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        let d = samples[0].len();
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(shape_mismatch(d, bad.len()));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let c = DVector::from_column_slice(s) - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        Self::new(mean, cov, samples.len())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Trace of `(Σa Σb)^{1/2}`, computed as `tr((√Σa Σb √Σa)^{1/2})`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let attempt = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let sa = sym_sqrt(a);
        let m = &sa * b * &sa;
        let m = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(m).eigenvalues
    };
    let scale = a.amax().max(b.amax()).max(1.0);
    let mut eig = attempt(a, b);
    if eig.min() < -PSD_TOL * scale {
        let d = a.nrows();
        let jitter = DMatrix::identity(d, d) * 1e-10;
        eig = attempt(&(a + &jitter), &(b + &jitter));
        if eig.min() < -PSD_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "covariance product not PSD after regularization (min eigenvalue {})",
                eig.min()
            )));
        }
    }
    Ok(eig.iter().map(|v| v.max(0.0).sqrt()).sum())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^{1/2})`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape_mismatch(a.dim(), b.dim()));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let covmean = trace_sqrt_product(&a.cov, &b.cov)?;
    let value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * covmean;
    Ok(value.max(0.0))
}

pub fn feature_stats(images: &[RgbImage], featurizer: &dyn ImageEmbedder) -> Result<GaussianStats> {
    if images.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "feature stats need at least 2 images, got {}",
            images.len()
        )));
    }
    let feats: Vec<Vec<f64>> = images
        .iter()
        .map(|i| featurizer.embed_image(i))
        .collect::<Result<_>>()?;
    GaussianStats::from_samples(&feats)
}

pub fn mean_colorfulness(images: &[RgbImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidInput("empty image set".into()));
    }
    Ok(images.iter().map(colorfulness).sum::<f64>() / images.len() as f64)
}

/// Absolute difference of mean colorfulness between two image sets.
pub fn delta_colorfulness(set_a: &[RgbImage], set_b: &[RgbImage]) -> Result<f64> {
    Ok((mean_colorfulness(set_a)? - mean_colorfulness(set_b)?).abs())
}

/// Cosine similarity between an image and a caption in the joint space.
pub fn embedding_similarity(img: &RgbImage, caption: &str, embedder: &JointEmbedder) -> Result<f64> {
    let i = embedder.embed_image(img)?;
    let t = embedder.embed_caption(caption)?;
    Ok(cosine(&i, &t))
}

fn check_same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_mismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio at unit range. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Gaussian window size used for images of the given dimensions: 11, or the
/// largest odd size that fits.
pub fn ssim_window(width: usize, height: usize) -> usize {
    let m = width.min(height).min(11);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a single plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity with a Gaussian window (σ = 1.5), computed per
/// channel over valid window positions and averaged.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same_dims(a, b)?;
    let (w, h) = a.dims();
    let k = gaussian_kernel(ssim_window(w, h), SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).map(|&v| f64::from(v)).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (exx, _, _) = filter_valid(&xx, w, h, &k);
        let (eyy, _, _) = filter_valid(&yy, w, h, &k);
        let (exy, _, _) = filter_valid(&xy, w, h, &k);
        for i in 0..mx.len() {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

// ---------------------------------------------------------------------------
// Elo

pub const ELO_INITIAL: f64 = 1500.0;
pub const ELO_LR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub winner: String,
    pub loser: String,
}

impl MatchRecord {
    pub fn new(winner: impl Into<String>, loser: impl Into<String>) -> Result<Self> {
        let (winner, loser) = (winner.into(), loser.into());
        if winner == loser {
            return Err(Error::InvalidInput(format!("method {winner} cannot play itself")));
        }
        Ok(Self { winner, loser })
    }
}

/// How `game_result` is encoded in the update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResultEncoding {
    /// 1 for a win, 0 for a loss.
    #[default]
    Conventional,
    /// 0 for a win, 1 for a loss, as literally written in the user-study
    /// appendix. Inverts the sense of the ratings.
    Inverted,
}

impl ResultEncoding {
    fn win(self) -> f64 {
        match self {
            ResultEncoding::Conventional => 1.0,
            ResultEncoding::Inverted => 0.0,
        }
    }

    fn loss(self) -> f64 {
        1.0 - self.win()
    }
}

/// How updates within an epoch are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EloSchedule {
    /// Each epoch accumulates every match's update against the ratings at the
    /// start of the epoch and applies the sum. Converges to a fixed point.
    #[default]
    Epoch,
    /// Each match updates the ratings immediately. With a constant learning
    /// rate this keeps fluctuating on the order of `lr`.
    Sequential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EloConfig {
    pub lr: f64,
    pub initial: f64,
    /// Convergence threshold on the largest rating change over one epoch.
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub encoding: ResultEncoding,
    pub schedule: EloSchedule,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            lr: ELO_LR,
            initial: ELO_INITIAL,
            tolerance: 1e-6,
            max_epochs: 1_000_000,
            seed: 0,
            encoding: ResultEncoding::Conventional,
            schedule: EloSchedule::Epoch,
        }
    }
}

pub type EloTable = BTreeMap<String, f64>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EloOutcome {
    pub ratings: EloTable,
    pub epochs: usize,
    pub converged: bool,
}

/// Probability that a method rated `elo1` beats one rated `elo2`.
pub fn expected_outcome(elo1: f64, elo2: f64) -> f64 {
    // The weaker side is the complement of the stronger, so the two
    // orientations sum to exactly 1.
    if elo1 >= elo2 {
        1.0 / (1.0 + 10f64.powf((elo2 - elo1) / 400.0))
    } else {
        1.0 - expected_outcome(elo2, elo1)
    }
}

/// Rating changes `(winner, loser)` for one match at the given ratings.
pub fn elo_deltas(winner_elo: f64, loser_elo: f64, lr: f64, encoding: ResultEncoding) -> (f64, f64) {
    let eo_w = expected_outcome(winner_elo, loser_elo);
    let eo_l = expected_outcome(loser_elo, winner_elo);
    (lr * (encoding.win() - eo_w), lr * (encoding.loss() - eo_l))
}

/// Applies a single match update in place. Unknown methods start at
/// [`ELO_INITIAL`].
pub fn elo_update(table: &mut EloTable, m: &MatchRecord, lr: f64, encoding: ResultEncoding) {
    let w = *table.entry(m.winner.clone()).or_insert(ELO_INITIAL);
    let l = *table.entry(m.loser.clone()).or_insert(ELO_INITIAL);
    let (dw, dl) = elo_deltas(w, l, lr, encoding);
    *table.get_mut(&m.winner).expect("inserted above") += dw;
    *table.get_mut(&m.loser).expect("inserted above") += dl;
}

pub fn elo_ratings(matches: &[MatchRecord], cfg: &EloConfig) -> Result<EloOutcome> {
    if matches.is_empty() {
        return Err(Error::InvalidInput("no matches to rate".into()));
    }
    let mut ratings: EloTable = EloTable::new();
    for m in matches {
        ratings.entry(m.winner.clone()).or_insert(cfg.initial);
        ratings.entry(m.loser.clone()).or_insert(cfg.initial);
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut order: Vec<&MatchRecord> = matches.iter().collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let before = ratings.clone();
        match cfg.schedule {
            EloSchedule::Epoch => {
                let mut delta: BTreeMap<&str, f64> = BTreeMap::new();
                for m in &order {
                    let (dw, dl) = elo_deltas(before[&m.winner], before[&m.loser], cfg.lr, cfg.encoding);
                    *delta.entry(&m.winner).or_default() += dw;
                    *delta.entry(&m.loser).or_default() += dl;
                }
                for (k, d) in delta {
                    *ratings.get_mut(k).expect("rated method") += d;
                }
            }
            EloSchedule::Sequential => {
                for m in &order {
                    elo_update(&mut ratings, m, cfg.lr, cfg.encoding);
                }
            }
        }
        let change = ratings.iter().map(|(k, v)| (v - before[k]).abs()).fold(0.0, f64::max);
        if change < cfg.tolerance {
            return Ok(EloOutcome {
                ratings,
                epochs: epoch,
                converged: true,
            });
        }
    }
    Ok(EloOutcome {
        ratings,
        epochs: cfg.max_epochs,
        converged: false,
    })
}

//! Offline evaluation: a manifest names a reference set and one output set
//! per method; the report has one row per method.
//!
//! ```json
//! {
//!   "reference": ["gt/000.png", "gt/001.png"],
//!   "methods": { "ours": ["ours/000.png", "ours/001.png"] },
//!   "matches": "votes.csv"
//! }
//! ```
//!
//! Paths are relative to the manifest. `matches` is optional: a CSV with
//! `winner,loser` columns from a pairwise user study, rated with Elo.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use colorize_core::colorspace::RgbImage;
use colorize_core::embed::ImageEmbedder;
use colorize_core::metrics::{
    delta_colorfulness, elo_ratings, feature_stats, frechet_distance, mean_colorfulness, psnr, ssim, EloConfig,
    EloOutcome, MatchRecord,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    pub reference: Vec<PathBuf>,
    pub methods: BTreeMap<String, Vec<PathBuf>>,
    #[serde(default)]
    pub matches: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub count: usize,
    pub fid: f64,
    pub clr: f64,
    pub delta_clr: f64,
    /// Mean over image pairs; pairs of identical images are left out.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<MetricsRow>,
    pub elo: Option<EloOutcome>,
}

impl EvalManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let manifest: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }
}

fn load_set(base: &Path, paths: &[PathBuf]) -> Result<Vec<RgbImage>> {
    paths
        .iter()
        .map(|p| RgbImage::load(base.join(p)).map_err(ServiceError::from))
        .collect()
}

/// Mean of the finite values, or infinity when every pair was identical.
fn finite_mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

pub fn evaluate_sets(
    reference: &[RgbImage],
    methods: &BTreeMap<String, Vec<RgbImage>>,
    featurizer: &dyn ImageEmbedder,
) -> Result<Vec<MetricsRow>> {
    let ref_stats = feature_stats(reference, featurizer)?;
    let mut rows = Vec::with_capacity(methods.len());
    for (name, outputs) in methods {
        if outputs.len() != reference.len() {
            return Err(ServiceError::BadRequest(format!(
                "method {name} has {} images, reference has {}",
                outputs.len(),
                reference.len()
            )));
        }
        let stats = feature_stats(outputs, featurizer)?;
        let mut psnrs = Vec::with_capacity(outputs.len());
        let mut ssims = Vec::with_capacity(outputs.len());
        for (o, r) in outputs.iter().zip(reference) {
            psnrs.push(psnr(o, r)?);
            ssims.push(ssim(o, r)?);
        }
        rows.push(MetricsRow {
            method: name.clone(),
            count: outputs.len(),
            fid: frechet_distance(&stats, &ref_stats)?,
            clr: mean_colorfulness(outputs)?,
            delta_clr: delta_colorfulness(outputs, reference)?,
            psnr: finite_mean(&psnrs),
            ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
        });
    }
    Ok(rows)
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.deserialize::<MatchRecord>() {
        let rec = rec?;
        out.push(MatchRecord::new(rec.winner, rec.loser)?);
    }
    Ok(out)
}

pub fn evaluate(manifest_path: &Path, featurizer: &dyn ImageEmbedder) -> Result<EvalReport> {
    let (manifest, base) = EvalManifest::load(manifest_path)?;
    let reference = load_set(&base, &manifest.reference)?;
    let mut methods = BTreeMap::new();
    for (name, paths) in &manifest.methods {
        methods.insert(name.clone(), load_set(&base, paths)?);
    }
    let rows = evaluate_sets(&reference, &methods, featurizer)?;
    let elo = match &manifest.matches {
        Some(p) => Some(elo_ratings(&read_matches(&base.join(p))?, &EloConfig::default())?),
        None => None,
    };
    Ok(EvalReport { rows, elo })
}

/// Writes `metrics.csv` and, when ratings were computed, `elo.csv`.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let metrics = out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut written = vec![metrics];
    if let Some(elo) = &report.elo {
        let path = out_dir.join("elo.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["method", "elo"])?;
        for (method, rating) in &elo.ratings {
            w.write_record([method.as_str(), &format!("{rating:.3}")])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

//! Job requests and their execution. Execution is a pure function of the
//! request and the loaded models, which is what makes replay possible.

use std::sync::Arc;

use base64::Engine as _;
use colorize_core::colorspace::{GrayImage, RgbImage};
use colorize_core::enhance::{contact_sheet, enhance_grid, EnhanceConfig, DEFAULT_SEEDS, DEFAULT_STARTS};
use colorize_core::ranker::{rank_scales, score};
use colorize_core::sampler::{colorize, step_trace, trace_records, ColorizationResult, SamplerConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::jobs::{JobKind, JobStore};
use crate::models::Models;

/// Gap in pixels between cells of the enhancement contact sheet.
pub const SHEET_GAP: usize = 2;

pub const OUTPUT_ARTIFACT: &str = "out.png";
pub const TRACE_ARTIFACT: &str = "trace.json";
pub const GRID_ARTIFACT: &str = "grid.png";
pub const MANIFEST_ARTIFACT: &str = "manifest.json";
pub const SCORES_ARTIFACT: &str = "scores.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorizeRequest {
    /// Base64-encoded PNG or JPEG.
    pub image: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub negative: Option<String>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub guidance: Option<f64>,
    #[serde(default)]
    pub color_scale: Option<f64>,
    #[serde(default)]
    pub use_ranker: bool,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhanceRequest {
    /// Base64-encoded faded color photo.
    pub image: String,
    #[serde(default)]
    pub seeds: Option<Vec<f64>>,
    #[serde(default)]
    pub starts: Option<Vec<usize>>,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub negative: Option<String>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub guidance: Option<f64>,
    #[serde(default)]
    pub color_scale: Option<f64>,
}

/// Scores images with the preference model, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankRequest {
    /// Base64-encoded color images.
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JobRequest {
    Colorize(ColorizeRequest),
    Enhance(EnhanceRequest),
    Rank(RankRequest),
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Colorize(_) => JobKind::Colorize,
            JobRequest::Enhance(_) => JobKind::Enhance,
            JobRequest::Rank(_) => JobKind::Rank,
        }
    }
}

/// Everything a finished job produced.
#[derive(Debug)]
pub struct JobOutput {
    /// `(file name, bytes)` in write order.
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub result: serde_json::Value,
    /// Kept for cheap re-rendering at other color scales.
    pub colorization: Option<Arc<ColorizationResult>>,
}

fn decode_base64(field: &str, data: &str) -> Result<Vec<u8>> {
    // Accept data URLs as sent by browsers.
    let payload = data.split_once(";base64,").map_or(data, |(_, p)| p);
    base64::engine::general_purpose::STANDARD
        .decode(payload.trim())
        .map_err(|e| ServiceError::BadRequest(format!("{field}: not valid base64: {e}")))
}

fn decode_rgb(field: &str, data: &str) -> Result<RgbImage> {
    let bytes = decode_base64(field, data)?;
    let img = RgbImage::decode(&bytes).map_err(|e| ServiceError::BadRequest(format!("{field}: {e}")))?;
    img.ensure_pipeline_size()?;
    Ok(img)
}

fn decode_gray(field: &str, data: &str) -> Result<GrayImage> {
    let bytes = decode_base64(field, data)?;
    let img = GrayImage::decode(&bytes).map_err(|e| ServiceError::BadRequest(format!("{field}: {e}")))?;
    img.ensure_pipeline_size()?;
    Ok(img)
}

fn sampler_config(
    models: &Models,
    prompt: &str,
    negative: &Option<String>,
    steps: Option<usize>,
    guidance: Option<f64>,
    color_scale: Option<f64>,
) -> SamplerConfig {
    let mut cfg = models.defaults.sampler();
    cfg.positive = prompt.to_string();
    if let Some(n) = negative {
        cfg.negative = n.clone();
    }
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.guidance_scale = guidance.unwrap_or(cfg.guidance_scale);
    cfg.color_scale = color_scale.unwrap_or(cfg.color_scale);
    cfg
}

fn enhance_config(req: &EnhanceRequest, models: &Models) -> EnhanceConfig {
    EnhanceConfig {
        chroma_seeds: req.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec()),
        start_steps: req.starts.clone().unwrap_or_else(|| DEFAULT_STARTS.to_vec()),
        sampler: sampler_config(
            models,
            &req.prompt,
            &req.negative,
            req.steps,
            req.guidance,
            req.color_scale,
        ),
    }
}

/// Cheap checks run before a job is queued, so bad input is reported
/// synchronously.
pub fn validate(req: &JobRequest, models: &Models) -> Result<()> {
    match req {
        JobRequest::Colorize(r) => {
            decode_gray("image", &r.image)?;
            sampler_config(models, &r.prompt, &r.negative, r.steps, r.guidance, r.color_scale).validate()?;
            models.restorer()?;
            if r.use_ranker {
                models.ranker()?;
            }
        }
        JobRequest::Enhance(r) => {
            decode_rgb("image", &r.image)?;
            enhance_config(r, models).validate()?;
            models.restorer()?;
        }
        JobRequest::Rank(r) => {
            if r.images.is_empty() {
                return Err(ServiceError::BadRequest("no images to rank".into()));
            }
            for (i, img) in r.images.iter().enumerate() {
                decode_rgb(&format!("images[{i}]"), img)?;
            }
            models.ranker()?;
        }
    }
    Ok(())
}

pub fn execute(req: &JobRequest, models: &Models) -> Result<JobOutput> {
    match req {
        JobRequest::Colorize(r) => run_colorize(r, models),
        JobRequest::Enhance(r) => run_enhance(r, models),
        JobRequest::Rank(r) => run_rank(r, models),
    }
}

fn run_colorize(req: &ColorizeRequest, models: &Models) -> Result<JobOutput> {
    let gray = decode_gray("image", &req.image)?;
    let mut cfg = sampler_config(
        models,
        &req.prompt,
        &req.negative,
        req.steps,
        req.guidance,
        req.color_scale,
    );
    cfg.trace = req.trace;
    let model = models.restorer()?;
    let mut result = colorize(&gray, &cfg, model, &models.codec)?;
    let mut chosen_scale = None;
    let mut scored = None;
    if req.use_ranker {
        let choice = rank_scales(
            &result.z_gray,
            &result.residual,
            models.ranker()?,
            models.embedder.as_ref(),
            &models.codec,
        )?;
        result.image = result.rescale(&models.codec, choice.best_scale)?;
        result.color_scale = choice.best_scale;
        chosen_scale = Some(choice.best_scale);
        scored = Some(choice.scored);
    }
    let mut artifacts = vec![(OUTPUT_ARTIFACT.to_string(), result.image.to_png_bytes()?)];
    if req.trace {
        let frames = step_trace(&result, &models.codec)?;
        let records = trace_records(&result, &frames)?;
        artifacts.push((TRACE_ARTIFACT.into(), serde_json::to_vec_pretty(&records)?));
        for (i, f) in frames.iter().enumerate() {
            artifacts.push((format!("frame-{:03}.png", i + 1), f.to_png_bytes()?));
        }
    }
    let (w, h) = result.image.dims();
    let result_json = json!({
        "width": w,
        "height": h,
        "steps": cfg.steps,
        "guidance_scale": cfg.guidance_scale,
        "color_scale": result.color_scale,
        "chosen_scale": chosen_scale,
        "scored": scored,
    });
    Ok(JobOutput {
        artifacts,
        result: result_json,
        colorization: Some(Arc::new(result)),
    })
}

pub fn cell_artifact(row: usize, col: usize) -> String {
    format!("cell-r{row}-c{col}.png")
}

fn run_enhance(req: &EnhanceRequest, models: &Models) -> Result<JobOutput> {
    let faded = decode_rgb("image", &req.image)?;
    let cfg = enhance_config(req, models);
    let grid = enhance_grid(&faded, &cfg, models.restorer()?, &models.codec)?;
    let mut artifacts = Vec::new();
    let mut cells = Vec::new();
    for cell in &grid.cells {
        let mut entry = json!({"row": cell.row, "col": cell.col, "seed": cell.seed, "start": cell.start});
        match &cell.outcome {
            Ok(img) => {
                let name = cell_artifact(cell.row, cell.col);
                artifacts.push((name.clone(), img.to_png_bytes()?));
                entry["artifact"] = json!(name);
            }
            Err(e) => entry["error"] = json!(e),
        }
        cells.push(entry);
    }
    let mut manifest = json!({"rows": grid.rows, "cols": grid.cols, "cells": cells});
    if let Ok(sheet) = contact_sheet(&grid, SHEET_GAP) {
        artifacts.push((GRID_ARTIFACT.into(), sheet.to_png_bytes()?));
        manifest["grid"] = json!(GRID_ARTIFACT);
    }
    artifacts.push((MANIFEST_ARTIFACT.into(), serde_json::to_vec_pretty(&manifest)?));
    Ok(JobOutput {
        artifacts,
        result: manifest,
        colorization: None,
    })
}

fn run_rank(req: &RankRequest, models: &Models) -> Result<JobOutput> {
    let ranker = models.ranker()?;
    let mut scores = Vec::with_capacity(req.images.len());
    for (i, data) in req.images.iter().enumerate() {
        let img = decode_rgb(&format!("images[{i}]"), data)?;
        scores.push(score(&img, ranker, models.embedder.as_ref())?);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let result = json!({"scores": scores, "order": order, "best": order[0]});
    Ok(JobOutput {
        artifacts: vec![(SCORES_ARTIFACT.into(), serde_json::to_vec_pretty(&result)?)],
        result,
        colorization: None,
    })
}

/// File name for a re-rendering at color scale `s`.
pub fn rescale_artifact(s: f64) -> String {
    format!("rescale-{s:.3}.png")
}

/// Re-renders a finished colorization at a new color scale without running
/// the denoiser, rebuilding the cached residual from the stored request if
/// needed.
pub fn rescale(store: &JobStore, models: &Models, id: &str, s: f64) -> Result<Vec<u8>> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(ServiceError::BadRequest(format!(
            "color scale {s} must be finite and non-negative"
        )));
    }
    let result = match store.cached_result(id) {
        Some(r) => r,
        None => {
            let req = store.request(id)?;
            if !matches!(req, JobRequest::Colorize(_)) {
                return Err(ServiceError::BadRequest(format!("job {id} is not a colorization")));
            }
            let out = execute(&req, models)?;
            let r = out.colorization.expect("colorize jobs keep their result");
            store.cache_result(id, r.clone());
            r
        }
    };
    let png = result.rescale(&models.codec, s)?.to_png_bytes()?;
    store.add_artifact(id, &rescale_artifact(s), &png)?;
    Ok(png)
}

/// Re-executes a stored job and checks that every artifact it originally
/// wrote comes out byte-identical.
pub fn replay(store: &JobStore, models: &Models, id: &str) -> Result<Vec<String>> {
    let job = store.get(id).ok_or_else(|| ServiceError::NotFound(id.into()))?;
    if job.config_hash != models.config_hash {
        return Err(ServiceError::ReplayMismatch(format!(
            "job ran under config {}, current config is {}",
            job.config_hash, models.config_hash
        )));
    }
    let out = execute(&store.request(id)?, models)?;
    let mut checked = Vec::new();
    for (name, bytes) in &out.artifacts {
        let path = store
            .artifact_path(id, name)
            .ok_or_else(|| ServiceError::ReplayMismatch(format!("{name} was not produced originally")))?;
        if std::fs::read(&path)? != *bytes {
            return Err(ServiceError::ReplayMismatch(format!("{name} differs")));
        }
        checked.push(name.clone());
    }
    Ok(checked)
}

/// Runs a job end to end against the store: queued → running → done or
/// failed, writing artifacts as it goes.
pub fn run_job(store: &JobStore, models: &Models, id: &str, req: &JobRequest) -> Result<()> {
    store.transition(id, crate::jobs::JobStatus::Running, |_| {})?;
    let outcome = execute(req, models).and_then(|out| {
        for (name, bytes) in &out.artifacts {
            store.add_artifact(id, name, bytes)?;
        }
        if let Some(r) = out.colorization {
            store.cache_result(id, r);
        }
        Ok(out.result)
    });
    match outcome {
        Ok(result) => {
            store.transition(id, crate::jobs::JobStatus::Done, |j| j.result = Some(result))?;
            Ok(())
        }
        Err(e) => {
            log::warn!("job {id} failed: {e}");
            store.transition(id, crate::jobs::JobStatus::Failed, |j| j.error = Some(e.to_string()))?;
            Err(e)
        }
    }
}

pub fn encode_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

//! Command-line interface. Global flags override the config file and the
//! environment; each subcommand wraps one library operation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use colorize_core::cold_diffusion::{load_corpus, train, write_corpus, CheckpointPlan, TrainConfig};
use colorize_core::colorspace::{GrayImage, RgbImage};
use colorize_core::denoiser::{Denoiser, DenoiserConfig};
use colorize_core::embed::{ColorStatsFeaturizer, JointEmbedder, JointEmbedderConfig, JointTrainConfig};
use colorize_core::enhance::{contact_sheet, enhance_grid, EnhanceConfig};
use colorize_core::latent_codec::{linearity_probe, CodecConfig, CodecTrainConfig, LearnedCodec};
use colorize_core::prompts::{
    bundle_for, compute_color_direction, default_bundle, EmbeddingDirection, PhraseList, PooledText, PromptStrategy,
};
use colorize_core::ranker::{load_pairs, pairwise_accuracy, rank_scales, train_ranker, write_pairs, RankerTrainConfig};
use colorize_core::sampler::{colorize, step_trace, trace_records};
use colorize_core::toy::{toy_preference_pairs, toy_scenes, ToyConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::AppConfig;
use crate::error::{Result, ServiceError};
use crate::eval::{evaluate, write_report};
use crate::http::{serve, AppState};
use crate::jobs::JobStore;
use crate::models::Models;
use crate::ops::{cell_artifact, replay, SHEET_GAP};

/// Scales swept by the linearity probe.
pub const PROBE_SCALES: [f64; 8] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4];

/// Caption pairs for the embedding-direction strategy.
pub const CAPTION_PAIRS_FILE: &str = "caption-pairs.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "colorize",
    version,
    about = "Text-guided colorization: training, inference and the job service"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// Mirrors the configuration keys.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalFlags {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub bind: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub jobs_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Codec checkpoint stem; omit for the identity backend.
    #[arg(long, global = true)]
    pub codec: Option<PathBuf>,
    #[arg(long, global = true)]
    pub denoiser: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ranker: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embedder: Option<PathBuf>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub guidance_scale: Option<f64>,
    #[arg(long, global = true)]
    pub color_scale: Option<f64>,
}

impl GlobalFlags {
    pub fn apply(&self, cfg: &mut AppConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        set(&mut cfg.server.bind, &self.bind);
        set(&mut cfg.server.workers, &self.workers);
        set(&mut cfg.paths.jobs_dir, &self.jobs_dir);
        set_opt(&mut cfg.paths.corpus, &self.corpus);
        set_opt(&mut cfg.models.codec, &self.codec);
        set_opt(&mut cfg.models.denoiser, &self.denoiser);
        set_opt(&mut cfg.models.ranker, &self.ranker);
        set_opt(&mut cfg.models.embedder, &self.embedder);
        set(&mut cfg.sampler.steps, &self.steps);
        set(&mut cfg.sampler.guidance_scale, &self.guidance_scale);
        set(&mut cfg.sampler.color_scale, &self.color_scale);
    }

    /// Config file, then environment, then these flags.
    pub fn resolve(&self) -> Result<AppConfig> {
        let mut cfg = AppConfig::load(self.config.as_deref())?;
        self.apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic captioned corpus (and optionally preference pairs).
    MakeToyCorpus(MakeToyArgs),
    TrainCodec(TrainCodecArgs),
    TrainEmbedder(TrainEmbedderArgs),
    TrainDenoiser(TrainDenoiserArgs),
    TrainRanker(TrainRankerArgs),
    /// Mean text-embedding offset from gray captions to color captions.
    ColorDirection(ColorDirectionArgs),
    Colorize(ColorizeArgs),
    Enhance(EnhanceArgs),
    Eval(EvalArgs),
    /// Colorfulness of decode(z_gray + s·Δ) across scales.
    ProbeLinearity(ProbeArgs),
    /// Start the HTTP job service.
    Serve,
    /// Re-run a stored job and check its artifacts are reproduced exactly.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct MakeToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write this many labeled preference pairs under `<out>/pairs`.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Colorfulness the synthetic labeler prefers.
    #[arg(long, default_value_t = 40.0)]
    pub target_clr: f64,
}

#[derive(Debug, Args)]
pub struct TrainCodecArgs {
    /// Output checkpoint stem.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainEmbedderArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainDenoiserArgs {
    /// Directory for periodic and final checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// From-scratch settings for toy corpora instead of fine-tuning ones.
    #[arg(long)]
    pub desk_scale: bool,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainRankerArgs {
    /// `labels.jsonl` written by `make-toy-corpus --pairs` or by hand.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ColorDirectionArgs {
    /// JSON lines `{gray, color}`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub negative: Option<String>,
    /// Prompt strategy applied to `--caption`.
    #[arg(long)]
    pub strategy: Option<PromptStrategy>,
    /// Caption of the gray input, for prompt strategies.
    #[arg(long)]
    pub caption: Option<String>,
    /// Direction file from `color-direction`.
    #[arg(long)]
    pub direction: Option<PathBuf>,
    #[arg(long)]
    pub use_ranker: bool,
    /// Also write one PNG per iteration.
    #[arg(long)]
    pub frames: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub starts: Option<Vec<usize>>,
    #[arg(long, default_value = "")]
    pub prompt: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Corpus directory; defaults to the configured corpus.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub job: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionPair {
    pub gray: String,
    pub color: String,
}

fn corpus_dir(cfg: &AppConfig) -> Result<&Path> {
    cfg.paths
        .corpus
        .as_deref()
        .ok_or_else(|| ServiceError::Config("no corpus configured (--corpus)".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn ensure_parent(stem: &Path) -> Result<()> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.global.resolve()?;
    match cli.command {
        Command::MakeToyCorpus(a) => make_toy_corpus(&a),
        Command::TrainCodec(a) => train_codec(&cfg, &a),
        Command::TrainEmbedder(a) => train_embedder(&cfg, &a),
        Command::TrainDenoiser(a) => train_denoiser(&cfg, &a),
        Command::TrainRanker(a) => train_ranker_cmd(&cfg, &a),
        Command::ColorDirection(a) => color_direction(&cfg, &a),
        Command::Colorize(a) => colorize_cmd(&cfg, &a),
        Command::Enhance(a) => enhance_cmd(&cfg, &a),
        Command::Eval(a) => eval_cmd(&cfg, &a),
        Command::ProbeLinearity(a) => probe(&cfg, &a),
        Command::Serve => serve_cmd(&cfg),
        Command::Replay(a) => replay_cmd(&cfg, &a),
    }
}

fn make_toy_corpus(a: &MakeToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        size: a.size,
        seed: a.seed,
        ..ToyConfig::default()
    };
    let scenes = toy_scenes(a.count, &cfg)?;
    let samples: Vec<_> = scenes.iter().map(|(s, _)| s.clone()).collect();
    write_corpus(&a.out, &samples)?;
    let mut lines = String::new();
    for (_, spec) in &scenes {
        lines.push_str(&serde_json::to_string(&CaptionPair {
            gray: spec.gray_caption(),
            color: spec.caption(),
        })?);
        lines.push('\n');
    }
    std::fs::write(a.out.join(CAPTION_PAIRS_FILE), lines)?;
    if let Some(n) = a.pairs {
        write_pairs(
            &a.out.join("pairs"),
            &toy_preference_pairs(n, a.size, a.target_clr, a.seed)?,
        )?;
    }
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn train_codec(cfg: &AppConfig, a: &TrainCodecArgs) -> Result<()> {
    let images: Vec<RgbImage> = load_corpus(corpus_dir(cfg)?)?.into_iter().map(|s| s.image).collect();
    let config = CodecConfig {
        latent_channels: a.channels,
        widths: a.widths.clone(),
    };
    let mut codec = LearnedCodec::new(config, a.seed)?;
    let losses = codec.train(
        &images,
        &CodecTrainConfig {
            steps: a.steps,
            seed: a.seed,
            ..CodecTrainConfig::default()
        },
    )?;
    ensure_parent(&a.out)?;
    codec.save(&a.out)?;
    println!(
        "codec trained on {} images, final loss {:.6}; saved to {}",
        images.len(),
        losses.last().copied().unwrap_or(f32::NAN),
        a.out.display()
    );
    Ok(())
}

fn train_embedder(cfg: &AppConfig, a: &TrainEmbedderArgs) -> Result<()> {
    let corpus = load_corpus(corpus_dir(cfg)?)?;
    let images: Vec<RgbImage> = corpus.iter().map(|s| s.image.clone()).collect();
    let captions: Vec<String> = corpus.iter().map(|s| s.caption.clone()).collect();
    let mut embedder = JointEmbedder::new(JointEmbedderConfig::default(), a.seed)?;
    let losses = embedder.train(
        &images,
        &captions,
        &JointTrainConfig {
            steps: a.steps,
            seed: a.seed,
            ..JointTrainConfig::default()
        },
    )?;
    ensure_parent(&a.out)?;
    embedder.save(&a.out)?;
    println!(
        "embedder final loss {:.6}; saved to {}",
        losses.last().copied().unwrap_or(f32::NAN),
        a.out.display()
    );
    Ok(())
}

fn train_denoiser(cfg: &AppConfig, a: &TrainDenoiserArgs) -> Result<()> {
    let samples = load_corpus(corpus_dir(cfg)?)?;
    let models = Models::load(&AppConfig {
        models: crate::config::ModelPaths {
            denoiser: None,
            ranker: None,
            ..cfg.models.clone()
        },
        ..cfg.clone()
    })?;
    let mut tc = if a.desk_scale {
        TrainConfig::desk_scale()
    } else {
        TrainConfig::default()
    };
    tc.total_steps = a.train_steps.unwrap_or(tc.total_steps);
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.seed = a.seed;
    let mut dc = DenoiserConfig {
        latent_channels: models.codec.channels(),
        ..DenoiserConfig::default()
    };
    if let Some(w) = &a.widths {
        dc.widths = [w[0], w[1], w[2]];
    }
    let model = Denoiser::new(dc, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let save = |stem: &Path| model.save(stem);
    let report = train(
        &model,
        samples,
        &models.codec,
        &tc,
        DType::F32,
        Some(CheckpointPlan {
            dir: &a.out,
            save: &save,
        }),
    )?;
    let final_stem = a.out.join("denoiser");
    model.save(&final_stem)?;
    write_json(&a.out.join("losses.json"), &report.losses)?;
    println!(
        "trained {} steps (dropped {} washed-out images); final loss {:.6}; saved to {}",
        report.losses.len(),
        report.dropped_low_saturation,
        report.losses.last().copied().unwrap_or(f32::NAN),
        final_stem.display()
    );
    Ok(())
}

fn train_ranker_cmd(cfg: &AppConfig, a: &TrainRankerArgs) -> Result<()> {
    let pairs = load_pairs(&a.labels)?;
    let models = Models::load(&AppConfig {
        models: crate::config::ModelPaths {
            ranker: None,
            ..cfg.models.clone()
        },
        ..cfg.clone()
    })?;
    let model = train_ranker(&pairs, models.embedder.as_ref(), &RankerTrainConfig::default())?;
    let acc = pairwise_accuracy(&model, &pairs, models.embedder.as_ref())?;
    ensure_parent(&a.out)?;
    model.save(&a.out)?;
    println!(
        "ranker trained on {} pairs, training accuracy {acc:.3}; saved to {}",
        pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn color_direction(cfg: &AppConfig, a: &ColorDirectionArgs) -> Result<()> {
    let models = Models::load(cfg)?;
    let text = std::fs::read_to_string(&a.pairs)?;
    let mut gray = Vec::new();
    let mut color = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let p: CaptionPair = serde_json::from_str(line)?;
        gray.push(p.gray);
        color.push(p.color);
    }
    let direction = compute_color_direction(&gray, &color, &PooledText(models.restorer()?))?;
    write_json(&a.out, &direction)?;
    println!(
        "direction from {} caption pairs written to {}",
        direction.count,
        a.out.display()
    );
    Ok(())
}

fn colorize_cmd(cfg: &AppConfig, a: &ColorizeArgs) -> Result<()> {
    let models = Models::load(cfg)?;
    let gray = GrayImage::load(&a.input)?;
    let direction: Option<EmbeddingDirection> = match &a.direction {
        Some(p) => Some(serde_json::from_slice(&std::fs::read(p)?)?),
        None => None,
    };
    let bundle = match a.strategy {
        Some(strategy) => bundle_for(
            strategy,
            a.caption.as_deref().unwrap_or(""),
            &PhraseList::default_list(),
            direction.as_ref(),
            None,
        )?,
        None => default_bundle(),
    };
    let mut sc = models.defaults.sampler().with_prompts(&bundle);
    if let Some(p) = &a.prompt {
        sc.positive = p.clone();
    }
    if let Some(n) = &a.negative {
        sc.negative = n.clone();
    }
    sc.trace = true;
    let mut result = colorize(&gray, &sc, models.restorer()?, &models.codec)?;
    let mut chosen = None;
    if a.use_ranker {
        let choice = rank_scales(
            &result.z_gray,
            &result.residual,
            models.ranker()?,
            models.embedder.as_ref(),
            &models.codec,
        )?;
        result.image = result.rescale(&models.codec, choice.best_scale)?;
        chosen = Some(choice.best_scale);
    }
    std::fs::create_dir_all(&a.out_dir)?;
    result.image.save_png(a.out_dir.join("out.png"))?;
    let frames = step_trace(&result, &models.codec)?;
    write_json(&a.out_dir.join("trace.json"), &trace_records(&result, &frames)?)?;
    if a.frames {
        for (i, f) in frames.iter().enumerate() {
            f.save_png(a.out_dir.join(format!("frame-{:03}.png", i + 1)))?;
        }
    }
    match chosen {
        Some(s) => println!(
            "wrote {} (ranker chose color scale {s})",
            a.out_dir.join("out.png").display()
        ),
        None => println!("wrote {}", a.out_dir.join("out.png").display()),
    }
    Ok(())
}

fn enhance_cmd(cfg: &AppConfig, a: &EnhanceArgs) -> Result<()> {
    let models = Models::load(cfg)?;
    let faded = RgbImage::load(&a.input)?;
    let mut ec = EnhanceConfig {
        sampler: models.defaults.sampler(),
        ..EnhanceConfig::default()
    };
    ec.sampler.positive = a.prompt.clone();
    if let Some(s) = &a.seeds {
        ec.chroma_seeds = s.clone();
    }
    if let Some(s) = &a.starts {
        ec.start_steps = s.clone();
    }
    let grid = enhance_grid(&faded, &ec, models.restorer()?, &models.codec)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut cells = Vec::new();
    for c in &grid.cells {
        let mut entry = json!({"row": c.row, "col": c.col, "seed": c.seed, "start": c.start});
        match &c.outcome {
            Ok(img) => {
                let name = cell_artifact(c.row, c.col);
                img.save_png(a.out_dir.join(&name))?;
                entry["artifact"] = json!(name);
            }
            Err(e) => entry["error"] = json!(e),
        }
        cells.push(entry);
    }
    contact_sheet(&grid, SHEET_GAP)?.save_png(a.out_dir.join("grid.png"))?;
    write_json(
        &a.out_dir.join("index.json"),
        &json!({"rows": grid.rows, "cols": grid.cols, "cells": cells, "grid": "grid.png"}),
    )?;
    println!("wrote {}x{} grid to {}", grid.rows, grid.cols, a.out_dir.display());
    Ok(())
}

fn eval_cmd(cfg: &AppConfig, a: &EvalArgs) -> Result<()> {
    let featurizer: Box<dyn colorize_core::embed::ImageEmbedder> = match &cfg.models.embedder {
        Some(stem) => Box::new(JointEmbedder::load(stem)?),
        None => Box::new(ColorStatsFeaturizer),
    };
    let report = evaluate(&a.manifest, featurizer.as_ref())?;
    for path in write_report(&report, &a.out_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn probe(cfg: &AppConfig, a: &ProbeArgs) -> Result<()> {
    let dir = match &a.images {
        Some(d) => d.as_path(),
        None => corpus_dir(cfg)?,
    };
    let images: Vec<RgbImage> = load_corpus(dir)?.into_iter().take(a.count).map(|s| s.image).collect();
    let codec = match &cfg.models.codec {
        Some(stem) => colorize_core::CodecBackend::Learned(Box::new(LearnedCodec::load(stem)?)),
        None => colorize_core::CodecBackend::Identity,
    };
    let report = linearity_probe(&images, &PROBE_SCALES, &codec)?;
    println!("backend {} on {} images", report.backend, report.image_count);
    println!("scale  colorfulness");
    for r in &report.rows {
        println!("{:5.2}  {:.3}", r.scale, r.mean_colorfulness);
    }
    println!("gray colorfulness {:.4}", report.gray_colorfulness);
    println!("spearman {:.4}", report.spearman);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn serve_cmd(cfg: &AppConfig) -> Result<()> {
    let models = Arc::new(Models::load(cfg)?);
    log::info!("models loaded: {models:?}");
    let store = Arc::new(JobStore::open(&cfg.paths.jobs_dir)?);
    let state = AppState::new(models, store, cfg.server.workers);
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(state, &cfg.server.bind))
}

fn replay_cmd(cfg: &AppConfig, a: &ReplayArgs) -> Result<()> {
    let models = Models::load(cfg)?;
    let store = JobStore::open(&cfg.paths.jobs_dir)?;
    let checked = replay(&store, &models, &a.job)?;
    println!("job {} reproduced: {} identical artifacts", a.job, checked.len());
    Ok(())
}

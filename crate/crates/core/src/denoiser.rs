//! The time- and text-conditioned restoration network.
//!
//! A small U-Net over three resolutions predicts the color residual that
//! takes a partially colored latent to the clean color latent. The degradation
//! level enters through a sinusoidal embedding added inside every residual
//! block; the prompt enters through cross-attention at the bottleneck. The
//! output convolution starts at zero, so an untrained model predicts no
//! change.

use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{Conv2d, Embedding, GroupNorm, Linear, VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::cold_diffusion::{Timestep, LEVELS};
use crate::embed::{word_bucket, words};
use crate::error::{shape_mismatch, Error, Result};
use crate::latent_codec::{ColorResidual, LatentGrid};
use crate::nn;

/// Additive attention bias for padded token positions.
const MASKED: f64 = -1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    /// Feature widths at full, half and quarter resolution.
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub text_dim: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub groups: usize,
    /// Start the output layer at zero. Disable only for gradient checks.
    pub zero_init_head: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 3,
            widths: [32, 64, 64],
            time_dim: 64,
            text_dim: 32,
            vocab_size: 512,
            max_tokens: 16,
            groups: 8,
            zero_init_head: true,
        }
    }
}

impl DenoiserConfig {
    pub fn tiny(latent_channels: usize) -> Self {
        Self {
            latent_channels,
            widths: [4, 8, 8],
            time_dim: 8,
            text_dim: 4,
            vocab_size: 16,
            max_tokens: 4,
            groups: 2,
            zero_init_head: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.vocab_size < 2 || self.max_tokens == 0 {
            return Err(Error::InvalidInput(format!("invalid denoiser config {self:?}")));
        }
        if self.widths.iter().any(|w| *w == 0 || w % self.groups != 0) {
            return Err(Error::InvalidInput(format!(
                "widths {:?} must be positive multiples of groups {}",
                self.widths, self.groups
            )));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidInput("time_dim must be even".into()));
        }
        Ok(())
    }

    /// Token ids for a prompt. The empty prompt is the single null token.
    pub fn tokenize(&self, prompt: &str) -> Vec<u32> {
        let ids: Vec<u32> = words(prompt)
            .iter()
            .take(self.max_tokens)
            .map(|w| word_bucket(w, self.vocab_size) as u32)
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }
}

/// Per-token prompt embedding, `len × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    text: String,
    dim: usize,
    tokens: Vec<f32>,
}

impl TextEmbedding {
    pub fn new(text: impl Into<String>, dim: usize, tokens: Vec<f32>) -> Result<Self> {
        if dim == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "token buffer of {} values is not a non-empty multiple of {dim}",
                tokens.len()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite text embedding".into()));
        }
        Ok(Self {
            text: text.into(),
            dim,
            tokens,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }

    /// Mean over tokens.
    pub fn pooled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.tokens.chunks(self.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += f64::from(*v);
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Adds `direction` to every token, which moves the pooled vector by
    /// exactly `direction`.
    pub fn shifted(&self, direction: &[f64]) -> Result<Self> {
        if direction.len() != self.dim {
            return Err(shape_mismatch(self.dim, direction.len()));
        }
        let tokens = self
            .tokens
            .chunks(self.dim)
            .flat_map(|row| row.iter().zip(direction).map(|(v, d)| (f64::from(*v) + d) as f32))
            .collect();
        Self::new(self.text.clone(), self.dim, tokens)
    }
}

/// Anything that can predict a color residual for a single latent. The
/// sampler only depends on this.
pub trait ColorRestorer: Send + Sync {
    fn embed_text(&self, prompt: &str) -> Result<TextEmbedding>;
    fn predict_residual(&self, z_t: &LatentGrid, t: Timestep, c: &TextEmbedding) -> Result<ColorResidual>;

    /// Latent height and width must be multiples of this.
    fn spatial_multiple(&self) -> usize {
        1
    }
}

/// Batched prediction used by the training objective.
pub trait ResidualModel {
    /// `z_t` is `(B, C, H, W)`; returns a tensor of the same shape.
    fn predict_batch(&self, z_t: &Tensor, levels: &[u32], prompts: &[String]) -> Result<Tensor>;
}

/// A residual model with trainable parameters.
pub trait TrainableModel: ResidualModel {
    fn trainable_vars(&self) -> Vec<Var>;
}

struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(cin: usize, cout: usize, cfg: &DenoiserConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let skip = if cin == cout {
            None
        } else {
            Some(nn::conv1x1(cin, cout, vb.pp("skip"))?)
        };
        Ok(Self {
            norm1: candle_nn::group_norm(cfg.groups, cin, 1e-5, vb.pp("norm1"))?,
            conv1: nn::conv3x3(cin, cout, 1, vb.pp("conv1"))?,
            time: candle_nn::linear(cfg.time_dim, cout, vb.pp("time"))?,
            norm2: candle_nn::group_norm(cfg.groups, cout, 1e-5, vb.pp("norm2"))?,
            conv2: nn::conv3x3(cout, cout, 1, vb.pp("conv2"))?,
            skip,
        })
    }

    fn forward(&self, x: &Tensor, temb: &Tensor) -> candle_core::Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let t = self.time.forward(&temb.silu()?)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        h + skip
    }
}

struct CrossAttention {
    norm: GroupNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    dim: usize,
}

impl CrossAttention {
    fn new(channels: usize, cfg: &DenoiserConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            norm: candle_nn::group_norm(cfg.groups, channels, 1e-5, vb.pp("norm"))?,
            q: candle_nn::linear(channels, channels, vb.pp("q"))?,
            k: candle_nn::linear(cfg.text_dim, channels, vb.pp("k"))?,
            v: candle_nn::linear(cfg.text_dim, channels, vb.pp("v"))?,
            out: candle_nn::linear(channels, channels, vb.pp("out"))?,
            dim: channels,
        })
    }

    /// `x` is `(B, C, H, W)`, `text` is `(B, L, D)`, `bias` is `(B, 1, L)`.
    fn forward(&self, x: &Tensor, text: &Tensor, bias: &Tensor) -> candle_core::Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let seq = self.norm.forward(x)?.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let q = self.q.forward(&seq)?;
        let k = self.k.forward(text)?;
        let v = self.v.forward(text)?;
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / (self.dim as f64).sqrt())?;
        let attn = nn::softmax_last(&scores.broadcast_add(bias)?)?;
        let o = self.out.forward(&attn.matmul(&v)?)?;
        let o = o.transpose(1, 2)?.reshape((b, c, h, w))?;
        x + o
    }
}

struct Unet {
    tokens: Embedding,
    positions: Embedding,
    text_proj: Linear,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    res0: ResBlock,
    down0: Conv2d,
    res1: ResBlock,
    down1: Conv2d,
    mid_a: ResBlock,
    attn: CrossAttention,
    mid_b: ResBlock,
    up1: ResBlock,
    up0: ResBlock,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Unet {
    fn new(cfg: &DenoiserConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let [w0, w1, w2] = cfg.widths;
        let conv_out = if cfg.zero_init_head {
            nn::zero_conv3x3(w0, cfg.latent_channels, vb.pp("conv_out"))?
        } else {
            nn::conv3x3(w0, cfg.latent_channels, 1, vb.pp("conv_out"))?
        };
        Ok(Self {
            tokens: candle_nn::embedding(cfg.vocab_size, cfg.text_dim, vb.pp("text.tokens"))?,
            positions: candle_nn::embedding(cfg.max_tokens, cfg.text_dim, vb.pp("text.positions"))?,
            text_proj: candle_nn::linear(cfg.text_dim, cfg.text_dim, vb.pp("text.proj"))?,
            time1: candle_nn::linear(cfg.time_dim, cfg.time_dim, vb.pp("time.fc1"))?,
            time2: candle_nn::linear(cfg.time_dim, cfg.time_dim, vb.pp("time.fc2"))?,
            conv_in: nn::conv3x3(cfg.latent_channels, w0, 1, vb.pp("conv_in"))?,
            res0: ResBlock::new(w0, w0, cfg, vb.pp("res0"))?,
            down0: nn::conv3x3(w0, w1, 2, vb.pp("down0"))?,
            res1: ResBlock::new(w1, w1, cfg, vb.pp("res1"))?,
            down1: nn::conv3x3(w1, w2, 2, vb.pp("down1"))?,
            mid_a: ResBlock::new(w2, w2, cfg, vb.pp("mid_a"))?,
            attn: CrossAttention::new(w2, cfg, vb.pp("mid_attn"))?,
            mid_b: ResBlock::new(w2, w2, cfg, vb.pp("mid_b"))?,
            up1: ResBlock::new(w2 + w1, w1, cfg, vb.pp("up1"))?,
            up0: ResBlock::new(w1 + w0, w0, cfg, vb.pp("up0"))?,
            norm_out: candle_nn::group_norm(cfg.groups, w0, 1e-5, vb.pp("norm_out"))?,
            conv_out,
        })
    }

    /// Per-token text features `(L, D)` for one prompt.
    fn encode_tokens(&self, ids: &[u32], device: &Device) -> candle_core::Result<Tensor> {
        let ids_t = Tensor::new(ids, device)?;
        let pos: Vec<u32> = (0..ids.len() as u32).collect();
        let pos_t = Tensor::new(pos.as_slice(), device)?;
        let x = (self.tokens.forward(&ids_t)? + self.positions.forward(&pos_t)?)?;
        self.text_proj.forward(&x)
    }

    fn time_embedding(
        &self,
        levels: &[u32],
        cfg: &DenoiserConfig,
        device: &Device,
        dtype: DType,
    ) -> candle_core::Result<Tensor> {
        let half = cfg.time_dim / 2;
        let mut data = Vec::with_capacity(levels.len() * cfg.time_dim);
        for &level in levels {
            let pos = f64::from(level) * 10.0;
            let (mut sin, mut cos) = (Vec::with_capacity(half), Vec::with_capacity(half));
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
                sin.push((pos * freq).sin());
                cos.push((pos * freq).cos());
            }
            data.extend(sin);
            data.extend(cos);
        }
        let t = Tensor::from_vec(data, (levels.len(), cfg.time_dim), device)?.to_dtype(dtype)?;
        self.time2.forward(&self.time1.forward(&t)?.silu()?)
    }

    fn forward(&self, z: &Tensor, temb: &Tensor, text: &Tensor, bias: &Tensor) -> candle_core::Result<Tensor> {
        let h0 = self.res0.forward(&self.conv_in.forward(z)?, temb)?;
        let h1 = self.res1.forward(&self.down0.forward(&h0)?, temb)?;
        let h2 = self.mid_a.forward(&self.down1.forward(&h1)?, temb)?;
        let h2 = self.mid_b.forward(&self.attn.forward(&h2, text, bias)?, temb)?;
        let u1 = Tensor::cat(&[&nn::upsample2(&h2)?, &h1], 1)?;
        let u1 = self.up1.forward(&u1, temb)?;
        let u0 = Tensor::cat(&[&nn::upsample2(&u1)?, &h0], 1)?;
        let u0 = self.up0.forward(&u0, temb)?;
        self.conv_out.forward(&self.norm_out.forward(&u0)?.silu()?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenoiserSidecar {
    kind: String,
    dtype: String,
    config: DenoiserConfig,
}

/// The trained restoration network. Immutable during inference.
pub struct Denoiser {
    config: DenoiserConfig,
    varmap: VarMap,
    unet: Unet,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for Denoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("config", &self.config)
            .field("dtype", &self.dtype)
            .finish()
    }
}

/// Spatial dims must survive two stride-2 stages and the upsampling path.
pub const SPATIAL_MULTIPLE: usize = 4;

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    /// `F64` models exist for finite-difference gradient checks.
    pub fn with_dtype(config: DenoiserConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, &device);
        let unet = Unet::new(&config, vb)?;
        nn::reinit_seeded(&varmap, seed)?;
        Ok(Self {
            config,
            varmap,
            unet,
            dtype,
            device,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let meta = DenoiserSidecar {
            kind: "denoiser".into(),
            dtype: format!("{:?}", self.dtype),
            config: self.config.clone(),
        };
        nn::save_checkpoint(&self.varmap, stem, &meta)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: DenoiserSidecar = nn::read_sidecar(stem)?;
        if meta.kind != "denoiser" {
            return Err(Error::Checkpoint(format!("expected a denoiser, found {}", meta.kind)));
        }
        let dtype = match meta.dtype.as_str() {
            "F32" => DType::F32,
            "F64" => DType::F64,
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
        };
        let mut d = Self::with_dtype(meta.config, 0, dtype)?;
        nn::load_weights(&mut d.varmap, stem)?;
        Ok(d)
    }

    fn check_latent_dims(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.config.latent_channels {
            return Err(shape_mismatch(self.config.latent_channels, c));
        }
        if !h.is_multiple_of(SPATIAL_MULTIPLE) || !w.is_multiple_of(SPATIAL_MULTIPLE) {
            return Err(Error::InvalidInput(format!(
                "latent {h}x{w} must be divisible by {SPATIAL_MULTIPLE}"
            )));
        }
        Ok(())
    }

    /// Stacks per-prompt token features into `(B, L, D)` plus the padding
    /// bias `(B, 1, L)`.
    fn text_batch(&self, embeddings: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let lens = embeddings
            .iter()
            .map(|e| e.dim(0))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let max_len = lens.iter().copied().max().unwrap_or(1);
        let mut padded = Vec::with_capacity(embeddings.len());
        let mut bias = Vec::with_capacity(embeddings.len() * max_len);
        for (e, &len) in embeddings.iter().zip(&lens) {
            let t = if len < max_len {
                let pad = Tensor::zeros((max_len - len, self.config.text_dim), self.dtype, &self.device)?;
                Tensor::cat(&[e, &pad], 0)?
            } else {
                e.clone()
            };
            padded.push(t);
            bias.extend((0..max_len).map(|i| if i < len { 0.0 } else { MASKED }));
        }
        let text = Tensor::stack(&padded, 0)?;
        let bias = Tensor::from_vec(bias, (embeddings.len(), 1, max_len), &self.device)?.to_dtype(self.dtype)?;
        Ok((text, bias))
    }

    fn run(&self, z: &Tensor, levels: &[u32], text: &[Tensor]) -> Result<Tensor> {
        let (b, c, h, w) = z.dims4()?;
        self.check_latent_dims(c, h, w)?;
        if levels.len() != b || text.len() != b {
            return Err(shape_mismatch(b, (levels.len(), text.len())));
        }
        if let Some(bad) = levels.iter().find(|&&l| l > LEVELS) {
            return Err(Error::InvalidInput(format!("level {bad} outside 0..={LEVELS}")));
        }
        let temb = self
            .unet
            .time_embedding(levels, &self.config, &self.device, self.dtype)?;
        let (text, bias) = self.text_batch(text)?;
        let z = z.to_dtype(self.dtype)?;
        Ok(self.unet.forward(&z, &temb, &text, &bias)?)
    }
}

impl ResidualModel for Denoiser {
    fn predict_batch(&self, z_t: &Tensor, levels: &[u32], prompts: &[String]) -> Result<Tensor> {
        let text = prompts
            .iter()
            .map(|p| self.unet.encode_tokens(&self.config.tokenize(p), &self.device))
            .collect::<candle_core::Result<Vec<_>>>()?;
        self.run(z_t, levels, &text)
    }
}

impl TrainableModel for Denoiser {
    fn trainable_vars(&self) -> Vec<Var> {
        self.varmap.all_vars()
    }
}

impl ColorRestorer for Denoiser {
    fn embed_text(&self, prompt: &str) -> Result<TextEmbedding> {
        let t = self.unet.encode_tokens(&self.config.tokenize(prompt), &self.device)?;
        let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        TextEmbedding::new(prompt, self.config.text_dim, values)
    }

    fn predict_residual(&self, z_t: &LatentGrid, t: Timestep, c: &TextEmbedding) -> Result<ColorResidual> {
        if c.dim() != self.config.text_dim {
            return Err(shape_mismatch(self.config.text_dim, c.dim()));
        }
        let z = z_t.to_tensor(&self.device, self.dtype)?;
        let text = Tensor::from_slice(c.tokens(), (c.len(), c.dim()), &self.device)?.to_dtype(self.dtype)?;
        let out = self.run(&z, &[t.level()], &[text])?;
        Ok(ColorResidual::new(LatentGrid::from_tensor(&out, z_t.factor())?))
    }

    fn spatial_multiple(&self) -> usize {
        SPATIAL_MULTIPLE
    }
}

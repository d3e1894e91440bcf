//! Models loaded once at startup and shared read-only by every job.

use colorize_core::denoiser::{ColorRestorer, Denoiser};
use colorize_core::embed::{ColorStatsFeaturizer, ImageEmbedder, JointEmbedder};
use colorize_core::latent_codec::{CodecBackend, LearnedCodec};
use colorize_core::ranker::RankerModel;

use crate::config::{AppConfig, SamplerDefaults};
use crate::error::{Result, ServiceError};

pub struct Models {
    pub codec: CodecBackend,
    pub restorer: Option<Box<dyn ColorRestorer>>,
    pub ranker: Option<RankerModel>,
    pub embedder: Box<dyn ImageEmbedder>,
    /// Sampler settings for requests that leave them out.
    pub defaults: SamplerDefaults,
    /// Identifies the configuration the models came from.
    pub config_hash: String,
}

impl std::fmt::Debug for Models {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Models")
            .field("codec", &self.codec.kind())
            .field("restorer", &self.restorer.is_some())
            .field("ranker", &self.ranker.is_some())
            .field("embedder", &self.embedder.id())
            .field("config_hash", &self.config_hash)
            .finish()
    }
}

impl Models {
    pub fn load(cfg: &AppConfig) -> Result<Self> {
        cfg.validate()?;
        let codec = match &cfg.models.codec {
            Some(stem) => CodecBackend::Learned(Box::new(LearnedCodec::load(stem)?)),
            None => CodecBackend::Identity,
        };
        let restorer = match &cfg.models.denoiser {
            Some(stem) => {
                let d = Denoiser::load(stem)?;
                if d.config().latent_channels != codec.channels() {
                    return Err(ServiceError::Config(format!(
                        "denoiser expects {} latent channels, codec produces {}",
                        d.config().latent_channels,
                        codec.channels()
                    )));
                }
                Some(Box::new(d) as Box<dyn ColorRestorer>)
            }
            None => None,
        };
        let embedder: Box<dyn ImageEmbedder> = match &cfg.models.embedder {
            Some(stem) => Box::new(JointEmbedder::load(stem)?),
            None => Box::new(ColorStatsFeaturizer),
        };
        let ranker = match &cfg.models.ranker {
            Some(path) => {
                let r = RankerModel::load(path)?;
                if r.embedder_id != embedder.id() {
                    return Err(ServiceError::Config(format!(
                        "ranker was trained on embedder {}, configured embedder is {}",
                        r.embedder_id,
                        embedder.id()
                    )));
                }
                Some(r)
            }
            None => None,
        };
        Ok(Self {
            codec,
            restorer,
            ranker,
            embedder,
            defaults: cfg.sampler.clone(),
            config_hash: cfg.config_hash()?,
        })
    }

    pub fn restorer(&self) -> Result<&dyn ColorRestorer> {
        self.restorer
            .as_deref()
            .ok_or_else(|| ServiceError::Unavailable("no denoiser checkpoint configured".into()))
    }

    pub fn ranker(&self) -> Result<&RankerModel> {
        self.ranker
            .as_ref()
            .ok_or_else(|| ServiceError::Unavailable("no ranker configured".into()))
    }
}

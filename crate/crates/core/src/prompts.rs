//! Automatic prompt strategies for running without a user caption.
//!
//! The default is the null positive prompt paired with a fixed negative
//! prompt describing old grayscale photos. The alternatives rewrite an
//! automatic caption of the gray input: stripping grayscale phrases, shifting
//! its embedding along a learned "color direction", or asking an external
//! language model to rephrase it.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::denoiser::ColorRestorer;
use crate::error::{shape_mismatch, Error, Result};

pub const DEFAULT_NEGATIVE_PROMPT: &str =
    "grainy black-and-white photo, photo taken on an old box camera, grayscale photography";

/// Phrases always removed by hint stripping.
pub const REQUIRED_PHRASES: [&str; 2] = ["black and white", "grayscale"];

pub const DEFAULT_PHRASES: [&str; 8] = [
    "black and white",
    "black-and-white",
    "grayscale",
    "greyscale",
    "monochrome",
    "b&w",
    "b/w",
    "sepia",
];

pub const REPHRASE_TEMPLATE: &str = "You are a highly intelligent agent. Given an image caption of a grayscale image, rephrase it as a colorized RGB photo. Remove any keywords relevant to grayscale images (e.g., black and white). Maintain a similar style to the input caption. Input Caption: {CAPTION}. Output Caption:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptStrategy {
    #[serde(rename = "null+negative")]
    NullNegative,
    #[serde(rename = "hint-strip")]
    HintStrip,
    #[serde(rename = "embedding-direction")]
    EmbeddingDirection,
    #[serde(rename = "external-rephrase")]
    ExternalRephrase,
}

impl PromptStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PromptStrategy::NullNegative => "null+negative",
            PromptStrategy::HintStrip => "hint-strip",
            PromptStrategy::EmbeddingDirection => "embedding-direction",
            PromptStrategy::ExternalRephrase => "external-rephrase",
        }
    }
}

impl std::str::FromStr for PromptStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PromptStrategy::NullNegative,
            PromptStrategy::HintStrip,
            PromptStrategy::EmbeddingDirection,
            PromptStrategy::ExternalRephrase,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::InvalidInput(format!("unknown prompt strategy {s:?}")))
    }
}

/// Mean offset from gray-caption embeddings to color-caption embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDirection {
    pub vector: Vec<f64>,
    /// Number of caption pairs averaged.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub positive: String,
    pub negative: String,
    pub strategy: PromptStrategy,
    /// Present only for the embedding-direction strategy.
    pub direction: Option<EmbeddingDirection>,
}

/// Null positive prompt with the fixed negative prompt.
pub fn default_bundle() -> PromptBundle {
    PromptBundle {
        positive: String::new(),
        negative: DEFAULT_NEGATIVE_PROMPT.into(),
        strategy: PromptStrategy::NullNegative,
        direction: None,
    }
}

/// A set of phrases compiled into one case-insensitive, word-bounded
/// pattern. Longer phrases are tried first.
#[derive(Debug, Clone)]
pub struct PhraseList {
    phrases: Vec<String>,
    pattern: Regex,
}

impl PhraseList {
    pub fn new<S: AsRef<str>>(phrases: &[S]) -> Result<Self> {
        let mut list: Vec<String> = phrases
            .iter()
            .map(|p| {
                p.as_ref()
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" ")
                    .to_lowercase()
            })
            .filter(|p| !p.is_empty())
            .collect();
        for req in REQUIRED_PHRASES {
            if !list.iter().any(|p| p == req) {
                list.push(req.into());
            }
        }
        list.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        list.dedup();
        let alternatives: Vec<String> = list
            .iter()
            .map(|p| {
                let body = p.split(' ').map(regex::escape).collect::<Vec<_>>().join(r"\s+");
                let start = if p.starts_with(|c: char| c.is_alphanumeric()) {
                    r"\b"
                } else {
                    ""
                };
                let end = if p.ends_with(|c: char| c.is_alphanumeric()) {
                    r"\b"
                } else {
                    ""
                };
                format!("{start}{body}{end}")
            })
            .collect();
        let pattern = Regex::new(&format!("(?i)(?:{})", alternatives.join("|")))
            .map_err(|e| Error::InvalidInput(format!("bad phrase pattern: {e}")))?;
        Ok(Self { phrases: list, pattern })
    }

    pub fn default_list() -> Self {
        Self::new(&DEFAULT_PHRASES).expect("default phrases compile")
    }

    /// One phrase per line; blank lines and `#` comments are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let phrases: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::new(&phrases)
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }
}

fn normalize_whitespace(text: &str) -> String {
    static SPACE_BEFORE_PUNCT: std::sync::LazyLock<Regex> =
        std::sync::LazyLock::new(|| Regex::new(r"\s+([,.;:!?])").expect("valid pattern"));
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ");
    SPACE_BEFORE_PUNCT.replace_all(&joined, "$1").into_owned()
}

/// Removes every listed phrase, repeating until nothing matches, and
/// normalizes whitespace.
pub fn strip_grayscale_hints(caption: &str, phrases: &PhraseList) -> String {
    let mut current = normalize_whitespace(caption);
    loop {
        let next = normalize_whitespace(&phrases.pattern.replace_all(&current, " "));
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Fixed-size text vectors for direction arithmetic.
pub trait TextEmbedder {
    fn embed_caption(&self, text: &str) -> Result<Vec<f64>>;
}

/// Pooled prompt embeddings of a restoration model.
pub struct PooledText<'a>(pub &'a dyn ColorRestorer);

impl TextEmbedder for PooledText<'_> {
    fn embed_caption(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.0.embed_text(text)?.pooled())
    }
}

impl TextEmbedder for crate::embed::JointEmbedder {
    fn embed_caption(&self, text: &str) -> Result<Vec<f64>> {
        crate::embed::JointEmbedder::embed_caption(self, text)
    }
}

/// Mean over pairs of `embed(color) − embed(gray)`.
pub fn compute_color_direction<S: AsRef<str>>(
    gray_captions: &[S],
    color_captions: &[S],
    embedder: &dyn TextEmbedder,
) -> Result<EmbeddingDirection> {
    if gray_captions.len() != color_captions.len() {
        return Err(shape_mismatch(gray_captions.len(), color_captions.len()));
    }
    if gray_captions.is_empty() {
        return Err(Error::InvalidInput(
            "color direction needs at least one caption pair".into(),
        ));
    }
    let mut sum: Option<Vec<f64>> = None;
    for (g, c) in gray_captions.iter().zip(color_captions) {
        let eg = embedder.embed_caption(g.as_ref())?;
        let ec = embedder.embed_caption(c.as_ref())?;
        if eg.len() != ec.len() {
            return Err(shape_mismatch(eg.len(), ec.len()));
        }
        let acc = sum.get_or_insert_with(|| vec![0.0; eg.len()]);
        if acc.len() != eg.len() {
            return Err(shape_mismatch(acc.len(), eg.len()));
        }
        for ((a, x), y) in acc.iter_mut().zip(&ec).zip(&eg) {
            *a += x - y;
        }
    }
    let n = gray_captions.len();
    let vector = sum
        .expect("at least one pair")
        .into_iter()
        .map(|v| v / n as f64)
        .collect();
    Ok(EmbeddingDirection { vector, count: n })
}

/// A completion request built from [`REPHRASE_TEMPLATE`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RephraseRequest {
    pub caption: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl RephraseRequest {
    pub fn new(caption: &str) -> Self {
        Self {
            caption: caption.into(),
            prompt: REPHRASE_TEMPLATE.replace("{CAPTION}", caption),
            temperature: 0.1,
            max_tokens: 500,
        }
    }
}

/// Text-in, text-out access to an external language model.
pub trait RephraseClient: Send + Sync {
    fn complete(&self, request: &RephraseRequest) -> Result<String>;
}

/// Returns the caption unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoClient;

impl RephraseClient for EchoClient {
    fn complete(&self, request: &RephraseRequest) -> Result<String> {
        Ok(request.caption.clone())
    }
}

/// Always fails, as a client without network access would.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnavailableClient;

impl RephraseClient for UnavailableClient {
    fn complete(&self, _: &RephraseRequest) -> Result<String> {
        Err(Error::External("rephrasing service unavailable".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rephrased {
    pub text: String,
    /// True when the client failed and hint stripping was used instead.
    pub fell_back: bool,
    pub failure: Option<String>,
}

pub fn rephrase_external(caption: &str, client: &dyn RephraseClient, phrases: &PhraseList) -> Rephrased {
    if caption.trim().is_empty() {
        return Rephrased {
            text: String::new(),
            fell_back: false,
            failure: None,
        };
    }
    let failure = match client.complete(&RephraseRequest::new(caption)) {
        Ok(text) if !text.trim().is_empty() => {
            return Rephrased {
                text: normalize_whitespace(&text),
                fell_back: false,
                failure: None,
            }
        }
        Ok(_) => "empty completion".to_string(),
        Err(e) => e.to_string(),
    };
    log::warn!("rephrasing failed ({failure}); stripping grayscale hints instead");
    Rephrased {
        text: strip_grayscale_hints(caption, phrases),
        fell_back: true,
        failure: Some(failure),
    }
}

/// Builds the bundle for a strategy from an automatic caption of the gray
/// input. Strategies other than the default use the null negative prompt.
pub fn bundle_for(
    strategy: PromptStrategy,
    caption: &str,
    phrases: &PhraseList,
    direction: Option<&EmbeddingDirection>,
    client: Option<&dyn RephraseClient>,
) -> Result<PromptBundle> {
    let bundle = |positive: String, direction: Option<EmbeddingDirection>| PromptBundle {
        positive,
        negative: String::new(),
        strategy,
        direction,
    };
    Ok(match strategy {
        PromptStrategy::NullNegative => default_bundle(),
        PromptStrategy::HintStrip => bundle(strip_grayscale_hints(caption, phrases), None),
        PromptStrategy::EmbeddingDirection => {
            let d = direction
                .ok_or_else(|| Error::InvalidInput("embedding-direction strategy needs a direction".into()))?;
            bundle(caption.trim().to_string(), Some(d.clone()))
        }
        PromptStrategy::ExternalRephrase => {
            let client = client.unwrap_or(&UnavailableClient);
            bundle(rephrase_external(caption, client, phrases).text, None)
        }
    })
}

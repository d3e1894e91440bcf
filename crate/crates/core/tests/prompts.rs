use colorize_core::embed::{cosine, JointEmbedder, JointEmbedderConfig, JointTrainConfig};
use colorize_core::prompts::{
    bundle_for, compute_color_direction, default_bundle, rephrase_external, strip_grayscale_hints, EchoClient,
    PhraseList, PromptStrategy, TextEmbedder, UnavailableClient,
};
use colorize_core::toy::{toy_scenes, ToyConfig};
use colorize_core::Result;
use proptest::prelude::*;

/// Deterministic bag-of-characters embedding; linear enough to check the
/// direction arithmetic by hand.
struct CharCounts;

impl TextEmbedder for CharCounts {
    fn embed_caption(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; 4];
        for (i, ch) in text.chars().enumerate() {
            v[(ch as usize) % 4] += 1.0 + (i % 3) as f64;
        }
        Ok(v)
    }
}

const PIECES: [&str; 12] = [
    "a",
    "photo",
    "black and white",
    "Grayscale",
    "B&W",
    "dog",
    ",",
    "monochrome",
    "old",
    "of",
    "  ",
    "sepia",
];

fn caption() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(PIECES.to_vec()), 0..10).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stripping_is_idempotent(c in caption()) {
        let p = PhraseList::default_list();
        let once = strip_grayscale_hints(&c, &p);
        prop_assert_eq!(strip_grayscale_hints(&once, &p), once.clone());
        let lower = once.to_lowercase();
        prop_assert!(!lower.contains("grayscale") && !lower.contains("black and white"));
    }

    #[test]
    fn direction_of_concatenation_is_weighted_mean(
        a in proptest::collection::vec((caption(), caption()), 1..6),
        b in proptest::collection::vec((caption(), caption()), 1..6),
    ) {
        let split = |v: &[(String, String)]| -> (Vec<String>, Vec<String>) { v.iter().cloned().unzip() };
        let (ga, ca) = split(&a);
        let (gb, cb) = split(&b);
        let da = compute_color_direction(&ga, &ca, &CharCounts).unwrap();
        let db = compute_color_direction(&gb, &cb, &CharCounts).unwrap();
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let (g, c) = split(&all);
        let d = compute_color_direction(&g, &c, &CharCounts).unwrap();
        prop_assert_eq!(d.count, da.count + db.count);
        let (na, nb) = (da.count as f64, db.count as f64);
        for ((x, y), z) in da.vector.iter().zip(&db.vector).zip(&d.vector) {
            let want = (na * x + nb * y) / (na + nb);
            prop_assert!((z - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn default_bundle_is_constant() {
    let a = default_bundle();
    assert_eq!(a, default_bundle());
    assert_eq!(a.strategy.name(), "null+negative");
    assert!(a.positive.is_empty());
    assert_eq!(
        a.negative,
        "grainy black-and-white photo, photo taken on an old box camera, grayscale photography"
    );
}

#[test]
fn rephrasing_contract() {
    let p = PhraseList::default_list();
    let caption = "a black and white photo of a dog";
    let down = rephrase_external(caption, &UnavailableClient, &p);
    assert!(down.fell_back);
    assert_eq!(down.text, strip_grayscale_hints(caption, &p));
    assert_eq!(rephrase_external("", &UnavailableClient, &p).text, "");
    assert_eq!(rephrase_external("a dog", &EchoClient, &p).text, "a dog");
    let b = bundle_for(PromptStrategy::HintStrip, caption, &p, None, None).unwrap();
    assert_eq!((b.positive.as_str(), b.negative.as_str()), ("a photo of a dog", ""));
    assert!(bundle_for(PromptStrategy::EmbeddingDirection, caption, &p, None, None).is_err());
}

#[test]
fn learned_direction_moves_gray_captions_toward_color_captions() {
    let scenes = toy_scenes(140, &ToyConfig::default()).unwrap();
    let (train, held) = scenes.split_at(100);
    let mut embedder = JointEmbedder::new(JointEmbedderConfig::default(), 1).unwrap();
    let images: Vec<_> = train.iter().map(|(s, _)| s.image.clone()).collect();
    let captions: Vec<_> = train.iter().map(|(s, _)| s.caption.clone()).collect();
    let cfg = JointTrainConfig {
        steps: 60,
        ..JointTrainConfig::default()
    };
    embedder.train(&images, &captions, &cfg).unwrap();

    let gray: Vec<String> = train.iter().map(|(_, spec)| spec.gray_caption()).collect();
    let direction = compute_color_direction(&gray, &captions, &embedder).unwrap();
    let (mut before, mut after) = (0.0, 0.0);
    for (s, spec) in held {
        let g = embedder.embed_caption(&spec.gray_caption()).unwrap();
        let c = embedder.embed_caption(&s.caption).unwrap();
        let shifted: Vec<f64> = g.iter().zip(&direction.vector).map(|(a, d)| a + d).collect();
        before += cosine(&g, &c);
        after += cosine(&shifted, &c);
    }
    assert!(after > before, "{after} <= {before}");
}

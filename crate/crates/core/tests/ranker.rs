use colorize_core::colorspace::{colorfulness, to_grayscale};
use colorize_core::embed::{ColorStatsFeaturizer, ImageEmbedder};
use colorize_core::latent_codec::{color_latent, CodecBackend};
use colorize_core::ranker::{
    pairwise_accuracy, rank_scales, rank_scales_with, score, train_ranker, RankerModel, RankerTrainConfig, DEFAULT_GRID,
};
use colorize_core::sampler::scale_color;
use colorize_core::toy::{toy_images, toy_preference_pairs};
use proptest::prelude::*;

const TARGET_CLR: f64 = 40.0;

fn residual_for(seed: u64) -> (colorize_core::LatentGrid, colorize_core::ColorResidual) {
    let img = toy_images(1, 16, seed).unwrap().remove(0);
    let codec = CodecBackend::Identity;
    let z_gray = codec.encode_gray(&to_grayscale(&img)).unwrap();
    let delta = color_latent(&codec.encode(&img).unwrap(), &z_gray).unwrap();
    (z_gray, delta)
}

#[test]
fn synthetic_preferences_generalize() {
    let f = ColorStatsFeaturizer;
    let train = toy_preference_pairs(300, 16, TARGET_CLR, 1).unwrap();
    let held = toy_preference_pairs(200, 16, TARGET_CLR, 2).unwrap();
    let model = train_ranker(&train, &f, &RankerTrainConfig::default()).unwrap();
    let zero = RankerModel::new(vec![0.0; model.weights.len()], 0.0, f.id(), DEFAULT_GRID.to_vec()).unwrap();
    let train_acc = pairwise_accuracy(&model, &train, &f).unwrap();
    assert!(train_acc >= 0.5 && train_acc >= pairwise_accuracy(&zero, &train, &f).unwrap());
    let acc = pairwise_accuracy(&model, &held, &f).unwrap();
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}

#[test]
fn flipped_labels_flip_the_ordering() {
    let f = ColorStatsFeaturizer;
    let train = toy_preference_pairs(120, 16, TARGET_CLR, 3).unwrap();
    let flipped: Vec<_> = train.iter().map(|p| p.flipped()).collect();
    let cfg = RankerTrainConfig::default();
    let a = train_ranker(&train, &f, &cfg).unwrap();
    let b = train_ranker(&flipped, &f, &cfg).unwrap();
    for (x, y) in a.weights.iter().zip(&b.weights) {
        assert!((x + y).abs() <= 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
    }
    for p in toy_preference_pairs(40, 16, TARGET_CLR, 4).unwrap() {
        let da = score(&p.a, &a, &f).unwrap() - score(&p.b, &a, &f).unwrap();
        let db = score(&p.a, &b, &f).unwrap() - score(&p.b, &b, &f).unwrap();
        if da.abs() > 1e-9 {
            assert!(da * db < 0.0);
        }
    }
}

#[test]
fn tie_rules_and_monotone_scorer() {
    let grid = [0.9, 0.7, 1.2];
    let (z_gray, delta) = residual_for(5);
    let codec = CodecBackend::Identity;
    let render = |s: f64| codec.decode(&scale_color(&z_gray, &delta, s)?);
    let constant = rank_scales_with(&grid, render, |_| Ok(1.0)).unwrap();
    assert_eq!(constant.best_scale, 0.7);
    let vivid = rank_scales_with(&DEFAULT_GRID, render, |img| Ok(colorfulness(img))).unwrap();
    assert_eq!(vivid.best_scale, 1.4);
    let single = rank_scales_with(&[1.1], render, |_| Ok(0.0)).unwrap();
    assert_eq!(single.best_scale, 1.1);
}

#[test]
fn ranking_is_deterministic() {
    let f = ColorStatsFeaturizer;
    let model = train_ranker(
        &toy_preference_pairs(60, 16, TARGET_CLR, 6).unwrap(),
        &f,
        &RankerTrainConfig::default(),
    )
    .unwrap();
    let (z_gray, delta) = residual_for(7);
    let codec = CodecBackend::Identity;
    let a = rank_scales(&z_gray, &delta, &model, &f, &codec).unwrap();
    let b = rank_scales(&z_gray, &delta, &model, &f, &codec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.scored.len(), DEFAULT_GRID.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bias_shift_never_changes_the_choice(
        weights in proptest::collection::vec(-5.0f64..5.0, ColorStatsFeaturizer::DIM),
        bias in -1e3f64..1e3,
        shift in -1e6f64..1e6,
        seed in 0u64..50,
    ) {
        let f = ColorStatsFeaturizer;
        let (z_gray, delta) = residual_for(seed);
        let codec = CodecBackend::Identity;
        let base = RankerModel::new(weights.clone(), bias, f.id(), DEFAULT_GRID.to_vec()).unwrap();
        let moved = RankerModel::new(weights, bias + shift, f.id(), DEFAULT_GRID.to_vec()).unwrap();
        let a = rank_scales(&z_gray, &delta, &base, &f, &codec).unwrap();
        let b = rank_scales(&z_gray, &delta, &moved, &f, &codec).unwrap();
        prop_assert_eq!(a.best_scale, b.best_scale);
    }
}

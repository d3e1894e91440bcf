use colorize_core::colorspace::{mean_saturation, rgb_to_hsv, scale_chroma, to_grayscale, to_lab, RgbImage};
use colorize_core::denoiser::{Denoiser, DenoiserConfig};
use colorize_core::enhance::{contact_sheet, enhance_grid, saturation_baseline, EnhanceConfig};
use colorize_core::latent_codec::CodecBackend;
use colorize_core::sampler::{colorize, SamplerConfig};
use colorize_core::toy::toy_images;
use proptest::prelude::*;

fn model() -> Denoiser {
    let cfg = DenoiserConfig {
        zero_init_head: false,
        ..DenoiserConfig::tiny(3)
    };
    Denoiser::new(cfg, 21).unwrap()
}

fn faded() -> RgbImage {
    scale_chroma(&toy_images(1, 16, 40).unwrap()[0], 0.2).unwrap()
}

fn sampler() -> SamplerConfig {
    SamplerConfig {
        steps: 4,
        ..SamplerConfig::default()
    }
}

#[test]
fn zero_seed_zero_start_is_plain_colorization() {
    let (m, codec, img) = (model(), CodecBackend::Identity, faded());
    let cfg = EnhanceConfig {
        chroma_seeds: vec![0.0],
        start_steps: vec![0],
        sampler: sampler(),
    };
    let grid = enhance_grid(&img, &cfg, &m, &codec).unwrap();
    assert_eq!(grid.cells.len(), 1);
    let plain = colorize(&to_grayscale(&img), &sampler(), &m, &codec).unwrap();
    assert_eq!(grid.cells[0].outcome.as_ref().unwrap(), &plain.image);
}

#[test]
fn default_grid_is_four_by_four_and_keeps_lightness() {
    let (m, codec, img) = (model(), CodecBackend::Identity, faded());
    let cfg = EnhanceConfig {
        sampler: sampler(),
        ..EnhanceConfig::default()
    };
    let grid = enhance_grid(&img, &cfg, &m, &codec).unwrap();
    assert_eq!((grid.rows, grid.cols, grid.cells.len()), (4, 4, 16));
    let source = to_lab(&to_grayscale(&img).to_rgb());
    for (i, cell) in grid.cells.iter().enumerate() {
        assert_eq!((cell.row, cell.col), (i / 4, i % 4));
        assert_eq!(cell.seed, cfg.chroma_seeds[cell.row]);
        assert_eq!(cell.start, cfg.start_steps[cell.col]);
        let out = to_lab(cell.outcome.as_ref().unwrap());
        let err = out
            .l
            .iter()
            .zip(&source.l)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "cell {i}: {err}");
    }
    let sheet = contact_sheet(&grid, 2).unwrap();
    assert_eq!(sheet.dims(), (4 * 16 + 5 * 2, 4 * 16 + 5 * 2));
}

#[test]
fn start_beyond_schedule_is_rejected() {
    let cfg = EnhanceConfig {
        start_steps: vec![5],
        sampler: sampler(),
        ..EnhanceConfig::default()
    };
    assert!(enhance_grid(&faded(), &cfg, &model(), &CodecBackend::Identity).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn saturation_baseline_keeps_hue_and_value(
        data in proptest::collection::vec(0.05f32..=1.0, 6 * 5 * 3),
        target in 0.0f64..=1.0,
    ) {
        let img = RgbImage::new(6, 5, data).unwrap();
        let out = saturation_baseline(&img, target).unwrap();
        if !out.unreachable {
            prop_assert!((mean_saturation(&out.image) - target).abs() < 1e-3);
        }
        for (p, q) in img.pixels().zip(out.image.pixels()) {
            let (a, b) = (rgb_to_hsv(p.map(f64::from)), rgb_to_hsv(q.map(f64::from)));
            prop_assert!((a[2] - b[2]).abs() < 1e-6);
            if a[1] > 1e-3 && b[1] > 1e-3 {
                let d = (a[0] - b[0]).abs();
                prop_assert!(d.min(360.0 - d) < 1e-3, "{a:?} {b:?}");
            }
        }
    }
}

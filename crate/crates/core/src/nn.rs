//! Shared candle plumbing: deterministic initialization, checkpoints, and a
//! few layers candle-nn does not provide in the shape we need.

use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, VarBuilder, VarMap};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Re-draws every randomly initialized variable from a seeded RNG.
///
/// candle's CPU initializers are not seedable. Variables that are constant
/// (zero biases, unit norm scales, zero-initialized heads) are left alone.
/// Matrices and kernels are redrawn uniformly in `±1/√fan_in`, where fan-in
/// is the product of all but the leading dimension; randomly initialized
/// vectors are set to zero.
pub fn reinit_seeded(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = StdRng::seed_from_u64(seed);
    for name in names {
        let var = &data[name];
        let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let first = values.first().copied().unwrap_or(0.0);
        if values.iter().all(|&v| v == first) {
            continue;
        }
        let dims = var.dims();
        let fresh: Vec<f64> = if dims.len() < 2 {
            vec![0.0; values.len()]
        } else {
            let fan_in: usize = dims[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..values.len()).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let t = Tensor::from_vec(fresh, var.shape(), var.device())?.to_dtype(var.dtype())?;
        var.set(&t)?;
    }
    Ok(())
}

pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("safetensors"), stem.with_extension("json"))
}

/// Writes `<stem>.safetensors` with the weights and `<stem>.json` with the
/// sidecar metadata.
pub fn save_checkpoint<M: Serialize>(varmap: &VarMap, stem: &Path, meta: &M) -> Result<()> {
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let (weights, sidecar) = checkpoint_paths(stem);
    varmap.save(&weights)?;
    std::fs::write(sidecar, serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn read_sidecar<M: DeserializeOwned>(stem: &Path) -> Result<M> {
    let (_, sidecar) = checkpoint_paths(stem);
    let bytes = std::fs::read(&sidecar).map_err(|e| Error::Checkpoint(format!("{}: {e}", sidecar.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn load_weights(varmap: &mut VarMap, stem: &Path) -> Result<()> {
    let (weights, _) = checkpoint_paths(stem);
    varmap
        .load(&weights)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", weights.display())))
}

pub fn conv3x3(cin: usize, cout: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        stride,
        ..Default::default()
    };
    candle_nn::conv2d(cin, cout, 3, cfg, vb)
}

pub fn conv1x1(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    candle_nn::conv2d(cin, cout, 1, Conv2dConfig::default(), vb)
}

/// A 3×3 convolution whose weight and bias start at zero.
pub fn zero_conv3x3(cin: usize, cout: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    let w = vb.get_with_hints((cout, cin, 3, 3), "weight", candle_nn::Init::Const(0.0))?;
    let b = vb.get_with_hints(cout, "bias", candle_nn::Init::Const(0.0))?;
    Ok(Conv2d::new(
        w,
        Some(b),
        Conv2dConfig {
            padding: 1,
            ..Default::default()
        },
    ))
}

pub fn upsample2(x: &Tensor) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    x.upsample_nearest2d(h * 2, w * 2)
}

pub fn silu(x: &Tensor) -> candle_core::Result<Tensor> {
    x.silu()
}

/// Softmax over the last dimension built from differentiable primitives.
pub fn softmax_last(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::softmax(x, D::Minus1)
}

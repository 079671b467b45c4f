#![allow(dead_code)]

use dpn::config::{EncoderArch, RenderConfig, TrainConfig};
use dpn::env::{collect_random, Dataset, EnvKind};
use dpn::model::DpnParams;
use dpn::networks::ModelDims;
use dpn::training::Segment;
use dpn_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 6x6 grayscale observations, 2 conv layers of 4 filters, T = 2, n_p = 2,
/// two-dimensional latent actions.
pub fn micro_config() -> TrainConfig {
    TrainConfig {
        segment_len: 2,
        plan_steps: 2,
        z_dim: Some(2),
        encoder: EncoderArch {
            filters: vec![4, 4],
            strides: vec![1, 1],
            ..EncoderArch::default()
        },
        ..TrainConfig::default()
    }
}

pub fn micro_dims() -> ModelDims {
    ModelDims {
        channels: 1,
        height: 6,
        width: 6,
        action_dim: 2,
    }
}

pub fn micro_render() -> RenderConfig {
    RenderConfig {
        height: 6,
        width: 6,
        blob_radius: 1.0,
        ..RenderConfig::default()
    }
}

pub fn micro_params(seed: u64) -> DpnParams {
    DpnParams::new(micro_dims(), &micro_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn micro_segment(seed: u64) -> Segment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Segment {
        episode: 0,
        start: 0,
        start_obs: random_tensor(&mut rng, &[1, 6, 6], 0.0, 1.0),
        actions: random_tensor(&mut rng, &[3, 2], -1.0, 1.0),
        goal_obs: random_tensor(&mut rng, &[1, 6, 6], 0.0, 1.0),
    }
}

pub fn small_dataset(episodes: usize, horizon: usize, seed: u64) -> Dataset {
    collect_random(EnvKind::PointMass, episodes, horizon, &RenderConfig::default(), seed).unwrap()
}

/// Central difference with step 1e-5 agrees within relative 1e-4 or
/// absolute 1e-7.
pub fn fd_close(analytic: f64, fd: f64) -> bool {
    let diff = (analytic - fd).abs();
    diff <= 1e-7 || diff <= 1e-4 * analytic.abs().max(fd.abs())
}

/// Compares `grads` against central differences of `f` over every entry
/// of every tensor in `values`; returns the first disagreement.
pub fn check_gradients(
    values: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Result<usize, String> {
    const STEP: f64 = 1e-5;
    let mut checked = 0;
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + STEP;
            let plus = f(values);
            values[i].data_mut()[j] = orig - STEP;
            let minus = f(values);
            values[i].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * STEP);
            let an = grads[i].data()[j];
            if !fd_close(an, fd) {
                return Err(format!("{}[{j}]: analytic {an} vs finite difference {fd}", names[i]));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Finite-difference check of `loss` against every parameter in `store`.
pub fn check_store_gradients(
    store: &dpn::params::ParamStore,
    loss: impl Fn(&dpn_tensor::Graph, &dpn::params::Bound) -> dpn_tensor::Var,
) -> Result<usize, String> {
    let g = dpn_tensor::Graph::new();
    let p = store.bind(&g);
    let out = loss(&g, &p);
    let grads = g.grad_values(out, p.vars()).map_err(|e| e.to_string())?;
    let mut work = store.clone();
    let mut values = store.values().to_vec();
    check_gradients(&mut values, &grads, store.names(), |vals| {
        work.values_mut().clone_from_slice(vals);
        let g = dpn_tensor::Graph::new();
        let p = work.bind(&g);
        let out = loss(&g, &p);
        g.item(out)
    })
}

//! Variational DPN training, Adam, segment sampling and the baseline
//! trainers.

use std::f64::consts::PI;

use dpn_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::env::Dataset;
use crate::error::{DpnError, Result};
use crate::model::{DpnParams, InverseModel, UpnParams, VaeModel};
use crate::networks::{kl_standard_normal, sample_latents, ModelDims};
use crate::params::{Bound, ParamStore};
use crate::planner::{dpn_forward, normal_noise, uniform_actions, upn_forward_deterministic};

/// `(o_t, a_{t:t+T}, o_{t+T+1})` from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub episode: usize,
    pub start: usize,
    pub start_obs: Tensor,
    /// `[T+1, action_dim]`.
    pub actions: Tensor,
    pub goal_obs: Tensor,
}

/// Uniform over the episodes that hold at least `T + 1` actions, then
/// uniform over the valid start indices of the chosen episode.
pub fn sample_segment(ds: &Dataset, t: usize, rng: &mut impl Rng) -> Result<Segment> {
    let eligible = eligible_episodes(ds, t)?;
    let episode = eligible[rng.random_range(0..eligible.len())];
    let start = rng.random_range(0..=ds.episode_len(episode) - (t + 1));
    Ok(Segment {
        episode,
        start,
        start_obs: ds.observation(episode, start),
        actions: ds.actions(episode, start, t + 1),
        goal_obs: ds.observation(episode, start + t + 1),
    })
}

/// Episodes long enough for a `T = t` segment; errors when there are none.
pub fn eligible_episodes(ds: &Dataset, t: usize) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..ds.episodes.len()).filter(|&e| ds.episode_len(e) > t).collect();
    if eligible.is_empty() {
        return Err(DpnError::Config(format!(
            "no episode has the {} observations a T = {t} segment needs",
            t + 2
        )));
    }
    Ok(eligible)
}

pub fn model_dims(ds: &Dataset) -> ModelDims {
    ModelDims {
        channels: ds.channels,
        height: ds.height,
        width: ds.width,
        action_dim: ds.action_dim,
    }
}

/// `-log N(a; â, I)` summed over all entries.
pub fn gaussian_nll(g: &Graph, actions: Var, predicted: Var) -> Result<Var> {
    let (sa, sp) = (g.shape(actions), g.shape(predicted));
    if sa != sp {
        return Err(DpnError::shape("predicted actions", &sa, &sp));
    }
    let d = sa.iter().product::<usize>() as f64;
    let sq = g.sum(g.square(g.sub(actions, predicted)?));
    Ok(g.add_const(g.scale(sq, 0.5), 0.5 * d * (2.0 * PI).ln()))
}

#[derive(Debug, Clone, Copy)]
pub struct DpnLoss {
    pub total: Var,
    pub nll: Var,
    pub kl: Var,
}

/// Single-sample estimate of `-E_q[log p(a | o_t, o_goal)] + β KL(q || p)`.
pub fn dpn_loss(g: &Graph, params: &DpnParams, p: &Bound, seg: &Segment, beta: f64, noise: &Tensor) -> Result<DpnLoss> {
    let actions = g.constant(seg.actions.clone());
    let post = params.inference.infer(g, p, actions)?;
    let z = sample_latents(g, &post, g.constant(noise.clone()))?;
    let out = dpn_forward(g, params, p, g.constant(seg.start_obs.clone()), g.constant(seg.goal_obs.clone()), z)?;
    let nll = gaussian_nll(g, actions, out.predicted_actions)?;
    let kl = kl_standard_normal(g, post.means, post.stds)?;
    let total = g.add(nll, g.scale(kl, beta))?;
    Ok(DpnLoss { total, nll, kl })
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub parts: [f64; 2],
}

/// Batch-mean losses per iteration, with the names of the two components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    pub columns: [&'static str; 2],
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    /// Means of the total loss over the first and the last `frac` of the run.
    pub fn head_tail_means(&self, frac: f64) -> (f64, f64) {
        let n = self.records.len();
        let k = ((n as f64 * frac).round() as usize).clamp(1, n.max(1));
        let mean = |r: &[LossRecord]| r.iter().map(|r| r.total).sum::<f64>() / r.len() as f64;
        (mean(&self.records[..k]), mean(&self.records[n - k..]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("iteration,total,{},{}\n", self.columns[0], self.columns[1]);
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.iteration, r.total, r.parts[0], r.parts[1]));
        }
        s
    }
}

struct SampleLoss {
    total: Var,
    parts: [Var; 2],
}

/// Shared loop: per-sample graphs, gradients summed in sample order, one
/// Adam step on the batch mean.
fn optimize<F>(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    columns: [&'static str; 2],
    mut sample: F,
) -> Result<LossHistory>
where
    F: FnMut(&Graph, &Bound, &mut ChaCha8Rng) -> Result<SampleLoss>,
{
    if cfg.batch_size == 0 {
        return Err(DpnError::Config("batch_size must be at least 1".into()));
    }
    let mut adam = Adam::new(store, cfg.learning_rate);
    let mut records = Vec::with_capacity(cfg.iterations);
    let scale = 1.0 / cfg.batch_size as f64;
    for iteration in 0..cfg.iterations {
        let mut grads: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let mut sums = [0.0; 3];
        for _ in 0..cfg.batch_size {
            let g = Graph::new();
            let p = store.bind(&g);
            let loss = sample(&g, &p, rng)?;
            let total = g.item(loss.total);
            if !total.is_finite() {
                return Err(non_finite(iteration, store, format!("loss {total}")));
            }
            for (acc, gr) in grads.iter_mut().zip(g.grad_values(loss.total, p.vars())?) {
                for (a, b) in acc.data_mut().iter_mut().zip(gr.data()) {
                    *a += b;
                }
            }
            sums[0] += total;
            sums[1] += g.item(loss.parts[0]);
            sums[2] += g.item(loss.parts[1]);
        }
        for gr in &mut grads {
            gr.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
            return Err(non_finite(iteration, store, format!("gradient of `{}`", store.names()[i])));
        }
        adam.step(store.values_mut(), &grads);
        records.push(LossRecord {
            iteration,
            total: sums[0] * scale,
            parts: [sums[1] * scale, sums[2] * scale],
        });
    }
    Ok(LossHistory { columns, records })
}

fn non_finite(iteration: usize, store: &ParamStore, what: String) -> DpnError {
    let norms: Vec<String> = store
        .iter()
        .map(|(n, t)| format!("{n}={:.3e}", t.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    DpnError::NonFinite {
        iteration,
        detail: format!("{what}; parameter norms: {}", norms.join(" ")),
    }
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(1);
    (init, sampler)
}

fn check_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.segment_len == 0 {
        return Err(DpnError::Config("segment_len must be at least 1".into()));
    }
    if !(cfg.beta >= 0.0) || !(cfg.learning_rate > 0.0) {
        return Err(DpnError::Config("beta must be nonnegative and learning_rate positive".into()));
    }
    Ok(())
}

pub fn train_dpn(ds: &Dataset, cfg: &TrainConfig) -> Result<(DpnParams, LossHistory)> {
    check_config(cfg)?;
    let (mut init, mut sampler) = rngs(cfg.seed);
    let mut params = DpnParams::new(model_dims(ds), cfg, &mut init)?;
    eligible_episodes(ds, cfg.segment_len)?;
    let mut store = std::mem::take(&mut params.store);
    let rows = cfg.segment_len + 1;
    let history = optimize(&mut store, cfg, &mut sampler, ["nll", "kl"], |g, p, rng| {
        let seg = sample_segment(ds, cfg.segment_len, rng)?;
        let noise = normal_noise(rng, rows, params.z_dim);
        let loss = dpn_loss(g, &params, p, &seg, cfg.beta, &noise)?;
        Ok(SampleLoss {
            total: loss.total,
            parts: [loss.nll, loss.kl],
        })
    });
    params.store = store;
    Ok((params, history?))
}

/// Mean of squared entries of `a - b`.
fn mse(g: &Graph, a: Var, b: Var) -> Result<Var> {
    Ok(g.mean(g.square(g.sub(a, b)?)))
}

/// `½‖o − ô‖² + KL` on single random frames.
pub fn train_vae(ds: &Dataset, cfg: &TrainConfig) -> Result<(VaeModel, LossHistory)> {
    check_config(cfg)?;
    let (mut init, mut sampler) = rngs(cfg.seed);
    let mut model = VaeModel::new(model_dims(ds), cfg, &mut init)?;
    let mut store = std::mem::take(&mut model.store);
    let history = optimize(&mut store, cfg, &mut sampler, ["recon", "kl"], |g, p, rng| {
        let e = rng.random_range(0..ds.episodes.len());
        let t = rng.random_range(0..=ds.episode_len(e));
        let obs = g.constant(ds.observation(e, t));
        let noise = g.constant(normal_noise(rng, 1, model.net.latent_dim));
        let (_, recon, kl) = model.net.forward(g, p, obs, noise)?;
        let recon_loss = g.scale(g.sum(g.square(g.sub(recon, obs)?)), 0.5);
        Ok(SampleLoss {
            total: g.add(recon_loss, kl)?,
            parts: [recon_loss, kl],
        })
    });
    model.store = store;
    Ok((model, history?))
}

/// Action MSE plus `forward_weight` times the forward-consistency MSE on
/// one-step transitions.
pub fn inverse_loss(g: &Graph, model: &InverseModel, p: &Bound, obs: &Tensor, obs_next: &Tensor, action: &Tensor, forward_weight: f64) -> Result<[Var; 3]> {
    let a = g.constant(action.clone());
    let out = model.net.forward(g, p, g.constant(obs.clone()), g.constant(obs_next.clone()), a)?;
    let action_loss = mse(g, out.predicted_action, a)?;
    let forward_loss = mse(g, out.predicted_next_embedding, out.embedding_next)?;
    let total = g.add(action_loss, g.scale(forward_loss, forward_weight))?;
    Ok([total, action_loss, forward_loss])
}

pub fn train_inverse(ds: &Dataset, cfg: &TrainConfig) -> Result<(InverseModel, LossHistory)> {
    check_config(cfg)?;
    let (mut init, mut sampler) = rngs(cfg.seed);
    let mut model = InverseModel::new(model_dims(ds), cfg, &mut init)?;
    eligible_episodes(ds, 0)?;
    let mut store = std::mem::take(&mut model.store);
    let history = optimize(&mut store, cfg, &mut sampler, ["action", "forward"], |g, p, rng| {
        let seg = sample_segment(ds, 0, rng)?;
        // T = 0 segment: exactly one transition.
        let [total, a, f] = inverse_loss(g, &model, p, &seg.start_obs, &seg.goal_obs, &seg.actions, cfg.forward_weight)?;
        Ok(SampleLoss { total, parts: [a, f] })
    });
    model.store = store;
    Ok((model, history?))
}

/// Deterministic planner over raw actions, trained to imitate the executed
/// random actions.
pub fn train_upn(ds: &Dataset, cfg: &TrainConfig) -> Result<(UpnParams, LossHistory)> {
    check_config(cfg)?;
    let (mut init, mut sampler) = rngs(cfg.seed);
    let mut params = UpnParams::new(model_dims(ds), cfg, &mut init)?;
    eligible_episodes(ds, cfg.segment_len)?;
    let mut store = std::mem::take(&mut params.store);
    let rows = cfg.segment_len + 1;
    let history = optimize(&mut store, cfg, &mut sampler, ["imitation", "plan"], |g, p, rng| {
        let seg = sample_segment(ds, cfg.segment_len, rng)?;
        let init = g.constant(uniform_actions(rng, rows, ds.action_dim));
        let (actions, plan) = upn_forward_deterministic(
            g,
            &params,
            p,
            g.constant(seg.start_obs.clone()),
            g.constant(seg.goal_obs.clone()),
            init,
        )?;
        let imitation = mse(g, actions, g.constant(seg.actions.clone()))?;
        let final_plan = *plan.losses.last().expect("at least one loss");
        Ok(SampleLoss {
            total: imitation,
            parts: [imitation, g.detach(final_plan)],
        })
    });
    params.store = store;
    Ok((params, history?))
}

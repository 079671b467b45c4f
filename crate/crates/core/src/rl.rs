//! Compact soft actor-critic against a metric-derived reward, policy
//! evaluation and a scripted reference controller.

use std::f64::consts::{LN_2, PI};
use std::rc::Rc;

use dpn_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{RenderConfig, RlConfig};
use crate::env::{episode_rng, render, true_distance, wrap_angle, EnvKind, EnvState, POINTMASS_STEP, REACHER_STEP};
use crate::error::{DpnError, Result};
use crate::metric::{GoalReward, Metric};
use crate::networks::{Activation, Mlp};
use crate::params::{Bound, ParamStore};
use crate::training::Adam;

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

pub trait Policy {
    fn act(&self, state: &EnvState) -> [f64; 2];
}

/// Proportional controller that steers straight at the goal; it sees the
/// goal state, so it is only a harness check.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedController {
    pub goal: EnvState,
}

impl Policy for ScriptedController {
    fn act(&self, state: &EnvState) -> [f64; 2] {
        match state.kind {
            EnvKind::PointMass => {
                let d = [self.goal.q[0] - state.q[0], self.goal.q[1] - state.q[1]];
                d.map(|v| (v / POINTMASS_STEP).clamp(-1.0, 1.0))
            }
            EnvKind::Reacher => {
                let d = [wrap_angle(self.goal.q[0] - state.q[0]), wrap_angle(self.goal.q[1] - state.q[1])];
                d.map(|v| (v / REACHER_STEP).clamp(-1.0, 1.0))
            }
        }
    }
}

/// States visited by `policy` from `start`, including the start.
pub fn rollout(policy: &dyn Policy, start: EnvState, horizon: usize, rng: &mut impl Rng) -> Vec<EnvState> {
    let mut states = vec![start];
    let mut s = start;
    for _ in 0..horizon {
        s = s.step(policy.act(&s));
        s.advance_distractor(rng);
        states.push(s);
    }
    states
}

/// Final true distance to `goal` for each of `episodes` rollouts from
/// random starts.
pub fn evaluate_policy(policy: &dyn Policy, env: EnvKind, goal: &EnvState, episodes: usize, horizon: usize, seed: u64) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|e| {
            let mut rng = episode_rng(seed, e as u64);
            let start = EnvState::random(env, &mut rng, false);
            let states = rollout(policy, start, horizon, &mut rng);
            true_distance(states.last().expect("rollout keeps the start"), goal)
        })
        .collect()
}

/// Seed of the evaluation rollouts after training with `seed`; kept apart
/// from the training streams.
pub fn evaluation_seed(seed: u64) -> u64 {
    !seed
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

fn rows(batch: &[&Transition], f: impl Fn(&Transition) -> &[f64]) -> Tensor {
    let width = f(batch[0]).len();
    let data = batch.iter().flat_map(|t| f(t).iter().copied()).collect();
    Tensor::new(vec![batch.len(), width], data).expect("uniform rows")
}

fn column(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::new(vec![n, 1], values).expect("shape matches data")
}

/// Squashed-Gaussian draw `a = tanh(μ + σ ε)` and `log π(a | s)` per row.
struct ActionSample {
    action: Var,
    log_prob: Var,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor_store: ParamStore,
    pub actor: Mlp,
    /// Both critics live in one store.
    pub critic_store: ParamStore,
    pub q1: Mlp,
    pub q2: Mlp,
    /// Polyak-averaged copy of `critic_store`.
    pub target_store: ParamStore,
    actor_opt: Adam,
    critic_opt: Adam,
    pub discount: f64,
    pub polyak: f64,
    pub entropy_coef: f64,
    pub batch_size: usize,
}

impl SacAgent {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &RlConfig, rng: &mut impl Rng) -> Result<Self> {
        if !(cfg.discount > 0.0 && cfg.discount < 1.0) {
            return Err(DpnError::Config(format!("discount must lie in (0, 1), got {}", cfg.discount)));
        }
        if !(0.0..=1.0).contains(&cfg.polyak) || cfg.batch_size == 0 || cfg.hidden == 0 {
            return Err(DpnError::Config("polyak must lie in [0, 1]; batch_size and hidden must be positive".into()));
        }
        let h = cfg.hidden;
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", &[state_dim, h, h, 2 * action_dim], Activation::Relu, rng);
        let mut critic_store = ParamStore::new();
        let q1 = Mlp::new(&mut critic_store, "q1", &[state_dim + action_dim, h, h, 1], Activation::Relu, rng);
        let q2 = Mlp::new(&mut critic_store, "q2", &[state_dim + action_dim, h, h, 1], Activation::Relu, rng);
        Ok(Self {
            state_dim,
            action_dim,
            actor_opt: Adam::new(&actor_store, cfg.learning_rate),
            critic_opt: Adam::new(&critic_store, cfg.learning_rate),
            target_store: critic_store.clone(),
            actor_store,
            actor,
            critic_store,
            q1,
            q2,
            discount: cfg.discount,
            polyak: cfg.polyak,
            entropy_coef: cfg.entropy_coef,
            batch_size: cfg.batch_size,
        })
    }

    fn actor_head(&self, g: &Graph, p: &Bound, states: Var) -> Result<(Var, Var)> {
        let out = self.actor.forward(g, p, states)?;
        let mean = g.slice_cols(out, 0, self.action_dim)?;
        let log_std = g.clamp(g.slice_cols(out, self.action_dim, self.action_dim)?, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std))
    }

    fn sample_action(&self, g: &Graph, p: &Bound, states: Var, noise: Tensor) -> Result<ActionSample> {
        let (mean, log_std) = self.actor_head(g, p, states)?;
        let eps = g.constant(noise);
        let u = g.add(mean, g.mul(g.exp(log_std), eps)?)?;
        let action = g.tanh(u);
        // log N(u; μ, σ) − Σ log(1 − tanh²u), the latter as 2(ln 2 − u − softplus(−2u)).
        let gauss = g.add_const(g.neg(g.add(g.scale(g.square(eps), 0.5), log_std)?), -0.5 * (2.0 * PI).ln());
        let squash = g.scale(g.add_const(g.neg(g.add(u, g.softplus(g.scale(u, -2.0)))?), LN_2), 2.0);
        let log_prob = g.sum_cols(g.sub(gauss, squash)?)?;
        let n = g.shape(log_prob)[0];
        Ok(ActionSample {
            action,
            log_prob: g.reshape(log_prob, &[n, 1])?,
        })
    }

    fn critic(&self, g: &Graph, p: &Bound, states: Var, actions: Var) -> Result<(Var, Var)> {
        let sa = g.concat_cols(states, actions)?;
        Ok((self.q1.forward(g, p, sa)?, self.q2.forward(g, p, sa)?))
    }

    fn noise(&self, rng: &mut impl Rng, n: usize) -> Tensor {
        let data = (0..n * self.action_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(vec![n, self.action_dim], data).expect("shape matches data")
    }

    /// Stochastic action for data collection.
    pub fn sample(&self, state: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let g = Graph::new();
        g.no_grad(|| {
            let s = g.constant(Tensor::new(vec![1, state.len()], state.to_vec())?);
            let a = self.sample_action(&g, &self.actor_store.bind_frozen(&g), s, self.noise(rng, 1))?;
            Ok(g.value(a.action).data().to_vec())
        })
    }

    /// Deterministic action `tanh(μ(s))`.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let g = Graph::new();
        g.no_grad(|| {
            let s = g.constant(Tensor::new(vec![1, state.len()], state.to_vec())?);
            let (mean, _) = self.actor_head(&g, &self.actor_store.bind_frozen(&g), s)?;
            Ok(g.value(g.tanh(mean)).data().to_vec())
        })
    }

    /// Online critic values `(Q1, Q2)` for one state-action pair.
    pub fn q_values(&self, state: &[f64], action: &[f64]) -> Result<(f64, f64)> {
        let g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, state.len()], state.to_vec())?);
        let a = g.constant(Tensor::new(vec![1, action.len()], action.to_vec())?);
        let (q1, q2) = self.critic(&g, &self.critic_store.bind_frozen(&g), s, a)?;
        Ok((g.item(q1), g.item(q2)))
    }

    /// One critic step, one actor step and one target update. Returns the
    /// critic and actor losses.
    pub fn update(&mut self, batch: &[&Transition], rng: &mut impl Rng) -> Result<(f64, f64)> {
        let n = batch.len();
        let states = rows(batch, |t| &t.state);
        let actions = rows(batch, |t| &t.action);
        let next = rows(batch, |t| &t.next_state);

        // Soft Bellman target from the target critics.
        let target = {
            let g = Graph::new();
            g.no_grad(|| -> Result<Vec<f64>> {
                let s2 = g.constant(next);
                let a2 = self.sample_action(&g, &self.actor_store.bind_frozen(&g), s2, self.noise(rng, n))?;
                let (t1, t2) = self.critic(&g, &self.target_store.bind_frozen(&g), s2, a2.action)?;
                let (t1, t2, lp) = (g.value(t1), g.value(t2), g.value(a2.log_prob));
                Ok(batch
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let soft = t1.data()[i].min(t2.data()[i]) - self.entropy_coef * lp.data()[i];
                        t.reward + if t.done { 0.0 } else { self.discount * soft }
                    })
                    .collect())
            })?
        };

        let critic_loss = {
            let g = Graph::new();
            let p = self.critic_store.bind(&g);
            let (q1, q2) = self.critic(&g, &p, g.constant(states.clone()), g.constant(actions))?;
            let y = g.constant(column(target));
            let l1 = g.mean(g.square(g.sub(q1, y)?));
            let l2 = g.mean(g.square(g.sub(q2, y)?));
            let loss = g.add(l1, l2)?;
            let grads = g.grad_values(loss, p.vars())?;
            check_finite("critic", g.item(loss), &grads)?;
            self.critic_opt.step(self.critic_store.values_mut(), &grads);
            g.item(loss)
        };

        let actor_loss = {
            let g = Graph::new();
            let p = self.actor_store.bind(&g);
            let s = g.constant(states);
            let a = self.sample_action(&g, &p, s, self.noise(rng, n))?;
            let (q1, q2) = self.critic(&g, &self.critic_store.bind_frozen(&g), s, a.action)?;
            let pick = Rc::new(Tensor::new(
                vec![n, 1],
                g.value(q1).data().iter().zip(g.value(q2).data()).map(|(a, b)| if a <= b { 1.0 } else { 0.0 }).collect(),
            )?);
            let other = Rc::new(pick.map(|v| 1.0 - v));
            let qmin = g.add(g.mul_const(q1, pick)?, g.mul_const(q2, other)?)?;
            let loss = g.mean(g.sub(g.scale(a.log_prob, self.entropy_coef), qmin)?);
            let grads = g.grad_values(loss, p.vars())?;
            check_finite("actor", g.item(loss), &grads)?;
            self.actor_opt.step(self.actor_store.values_mut(), &grads);
            g.item(loss)
        };

        self.update_target();
        Ok((critic_loss, actor_loss))
    }

    /// `target ← ρ·target + (1 − ρ)·online`.
    pub fn update_target(&mut self) {
        let rho = self.polyak;
        for (t, o) in self.target_store.values_mut().iter_mut().zip(self.critic_store.values()) {
            for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = rho * *tv + (1.0 - rho) * ov;
            }
        }
    }
}

fn check_finite(which: &str, loss: f64, grads: &[Tensor]) -> Result<()> {
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(DpnError::NonFinite {
            iteration: 0,
            detail: format!("{which} loss {loss} or its gradient is not finite"),
        });
    }
    Ok(())
}

/// Deterministic evaluation policy backed by an agent's mean action.
pub struct MeanPolicy<'a>(pub &'a SacAgent);

impl Policy for MeanPolicy<'_> {
    fn act(&self, state: &EnvState) -> [f64; 2] {
        let a = self.0.mean_action(&state.q).expect("state width matches the actor");
        [a[0], a[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted sum of (scaled) rewards.
    pub episode_return: f64,
    pub final_distance: f64,
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub agent: SacAgent,
    pub curve: Vec<EpisodeRecord>,
    /// Rewards that hit the overflow clamp.
    pub clamped_rewards: usize,
}

/// The goal state drawn from `goal_seed`.
pub fn goal_state(env: EnvKind, render_cfg: &RenderConfig, goal_seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(goal_seed);
    rng.set_stream(u64::MAX);
    EnvState::random(env, &mut rng, render_cfg.distractor)
}

/// Trains a policy on the true state whose only reward is the metric's
/// `-exp(L_δ)` between the rendered next observation and the goal image.
pub fn sac_train(metric: &Metric, goal: &EnvState, render_cfg: &RenderConfig, cfg: &RlConfig) -> Result<RlOutcome> {
    if cfg.horizon == 0 || cfg.episodes == 0 {
        return Err(DpnError::Config("horizon and episodes must be at least 1".into()));
    }
    let env = goal.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = SacAgent::new(env.state_dim(), env.action_dim(), cfg, &mut rng)?;
    let mut reward_fn = GoalReward::new(metric, &render(goal, render_cfg))?;
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut steps = 0usize;
    for episode in 0..cfg.episodes {
        let mut s = EnvState::random(env, &mut rng, render_cfg.distractor);
        let mut ret = 0.0;
        for _ in 0..cfg.horizon {
            let action = if steps < cfg.warmup_steps {
                vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
            } else {
                agent.sample(&s.q, &mut rng)?
            };
            let mut next = s.step([action[0], action[1]]);
            next.advance_distractor(&mut rng);
            let reward = cfg.reward_scale * reward_fn.reward(&render(&next, render_cfg))?;
            ret += reward;
            // Episodes end on the time limit only, so every step bootstraps.
            buffer.push(Transition {
                state: s.q.to_vec(),
                action,
                reward,
                next_state: next.q.to_vec(),
                done: false,
            });
            steps += 1;
            if steps >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut rng);
                agent.update(&batch, &mut rng).map_err(|e| match e {
                    DpnError::NonFinite { detail, .. } => DpnError::NonFinite { iteration: steps, detail },
                    other => other,
                })?;
            }
            s = next;
        }
        curve.push(EpisodeRecord {
            episode,
            episode_return: ret,
            final_distance: true_distance(&s, goal)?,
        });
    }
    Ok(RlOutcome {
        agent,
        curve,
        clamped_rewards: reward_fn.clamped,
    })
}

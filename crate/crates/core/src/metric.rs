//! Goal metrics on observations, the reward derived from them and the
//! evaluation protocol (rank correlation with true distance, normalized
//! distance traces).

use dpn_tensor::{huber, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::TrainedModel;
use crate::config::{MetricKind, RenderConfig};
use crate::env::{render, true_distance, EnvKind, EnvState};
use crate::error::{DpnError, Result};

/// Losses above this are not exponentiated.
pub const REWARD_CLAMP_LOSS: f64 = 700.0;
pub const REWARD_SENTINEL: f64 = -1e304;

/// Maps an observation to the space the metric is measured in.
#[derive(Debug, Clone)]
pub enum Embedder {
    Dpn(crate::model::DpnParams),
    Inverse(crate::model::InverseModel),
    Vae(crate::model::VaeModel),
    /// Raw pixels.
    Pixel,
}

impl Embedder {
    pub fn from_model(model: TrainedModel) -> Result<Self> {
        match model {
            TrainedModel::Dpn(m) => Ok(Embedder::Dpn(m)),
            TrainedModel::Inverse(m) => Ok(Embedder::Inverse(m)),
            TrainedModel::Vae(m) => Ok(Embedder::Vae(m)),
            TrainedModel::Upn(_) => Err(DpnError::Config("upn models do not define a goal metric".into())),
        }
    }

    pub fn kind(&self) -> MetricKind {
        match self {
            Embedder::Dpn(_) => MetricKind::Dpn,
            Embedder::Inverse(_) => MetricKind::Inverse,
            Embedder::Vae(_) => MetricKind::Vae,
            Embedder::Pixel => MetricKind::Pixel,
        }
    }

    pub fn embed(&self, obs: &Tensor) -> Result<Vec<f64>> {
        if let Embedder::Pixel = self {
            return Ok(obs.data().to_vec());
        }
        let g = Graph::new();
        g.no_grad(|| {
            let o = g.constant(obs.clone());
            let e = match self {
                Embedder::Dpn(m) => m.encoder.encode(&g, &m.store.bind_frozen(&g), o)?,
                Embedder::Inverse(m) => m.net.encoder.encode(&g, &m.store.bind_frozen(&g), o)?,
                Embedder::Vae(m) => m.net.embed(&g, &m.store.bind_frozen(&g), o)?,
                Embedder::Pixel => unreachable!(),
            };
            Ok(g.value(e).data().to_vec())
        })
    }
}

/// `L_δ(o, o_g) = Σ_i huber(f(o)_i − f(o_g)_i, δ)`.
#[derive(Debug, Clone)]
pub struct Metric {
    pub embedder: Embedder,
    pub delta: f64,
}

impl Metric {
    pub fn new(embedder: Embedder, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(DpnError::Config(format!("metric delta must be positive, got {delta}")));
        }
        Ok(Self { embedder, delta })
    }

    pub fn kind(&self) -> MetricKind {
        self.embedder.kind()
    }

    pub fn loss_embedded(&self, e: &[f64], goal: &[f64]) -> Result<f64> {
        if e.len() != goal.len() {
            return Err(DpnError::shape("embedding", &[goal.len()], &[e.len()]));
        }
        Ok(e.iter().zip(goal).map(|(a, b)| huber(a - b, self.delta)).sum())
    }

    pub fn loss(&self, obs: &Tensor, goal: &Tensor) -> Result<f64> {
        if obs.shape() != goal.shape() {
            return Err(DpnError::shape("observation", goal.shape(), obs.shape()));
        }
        self.loss_embedded(&self.embedder.embed(obs)?, &self.embedder.embed(goal)?)
    }
}

/// `-exp(loss)`, or the sentinel when the exponent would overflow. The flag
/// reports whether the clamp fired.
pub fn reward_from_loss(loss: f64) -> (f64, bool) {
    if loss > REWARD_CLAMP_LOSS {
        (REWARD_SENTINEL, true)
    } else {
        (-loss.exp(), false)
    }
}

/// Reward against a fixed goal observation, with the goal embedded once.
#[derive(Debug)]
pub struct GoalReward<'a> {
    metric: &'a Metric,
    goal: Vec<f64>,
    /// Number of rewards that hit the overflow clamp.
    pub clamped: usize,
}

impl<'a> GoalReward<'a> {
    pub fn new(metric: &'a Metric, goal_obs: &Tensor) -> Result<Self> {
        Ok(Self {
            metric,
            goal: metric.embedder.embed(goal_obs)?,
            clamped: 0,
        })
    }

    pub fn loss(&self, obs: &Tensor) -> Result<f64> {
        self.metric.loss_embedded(&self.metric.embedder.embed(obs)?, &self.goal)
    }

    pub fn reward(&mut self, obs: &Tensor) -> Result<f64> {
        let (r, clamped) = reward_from_loss(self.loss(obs)?);
        self.clamped += clamped as usize;
        Ok(r)
    }
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Set when either variable has all-equal ranks; `rho` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation of the average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(DpnError::Config(format!(
            "spearman needs two equal-length samples of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Spearman { rho: 0.0, degenerate: true });
    }
    Ok(Spearman {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub metric: f64,
    pub true_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub kind: MetricKind,
    pub spearman: Spearman,
    pub pairs: Vec<PairRecord>,
}

/// Random state pairs (with random distractors when enabled), rendered and
/// scored; the pairs depend only on `seed`, not on the metric.
pub fn sample_state_pairs(env: EnvKind, render_cfg: &RenderConfig, n_pairs: usize, seed: u64) -> Vec<(EnvState, EnvState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs)
        .map(|_| {
            let a = EnvState::random(env, &mut rng, render_cfg.distractor);
            let b = EnvState::random(env, &mut rng, render_cfg.distractor);
            (a, b)
        })
        .collect()
}

pub fn metric_correlation(metric: &Metric, env: EnvKind, render_cfg: &RenderConfig, n_pairs: usize, seed: u64) -> Result<CorrelationReport> {
    if n_pairs < 10 {
        return Err(DpnError::Config(format!("metric correlation needs at least 10 pairs, got {n_pairs}")));
    }
    let pairs = sample_state_pairs(env, render_cfg, n_pairs, seed)
        .iter()
        .map(|(a, b)| {
            Ok(PairRecord {
                metric: metric.loss(&render(a, render_cfg), &render(b, render_cfg))?,
                true_distance: true_distance(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m: Vec<f64> = pairs.iter().map(|p| p.metric).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.true_distance).collect();
    Ok(CorrelationReport {
        kind: metric.kind(),
        spearman: spearman(&m, &d)?,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTrace {
    pub values: Vec<f64>,
    /// False when the first value was too small to divide by.
    pub normalized: bool,
}

/// Per-step metric loss to the goal, divided by its value at the first step.
pub fn latent_distance_trace(metric: &Metric, observations: &[Tensor], goal: &Tensor) -> Result<DistanceTrace> {
    let reward = GoalReward::new(metric, goal)?;
    let raw = observations.iter().map(|o| reward.loss(o)).collect::<Result<Vec<_>>>()?;
    let first = raw.first().copied().unwrap_or(0.0);
    if first < 1e-9 {
        return Ok(DistanceTrace { values: raw, normalized: false });
    }
    Ok(DistanceTrace {
        values: raw.iter().map(|v| v / first).collect(),
        normalized: true,
    })
}

//! Point-mass and two-link reacher environments, rendering, ground-truth
//! distances and random-interaction collection.

use std::f64::consts::PI;

use dpn_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RenderConfig;
use crate::error::{DpnError, Result};

pub const POINTMASS_STEP: f64 = 0.1;
pub const REACHER_STEP: f64 = 0.15;
pub const LINK_LENGTHS: (f64, f64) = (0.5, 0.4);
/// Per-step scale of the distractor's random walk.
pub const DISTRACTOR_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[default]
    PointMass,
    Reacher,
}

impl EnvKind {
    pub fn code(self) -> u8 {
        match self {
            EnvKind::PointMass => 0,
            EnvKind::Reacher => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EnvKind::PointMass),
            1 => Some(EnvKind::Reacher),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "pointmass",
            EnvKind::Reacher => "reacher",
        }
    }

    pub fn action_dim(self) -> usize {
        2
    }

    pub fn state_dim(self) -> usize {
        2
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pointmass" => Ok(EnvKind::PointMass),
            "reacher" => Ok(EnvKind::Reacher),
            _ => Err(format!("unknown environment `{s}` (expected pointmass or reacher)")),
        }
    }
}

/// Full simulator state. `q` is the position (point-mass) or the joint
/// angles (reacher); the distractor is rendering-only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub kind: EnvKind,
    pub q: [f64; 2],
    pub distractor: Option<[f64; 2]>,
}

impl EnvState {
    pub fn new(kind: EnvKind, q: [f64; 2]) -> Self {
        Self { kind, q, distractor: None }
    }

    /// Uniform random state: position in the unit box or angles in `[-π, π)`.
    pub fn random(kind: EnvKind, rng: &mut impl Rng, distractor: bool) -> Self {
        let q = match kind {
            EnvKind::PointMass => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
            EnvKind::Reacher => [rng.random_range(-PI..PI), rng.random_range(-PI..PI)],
        };
        let distractor = distractor.then(|| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]);
        Self { kind, q, distractor }
    }

    pub fn step(&self, action: [f64; 2]) -> Self {
        let q = match self.kind {
            EnvKind::PointMass => pointmass_step(self.q, action),
            EnvKind::Reacher => reacher_step(self.q, action),
        };
        Self { q, ..*self }
    }

    /// Random-walks the distractor one step (no-op without one).
    pub fn advance_distractor(&mut self, rng: &mut impl Rng) {
        if let Some(d) = &mut self.distractor {
            for v in d.iter_mut() {
                *v = (*v + DISTRACTOR_STEP * rng.random_range(-1.0..=1.0)).clamp(-1.0, 1.0);
            }
        }
    }

    /// The point that the ground-truth distance is measured on.
    pub fn effector(&self) -> [f64; 2] {
        match self.kind {
            EnvKind::PointMass => self.q,
            EnvKind::Reacher => reacher_end_effector(self.q),
        }
    }
}

fn clip_action(a: [f64; 2]) -> [f64; 2] {
    a.map(|v| v.clamp(-1.0, 1.0))
}

pub fn pointmass_step(p: [f64; 2], a: [f64; 2]) -> [f64; 2] {
    let a = clip_action(a);
    [
        (p[0] + POINTMASS_STEP * a[0]).clamp(-1.0, 1.0),
        (p[1] + POINTMASS_STEP * a[1]).clamp(-1.0, 1.0),
    ]
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

pub fn reacher_step(theta: [f64; 2], a: [f64; 2]) -> [f64; 2] {
    let a = clip_action(a);
    [wrap_angle(theta[0] + REACHER_STEP * a[0]), wrap_angle(theta[1] + REACHER_STEP * a[1])]
}

fn reacher_elbow(theta: [f64; 2]) -> [f64; 2] {
    [LINK_LENGTHS.0 * theta[0].cos(), LINK_LENGTHS.0 * theta[0].sin()]
}

pub fn reacher_end_effector(theta: [f64; 2]) -> [f64; 2] {
    let e = reacher_elbow(theta);
    let t = theta[0] + theta[1];
    [e[0] + LINK_LENGTHS.1 * t.cos(), e[1] + LINK_LENGTHS.1 * t.sin()]
}

pub fn true_distance(a: &EnvState, b: &EnvState) -> Result<f64> {
    if a.kind != b.kind {
        return Err(DpnError::Config(format!(
            "true_distance between {} and {} states",
            a.kind.name(),
            b.kind.name()
        )));
    }
    let (p, q) = (a.effector(), b.effector());
    Ok((p[0] - q[0]).hypot(p[1] - q[1]))
}

/// World `[-1, 1]` to pixel coordinate along an axis of `n` pixels; the
/// same affine map the spatial soft-argmax uses.
fn to_pixel(v: f64, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        (v + 1.0) * 0.5 * (n - 1) as f64
    }
}

fn blob(out: &mut [f64], cfg: &RenderConfig, center: [f64; 2], intensity: f64) {
    let (cx, cy) = (to_pixel(center[0], cfg.width), to_pixel(center[1], cfg.height));
    let inv = 1.0 / (2.0 * cfg.blob_radius * cfg.blob_radius);
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            let d2 = (j as f64 - cx).powi(2) + (i as f64 - cy).powi(2);
            let v = intensity * (-d2 * inv).exp();
            let px = &mut out[i * cfg.width + j];
            *px = px.max(v);
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn line(out: &mut [f64], cfg: &RenderConfig, a: [f64; 2], b: [f64; 2]) {
    let pa = [to_pixel(a[0], cfg.width), to_pixel(a[1], cfg.height)];
    let pb = [to_pixel(b[0], cfg.width), to_pixel(b[1], cfg.height)];
    let half = 0.5 * cfg.line_width;
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            let d = segment_distance([j as f64, i as f64], pa, pb);
            // One-pixel linear falloff at the edge.
            let v = (half + 0.5 - d).clamp(0.0, 1.0);
            let px = &mut out[i * cfg.width + j];
            *px = px.max(v);
        }
    }
}

/// Renders `[C, H, W]` with values in `[0, 1]`. Values are rounded through
/// `f32` so live renderings equal the stored dataset frames exactly.
pub fn render(state: &EnvState, cfg: &RenderConfig) -> Tensor {
    let plane = cfg.height * cfg.width;
    let mut img = vec![0.0; plane];
    if let Some(d) = state.distractor {
        blob(&mut img, cfg, d, cfg.distractor_intensity);
    }
    match state.kind {
        EnvKind::PointMass => blob(&mut img, cfg, state.q, 1.0),
        EnvKind::Reacher => {
            let elbow = reacher_elbow(state.q);
            line(&mut img, cfg, [0.0, 0.0], elbow);
            line(&mut img, cfg, elbow, reacher_end_effector(state.q));
        }
    }
    let mut data = Vec::with_capacity(plane * cfg.channels);
    for _ in 0..cfg.channels {
        data.extend(img.iter().map(|&v| v.clamp(0.0, 1.0) as f32 as f64));
    }
    Tensor::new(vec![cfg.channels, cfg.height, cfg.width], data).expect("shape matches data")
}

pub fn validate_render(cfg: &RenderConfig) -> Result<()> {
    if cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 {
        return Err(DpnError::Config("render size must be positive".into()));
    }
    if !(cfg.blob_radius > 0.0) || cfg.blob_radius >= cfg.height.min(cfg.width) as f64 / 2.0 {
        return Err(DpnError::Config(format!(
            "blob radius {} must lie in (0, {})",
            cfg.blob_radius,
            cfg.height.min(cfg.width) as f64 / 2.0
        )));
    }
    if cfg.height > u16::MAX as usize || cfg.width > u16::MAX as usize || cfg.channels > u16::MAX as usize {
        return Err(DpnError::Config("render size exceeds 65535".into()));
    }
    Ok(())
}

/// One random-interaction episode, stored in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `(L+1) * C * H * W` values.
    pub observations: Vec<f32>,
    /// `L * action_dim` values.
    pub actions: Vec<f32>,
    /// `(L+1) * state_dim` values.
    pub states: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: EnvKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn obs_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Number of actions `L` in episode `e`.
    pub fn episode_len(&self, e: usize) -> usize {
        self.episodes[e].actions.len() / self.action_dim
    }

    pub fn observation(&self, e: usize, t: usize) -> Tensor {
        let n = self.obs_len();
        let data = self.episodes[e].observations[t * n..(t + 1) * n].iter().map(|&v| v as f64).collect();
        Tensor::new(vec![self.channels, self.height, self.width], data).expect("shape matches data")
    }

    /// Actions `start .. start + count` as a `[count, action_dim]` matrix.
    pub fn actions(&self, e: usize, start: usize, count: usize) -> Tensor {
        let a = self.action_dim;
        let data = self.episodes[e].actions[start * a..(start + count) * a].iter().map(|&v| v as f64).collect();
        Tensor::new(vec![count, a], data).expect("shape matches data")
    }

    pub fn state(&self, e: usize, t: usize) -> Vec<f64> {
        let s = self.state_dim;
        self.episodes[e].states[t * s..(t + 1) * s].iter().map(|&v| v as f64).collect()
    }

    /// Checks the per-episode storage invariants.
    pub fn validate(&self) -> Result<()> {
        for (i, ep) in self.episodes.iter().enumerate() {
            if self.action_dim == 0 || ep.actions.len() % self.action_dim != 0 {
                return Err(DpnError::Config(format!("episode {i}: ragged action storage")));
            }
            let l = ep.actions.len() / self.action_dim;
            if ep.observations.len() != (l + 1) * self.obs_len() || ep.states.len() != (l + 1) * self.state_dim {
                return Err(DpnError::Config(format!("episode {i}: observation count must be action count + 1")));
            }
        }
        Ok(())
    }
}

/// The generator for episode `index` of a collection run: one ChaCha stream
/// per episode, so episodes do not depend on collection order.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn push_f32(dst: &mut Vec<f32>, src: &[f64]) {
    dst.extend(src.iter().map(|&v| v as f32));
}

/// Uniform-random actions from uniform-random initial states.
pub fn collect_random(kind: EnvKind, episodes: usize, horizon: usize, cfg: &RenderConfig, seed: u64) -> Result<Dataset> {
    if episodes == 0 || horizon == 0 {
        return Err(DpnError::Config("episodes and horizon must be at least 1".into()));
    }
    validate_render(cfg)?;
    let eps = (0..episodes)
        .map(|e| {
            let mut rng = episode_rng(seed, e as u64);
            let mut state = EnvState::random(kind, &mut rng, cfg.distractor);
            let mut ep = Episode {
                observations: Vec::with_capacity((horizon + 1) * cfg.channels * cfg.height * cfg.width),
                actions: Vec::with_capacity(horizon * 2),
                states: Vec::with_capacity((horizon + 1) * 2),
            };
            push_f32(&mut ep.observations, render(&state, cfg).data());
            push_f32(&mut ep.states, &state.q);
            for _ in 0..horizon {
                let a = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                state = state.step(a);
                state.advance_distractor(&mut rng);
                push_f32(&mut ep.actions, &a);
                push_f32(&mut ep.observations, render(&state, cfg).data());
                push_f32(&mut ep.states, &state.q);
            }
            ep
        })
        .collect();
    Ok(Dataset {
        kind,
        channels: cfg.channels,
        height: cfg.height,
        width: cfg.width,
        action_dim: kind.action_dim(),
        state_dim: kind.state_dim(),
        episodes: eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointmass_examples() {
        assert_eq!(pointmass_step([0.0, 0.0], [1.0, 0.0]), [0.1, 0.0]);
        assert_eq!(pointmass_step([0.95, 0.0], [1.0, 0.0]), [1.0, 0.0]);
        // Out-of-range actions are clipped first.
        assert_eq!(pointmass_step([0.0, 0.0], [5.0, -5.0]), [0.1, -0.1]);
    }

    #[test]
    fn reacher_kinematics() {
        let e = reacher_end_effector([0.0, 0.0]);
        assert!((e[0] - 0.9).abs() < 1e-15 && e[1].abs() < 1e-15);
        let e = reacher_end_effector([PI / 2.0, 0.0]);
        assert!(e[0].abs() < 1e-15 && (e[1] - 0.9).abs() < 1e-15);
        let t = reacher_step([PI - 0.01, 0.0], [1.0, 0.0]);
        assert!((-PI..PI).contains(&t[0]));
        assert!((t[0] - (-PI + 0.14)).abs() < 1e-12);
    }

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn pixel_map_matches_soft_argmax_grid() {
        assert_eq!(to_pixel(-1.0, 16), 0.0);
        assert_eq!(to_pixel(1.0, 16), 15.0);
        assert_eq!(to_pixel(0.3, 1), 0.0);
    }

    #[test]
    fn radius_must_fit() {
        let cfg = RenderConfig { blob_radius: 8.0, ..RenderConfig::default() };
        assert!(validate_render(&cfg).is_err());
        assert!(validate_render(&RenderConfig::default()).is_ok());
    }
}

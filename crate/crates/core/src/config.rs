//! Run configuration. Every field has a default (the desk-scale preset);
//! [`TrainConfig::paper`] and friends give the larger published settings.

use serde::{Deserialize, Serialize};

use crate::env::EnvKind;

/// Convolutional encoder shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderArch {
    /// Filters per conv layer; the layer count is the length.
    pub filters: Vec<usize>,
    /// Stride per conv layer, same length as `filters`.
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub temperature: f64,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            filters: vec![8, 8, 8],
            strides: vec![1, 1, 1],
            kernel: 5,
            temperature: 1.0,
        }
    }
}

impl EncoderArch {
    pub fn paper() -> Self {
        Self {
            filters: vec![64; 4],
            strides: vec![1; 4],
            kernel: 5,
            temperature: 1.0,
        }
    }

    /// Dimension of the encoded latent state: two coordinates per final channel.
    pub fn latent_dim(&self) -> usize {
        2 * self.filters.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// KL weight.
    pub beta: f64,
    /// Segment length `T`: a segment holds `T + 1` actions.
    pub segment_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Inner gradient steps `n_p`.
    pub plan_steps: usize,
    /// Huber threshold of the planning loss.
    pub delta_plan: f64,
    pub alpha_init: f64,
    /// Latent action dimension; `None` uses the environment's action dimension.
    pub z_dim: Option<usize>,
    pub encoder: EncoderArch,
    pub dynamics_hidden: usize,
    pub inference_hidden: usize,
    pub decoder_hidden: usize,
    /// Hidden width of the inverse model's action and forward heads.
    pub inverse_hidden: usize,
    /// Weight of the forward-consistency term of the inverse model.
    pub forward_weight: f64,
    /// Filters of the VAE's transposed-conv decoder (last layer is the
    /// observation channel count).
    pub vae_decoder_filters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            segment_len: 4,
            learning_rate: 5e-4,
            batch_size: 16,
            iterations: 2000,
            seed: 0,
            plan_steps: 5,
            delta_plan: 1.0,
            alpha_init: 0.05,
            z_dim: None,
            encoder: EncoderArch::default(),
            dynamics_hidden: 128,
            inference_hidden: 16,
            decoder_hidden: 16,
            inverse_hidden: 64,
            forward_weight: 0.1,
            vae_decoder_filters: 8,
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            plan_steps: 20,
            encoder: EncoderArch::paper(),
            inverse_hidden: 128,
            vae_decoder_filters: 64,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Standard deviation of the agent blob, in pixels.
    pub blob_radius: f64,
    /// Width of the reacher's links, in pixels.
    pub line_width: f64,
    pub distractor: bool,
    pub distractor_intensity: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 1,
            blob_radius: 1.2,
            line_width: 1.5,
            distractor: false,
            distractor_intensity: 0.6,
        }
    }
}

impl RenderConfig {
    pub fn paper() -> Self {
        Self {
            height: 100,
            width: 100,
            channels: 3,
            blob_radius: 6.0,
            line_width: 6.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Dpn,
    Inverse,
    Vae,
    Pixel,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Dpn, MetricKind::Inverse, MetricKind::Vae, MetricKind::Pixel];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Dpn => "dpn",
            MetricKind::Inverse => "inverse",
            MetricKind::Vae => "vae",
            MetricKind::Pixel => "pixel",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown metric kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub delta: f64,
    pub kind: MetricKind,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            delta: 0.85,
            kind: MetricKind::Dpn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub env: EnvKind,
    pub horizon: usize,
    pub episodes: usize,
    pub eval_episodes: usize,
    pub discount: f64,
    pub replay_capacity: usize,
    pub polyak: f64,
    pub entropy_coef: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Uniform-random steps collected before the policy acts.
    pub warmup_steps: usize,
    /// Multiplies every reward before it enters the replay buffer.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass,
            horizon: 20,
            episodes: 300,
            eval_episodes: 10,
            discount: 0.99,
            replay_capacity: 100_000,
            polyak: 0.995,
            entropy_coef: 0.1,
            hidden: 64,
            batch_size: 64,
            learning_rate: 1e-3,
            warmup_steps: 400,
            reward_scale: 0.1,
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_constants() {
        let t = TrainConfig::default();
        assert_eq!(t.beta, 0.5);
        assert_eq!(t.learning_rate, 0.0005);
        assert_eq!(t.alpha_init, 0.05);
        assert_eq!(TrainConfig::paper().plan_steps, 20);
        assert_eq!(TrainConfig::paper().encoder.filters, vec![64; 4]);
        assert_eq!(MetricConfig::default().delta, 0.85);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"beta": 0.3, "bogus": 1}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"beta": 0.3}"#).unwrap();
        assert_eq!(ok.beta, 0.3);
        assert_eq!(ok.segment_len, 4);
    }

    #[test]
    fn metric_kind_parses_names() {
        for k in MetricKind::ALL {
            assert_eq!(k.name().parse::<MetricKind>().unwrap(), k);
        }
        assert!("l2".parse::<MetricKind>().is_err());
    }
}

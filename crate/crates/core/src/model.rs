//! Complete parameter sets for the planning models.

use dpn_tensor::Tensor;
use rand::Rng;

use crate::config::TrainConfig;
use crate::error::{DpnError, Result};
use crate::networks::{DecoderParams, DynamicsParams, EncoderParams, InferenceParams, InverseParams, ModelDims, VaeParams};
use crate::params::{ParamId, ParamStore};

/// θ = {θ_enc, θ_dyn, θ_act, α_0..α_{n_p-1}} together with the inference
/// parameters φ, all in one store.
#[derive(Debug, Clone)]
pub struct DpnParams {
    pub store: ParamStore,
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub dynamics: DynamicsParams,
    pub inference: InferenceParams,
    pub decoder: DecoderParams,
    /// One `[1]` step size per inner gradient step.
    pub steps: Vec<ParamId>,
    pub z_dim: usize,
    pub delta_plan: f64,
}

fn step_sizes(store: &mut ParamStore, n: usize, init: f64) -> Vec<ParamId> {
    (0..n)
        .map(|i| store.add(format!("planner.alpha{i}"), Tensor::scalar(init)))
        .collect()
}

fn check_plan_config(cfg: &TrainConfig) -> Result<()> {
    if !(cfg.delta_plan > 0.0) {
        return Err(DpnError::Config(format!("delta_plan must be positive, got {}", cfg.delta_plan)));
    }
    Ok(())
}

impl DpnParams {
    pub fn new(dims: ModelDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        check_plan_config(cfg)?;
        let mut store = ParamStore::new();
        let z_dim = cfg.z_dim.unwrap_or(dims.action_dim);
        let encoder = EncoderParams::new(&mut store, "encoder", dims, &cfg.encoder, rng)?;
        let latent = encoder.output_dim(&store);
        let dynamics = DynamicsParams::new(&mut store, "dynamics", latent, z_dim, cfg.dynamics_hidden, rng);
        let inference = InferenceParams::new(&mut store, "inference", dims.action_dim, z_dim, cfg.inference_hidden, rng);
        let decoder = DecoderParams::new(&mut store, "decoder", z_dim, dims.action_dim, cfg.decoder_hidden, rng);
        let steps = step_sizes(&mut store, cfg.plan_steps, cfg.alpha_init);
        Ok(Self {
            store,
            dims,
            encoder,
            dynamics,
            inference,
            decoder,
            steps,
            z_dim,
            delta_plan: cfg.delta_plan,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim(&self.store)
    }

    pub fn step_values(&self) -> Vec<f64> {
        self.steps.iter().map(|&id| self.store.get(id).item()).collect()
    }
}

/// Deterministic planner that optimizes raw actions instead of latents.
#[derive(Debug, Clone)]
pub struct UpnParams {
    pub store: ParamStore,
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub dynamics: DynamicsParams,
    pub steps: Vec<ParamId>,
    pub delta_plan: f64,
}

impl UpnParams {
    pub fn new(dims: ModelDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        check_plan_config(cfg)?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, "encoder", dims, &cfg.encoder, rng)?;
        let latent = encoder.output_dim(&store);
        let dynamics = DynamicsParams::new(&mut store, "dynamics", latent, dims.action_dim, cfg.dynamics_hidden, rng);
        let steps = step_sizes(&mut store, cfg.plan_steps, cfg.alpha_init);
        Ok(Self {
            store,
            dims,
            encoder,
            dynamics,
            steps,
            delta_plan: cfg.delta_plan,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub store: ParamStore,
    pub dims: ModelDims,
    pub net: VaeParams,
}

impl VaeModel {
    pub fn new(dims: ModelDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = VaeParams::new(&mut store, dims, cfg, rng)?;
        Ok(Self { store, dims, net })
    }
}

#[derive(Debug, Clone)]
pub struct InverseModel {
    pub store: ParamStore,
    pub dims: ModelDims,
    pub net: InverseParams,
}

impl InverseModel {
    pub fn new(dims: ModelDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = InverseParams::new(&mut store, dims, cfg, rng)?;
        Ok(Self { store, dims, net })
    }
}

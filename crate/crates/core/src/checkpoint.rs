//! Conversion between trained models and DPNW weight files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RenderConfig, TrainConfig};
use crate::env::EnvKind;
use crate::error::{DpnError, Result};
use crate::io::{FormatError, ModelKind, WeightsFile};
use crate::model::{DpnParams, InverseModel, UpnParams, VaeModel};
use crate::networks::ModelDims;
use crate::params::ParamStore;

/// Everything needed to rebuild a model's layout and render matching
/// observations. Stored as the DPNW config JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub env: EnvKind,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub render: RenderConfig,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Dpn(DpnParams),
    Vae(VaeModel),
    Inverse(InverseModel),
    Upn(UpnParams),
}

impl TrainedModel {
    /// Fresh, initialized layout for `kind`.
    pub fn build(kind: ModelKind, meta: &ModelMeta) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(meta.train.seed);
        Ok(match kind {
            ModelKind::Dpn => TrainedModel::Dpn(DpnParams::new(meta.dims, &meta.train, &mut rng)?),
            ModelKind::Vae => TrainedModel::Vae(VaeModel::new(meta.dims, &meta.train, &mut rng)?),
            ModelKind::Inverse => TrainedModel::Inverse(InverseModel::new(meta.dims, &meta.train, &mut rng)?),
            ModelKind::Upn => TrainedModel::Upn(UpnParams::new(meta.dims, &meta.train, &mut rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Dpn(_) => ModelKind::Dpn,
            TrainedModel::Vae(_) => ModelKind::Vae,
            TrainedModel::Inverse(_) => ModelKind::Inverse,
            TrainedModel::Upn(_) => ModelKind::Upn,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            TrainedModel::Dpn(m) => &m.store,
            TrainedModel::Vae(m) => &m.store,
            TrainedModel::Inverse(m) => &m.store,
            TrainedModel::Upn(m) => &m.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            TrainedModel::Dpn(m) => &mut m.store,
            TrainedModel::Vae(m) => &mut m.store,
            TrainedModel::Inverse(m) => &mut m.store,
            TrainedModel::Upn(m) => &mut m.store,
        }
    }

    pub fn to_weights(&self, meta: &ModelMeta) -> Result<WeightsFile> {
        let config_json = serde_json::to_string(meta).map_err(|e| DpnError::Config(e.to_string()))?;
        Ok(WeightsFile {
            kind: self.kind(),
            config_json,
            blocks: self.store().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        })
    }

    pub fn from_weights(file: WeightsFile) -> Result<(Self, ModelMeta)> {
        let meta: ModelMeta = serde_json::from_str(&file.config_json)
            .map_err(|e| FormatError::Invalid(format!("weights config: {e}")))?;
        let mut model = Self::build(file.kind, &meta)?;
        model.store_mut().load(file.blocks)?;
        Ok((model, meta))
    }
}

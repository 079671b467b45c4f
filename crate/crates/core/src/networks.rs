//! The DPN networks (encoder, latent dynamics, inference network, action
//! decoder) and the learned baselines (VAE, one-step inverse model), as
//! parameter layouts over a [`ParamStore`].

use dpn_tensor::{spatial_soft_argmax, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EncoderArch, TrainConfig};
use crate::error::{DpnError, Result};
use crate::params::{fan_in_uniform, Bound, ParamId, ParamStore};

/// Lower bound added to every posterior standard deviation.
pub const STD_FLOOR: f64 = 1e-4;

/// Observation and action sizes a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub action_dim: usize,
}

impl ModelDims {
    pub fn obs_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

fn expect_shape(g: &Graph, v: Var, what: &str, expected: &[usize]) -> Result<()> {
    let found = g.shape(v);
    if found != expected {
        return Err(DpnError::shape(what, expected, &found));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, g: &Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// `y = x W + b` on row-batched inputs `x: [rows, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(rng, vec![input, output], input));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![output]));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Result<Var> {
        let rows = g.shape(x)[0];
        let y = g.matmul(x, p.get(self.weight))?;
        let b = g.expand_rows(p.get(self.bias), rows)?;
        Ok(g.add(y, b)?)
    }
}

/// Fully connected stack with an activation between layers (none after the
/// last one).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(DpnError::shape("mlp input", &[shape.first().copied().unwrap_or(1), self.input_dim()], &shape));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

fn conv_bias(g: &Graph, p: &Bound, layer: &ConvLayer, h: Var) -> Result<Var> {
    let y = g.conv2d(h, p.get(layer.kernel), layer.stride)?;
    add_channel_bias(g, y, p.get(layer.bias))
}

fn add_channel_bias(g: &Graph, y: Var, bias: Var) -> Result<Var> {
    let shape = g.shape(y);
    let plane = shape[1] * shape[2];
    let flat = g.reshape(y, &[shape[0], plane])?;
    let b = g.expand_cols(bias, plane)?;
    Ok(g.reshape(g.add(flat, b)?, &shape)?)
}

/// Conv stack followed by spatial soft-argmax: `x = f(o; θ_enc)`.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub convs: Vec<ConvLayer>,
    pub input_shape: [usize; 3],
    pub temperature: f64,
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, name: &str, dims: ModelDims, arch: &EncoderArch, rng: &mut impl Rng) -> Result<Self> {
        if arch.filters.is_empty() || arch.filters.len() != arch.strides.len() {
            return Err(DpnError::Config(format!(
                "encoder needs one stride per conv layer, got {} filters and {} strides",
                arch.filters.len(),
                arch.strides.len()
            )));
        }
        if arch.kernel.is_multiple_of(2) || dims.height < arch.kernel || dims.width < arch.kernel {
            return Err(DpnError::Config(format!(
                "encoder kernel {} does not fit {}x{} observations",
                arch.kernel, dims.height, dims.width
            )));
        }
        let mut convs = Vec::new();
        let mut cin = dims.channels;
        for (i, (&f, &s)) in arch.filters.iter().zip(&arch.strides).enumerate() {
            let k = arch.kernel;
            let kernel = store.add(
                format!("{name}.conv{i}.kernel"),
                fan_in_uniform(rng, vec![f, cin, k, k], cin * k * k),
            );
            let bias = store.add(format!("{name}.conv{i}.bias"), Tensor::zeros(vec![f]));
            convs.push(ConvLayer { kernel, bias, stride: s });
            cin = f;
        }
        Ok(Self {
            convs,
            input_shape: dims.obs_shape(),
            temperature: arch.temperature,
        })
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        2 * store.get(self.convs.last().expect("encoder has layers").kernel).shape()[0]
    }

    /// Encodes one `[C, H, W]` observation into a `[1, latent]` row.
    pub fn encode(&self, g: &Graph, p: &Bound, obs: Var) -> Result<Var> {
        expect_shape(g, obs, "observation", &self.input_shape)?;
        let mut h = obs;
        for (i, layer) in self.convs.iter().enumerate() {
            h = conv_bias(g, p, layer, h)?;
            if i + 1 < self.convs.len() {
                h = g.relu(h);
            }
        }
        let pts = spatial_soft_argmax(g, h, self.temperature)?;
        let d = g.shape(pts)[0];
        Ok(g.reshape(pts, &[1, d])?)
    }
}

/// `x̂_{t+1} = g(x_t, z'_t; θ_dyn)`, a two-layer MLP on the concatenation.
#[derive(Debug, Clone)]
pub struct DynamicsParams {
    pub mlp: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl DynamicsParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            mlp: Mlp::new(store, name, &[state_dim + action_dim, hidden, state_dim], Activation::Tanh, rng),
            state_dim,
            action_dim,
        }
    }

    /// One latent transition. `x: [1, state]`, `z: [1, action]`.
    pub fn step(&self, g: &Graph, p: &Bound, x: Var, z: Var) -> Result<Var> {
        expect_shape(g, x, "dynamics state", &[1, self.state_dim])?;
        expect_shape(g, z, "dynamics action", &[1, self.action_dim])?;
        let input = g.concat_cols(x, z)?;
        self.mlp.forward(g, p, input)
    }
}

/// Per-timestep Gaussian posterior parameters, both `[T+1, z]`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorGaussian {
    pub means: Var,
    pub stds: Var,
}

/// `q(z_t | a_t; φ)`: shared trunk with mean and std heads, applied to each
/// timestep independently.
#[derive(Debug, Clone)]
pub struct InferenceParams {
    pub trunk: Linear,
    pub mean_head: Linear,
    pub std_head: Linear,
}

impl InferenceParams {
    pub fn new(store: &mut ParamStore, name: &str, action_dim: usize, z_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            trunk: Linear::new(store, &format!("{name}.trunk"), action_dim, hidden, rng),
            mean_head: Linear::new(store, &format!("{name}.mean"), hidden, z_dim, rng),
            std_head: Linear::new(store, &format!("{name}.std"), hidden, z_dim, rng),
        }
    }

    pub fn infer(&self, g: &Graph, p: &Bound, actions: Var) -> Result<PosteriorGaussian> {
        let shape = g.shape(actions);
        if shape.len() != 2 || shape[1] != self.trunk.input {
            return Err(DpnError::shape("posterior actions", &[shape.first().copied().unwrap_or(1), self.trunk.input], &shape));
        }
        let h = g.tanh(self.trunk.forward(g, p, actions)?);
        let means = self.mean_head.forward(g, p, h)?;
        let raw = self.std_head.forward(g, p, h)?;
        let stds = g.add_const(g.softplus(raw), STD_FLOOR);
        Ok(PosteriorGaussian { means, stds })
    }
}

/// Reparameterized draw `z = μ + σ ⊙ ε`.
pub fn sample_latents(g: &Graph, post: &PosteriorGaussian, noise: Var) -> Result<Var> {
    let shape = g.shape(post.means);
    expect_shape(g, noise, "latent noise", &shape)?;
    Ok(g.add(post.means, g.mul(post.stds, noise)?)?)
}

/// Maps each latent action `z'_t` to the mean of `N(a_t, I)`.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub mlp: Mlp,
}

impl DecoderParams {
    pub fn new(store: &mut ParamStore, name: &str, z_dim: usize, action_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(store, name, &[z_dim, hidden, action_dim], Activation::Tanh, rng),
        }
    }

    pub fn decode(&self, g: &Graph, p: &Bound, z: Var) -> Result<Var> {
        self.mlp.forward(g, p, z)
    }
}

/// Closed-form `KL(N(μ, σ²) || N(0, I))` summed over all entries.
pub fn kl_standard_normal(g: &Graph, means: Var, stds: Var) -> Result<Var> {
    if g.value(stds).data().iter().any(|&s| s <= 0.0) {
        return Err(DpnError::Config("kl_standard_normal: standard deviations must be positive".into()));
    }
    // ½(μ² + σ² − 1 − 2 ln σ)
    let m2 = g.square(means);
    let s2 = g.square(stds);
    let log_s = g.log(stds)?;
    let inner = g.sub(g.add(m2, s2)?, g.scale(log_s, 2.0))?;
    let total = g.sum(g.add_const(inner, -1.0));
    Ok(g.scale(total, 0.5))
}

/// VAE baseline: conv encoder, Gaussian latent heads, transposed-conv decoder.
#[derive(Debug, Clone)]
pub struct VaeParams {
    pub encoder: EncoderParams,
    pub mean_head: Linear,
    pub std_head: Linear,
    pub project: Linear,
    pub deconvs: Vec<ConvLayer>,
    /// Spatial size produced by each decoder layer.
    pub deconv_sizes: Vec<(usize, usize)>,
    /// `[F, h, w]` map the projection is reshaped to.
    pub seed_shape: [usize; 3],
    pub latent_dim: usize,
}

impl VaeParams {
    pub fn new(store: &mut ParamStore, dims: ModelDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderParams::new(store, "vae.encoder", dims, &cfg.encoder, rng)?;
        let feat = cfg.encoder.latent_dim();
        let latent_dim = feat;
        let mean_head = Linear::new(store, "vae.mean", feat, latent_dim, rng);
        let std_head = Linear::new(store, "vae.std", feat, latent_dim, rng);
        // Four transposed-conv layers with strides 2, 2, 1, 1.
        let strides = [2usize, 2, 1, 1];
        let full = (dims.height, dims.width);
        let half = (full.0.div_ceil(2), full.1.div_ceil(2));
        let quarter = (half.0.div_ceil(2), half.1.div_ceil(2));
        let deconv_sizes = vec![half, full, full, full];
        let f = cfg.vae_decoder_filters;
        let seed_shape = [f, quarter.0, quarter.1];
        let project = Linear::new(store, "vae.project", latent_dim, f * quarter.0 * quarter.1, rng);
        let k = cfg.encoder.kernel;
        let mut deconvs = Vec::new();
        for (i, &s) in strides.iter().enumerate() {
            let cout = if i == 3 { dims.channels } else { f };
            // Kernels in forward-conv layout: [C_in_here, C_out_here, K, K].
            let kernel = store.add(format!("vae.deconv{i}.kernel"), fan_in_uniform(rng, vec![f, cout, k, k], f * k * k));
            let bias = store.add(format!("vae.deconv{i}.bias"), Tensor::zeros(vec![cout]));
            deconvs.push(ConvLayer { kernel, bias, stride: s });
        }
        Ok(Self {
            encoder,
            mean_head,
            std_head,
            project,
            deconvs,
            deconv_sizes,
            seed_shape,
            latent_dim,
        })
    }

    pub fn posterior(&self, g: &Graph, p: &Bound, obs: Var) -> Result<PosteriorGaussian> {
        let feat = self.encoder.encode(g, p, obs)?;
        let means = self.mean_head.forward(g, p, feat)?;
        let stds = g.add_const(g.softplus(self.std_head.forward(g, p, feat)?), STD_FLOOR);
        Ok(PosteriorGaussian { means, stds })
    }

    pub fn decode(&self, g: &Graph, p: &Bound, latent: Var) -> Result<Var> {
        let h = g.tanh(self.project.forward(g, p, latent)?);
        let mut h = g.reshape(h, &self.seed_shape)?;
        for (i, (layer, &size)) in self.deconvs.iter().zip(&self.deconv_sizes).enumerate() {
            let y = g.conv_transpose2d(h, p.get(layer.kernel), layer.stride, size)?;
            h = add_channel_bias(g, y, p.get(layer.bias))?;
            if i + 1 < self.deconvs.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Returns `(latent sample, reconstruction, kl)`.
    pub fn forward(&self, g: &Graph, p: &Bound, obs: Var, noise: Var) -> Result<(Var, Var, Var)> {
        let post = self.posterior(g, p, obs)?;
        let latent = sample_latents(g, &post, noise)?;
        let recon = self.decode(g, p, latent)?;
        let kl = kl_standard_normal(g, post.means, post.stds)?;
        Ok((latent, recon, kl))
    }

    /// Deterministic embedding used as a metric space: the posterior mean.
    pub fn embed(&self, g: &Graph, p: &Bound, obs: Var) -> Result<Var> {
        Ok(self.posterior(g, p, obs)?.means)
    }
}

/// One-step inverse model with a forward-consistency head; the encoder is
/// shared between both observations.
#[derive(Debug, Clone)]
pub struct InverseParams {
    pub encoder: EncoderParams,
    pub action_head: Mlp,
    pub forward_head: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub struct InverseOutputs {
    pub embedding: Var,
    pub embedding_next: Var,
    pub predicted_action: Var,
    pub predicted_next_embedding: Var,
}

impl InverseParams {
    pub fn new(store: &mut ParamStore, dims: ModelDims, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderParams::new(store, "inverse.encoder", dims, &cfg.encoder, rng)?;
        let e = cfg.encoder.latent_dim();
        let h = cfg.inverse_hidden;
        let action_head = Mlp::new(store, "inverse.action", &[2 * e, h, dims.action_dim], Activation::Tanh, rng);
        let forward_head = Mlp::new(store, "inverse.forward", &[e + dims.action_dim, h, e], Activation::Tanh, rng);
        Ok(Self {
            encoder,
            action_head,
            forward_head,
        })
    }

    /// `action` is the executed action `[1, action_dim]`, consumed by the
    /// forward-consistency head.
    pub fn forward(&self, g: &Graph, p: &Bound, obs: Var, obs_next: Var, action: Var) -> Result<InverseOutputs> {
        let embedding = self.encoder.encode(g, p, obs)?;
        let embedding_next = self.encoder.encode(g, p, obs_next)?;
        let pair = g.concat_cols(embedding, embedding_next)?;
        let predicted_action = self.action_head.forward(g, p, pair)?;
        let fwd_in = g.concat_cols(embedding, action)?;
        let predicted_next_embedding = self.forward_head.forward(g, p, fwd_in)?;
        Ok(InverseOutputs {
            embedding,
            embedding_next,
            predicted_action,
            predicted_next_embedding,
        })
    }
}

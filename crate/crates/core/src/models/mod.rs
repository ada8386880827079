//! Encoder-decoder models over trajectory prefixes.
//!
//! An encoder compresses the observed (encoding) half of a trajectory into
//! a latent initial condition; a decoder maps (latent, query time) to a
//! predicted state. Times follow one convention everywhere: the encoder
//! sees a clock that starts at 0 at its first observation, decoders see a
//! query clock whose 0 is the end of the encoding window.
//!
//! Latent width: the flow decoder evolves a free latent (2 by default) and
//! reads it out into state space; NODE/ANODE integrate in state space
//! itself, so their latent is pinned to the data dimension, as it also is
//! whenever the encoder is a bare endpoint projection.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::rng::derive_rng;
use crate::series::TimeSeries;
use crate::signature::SignatureError;

pub mod decoders;
pub mod encoders;
pub mod params;

pub use decoders::{
    decode_anode, decode_flow, decode_node, flow_contraction_rescale, spectral_norm_estimate,
};
pub use encoders::{
    encode_gru, encode_point, encode_signature, kl_divergence, phi_lift, reparameterize,
    PHI_HIDDEN,
};
pub use params::{BoundParams, Init, ParamEntry, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model configuration: {0}")]
    Config(String),
    #[error("series has {got} points, need at least {min}")]
    SeriesTooShort { got: usize, min: usize },
    #[error("bad query times: {0}")]
    BadQueryTimes(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointMode {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Signature,
    Gru,
    Point { mode: PointMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Latent width l; ignored (pinned to d) for NODE/ANODE decoders and
    /// point encoders.
    pub latent_dim: usize,
    /// Sliding window length m (signature kind only).
    pub window: usize,
    /// Signature truncation depth N.
    pub depth: usize,
    /// Outputs of the shared window MLP; 0 drops the learned lift entirely,
    /// leaving only the pass-through channels.
    pub learned_features: usize,
    pub include_original: bool,
    pub include_time: bool,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    /// Emit (mean, log-std) heads and train with the ELBO.
    pub variational: bool,
}

impl EncoderConfig {
    pub fn signature() -> Self {
        EncoderConfig {
            kind: EncoderKind::Signature,
            latent_dim: 2,
            window: 40,
            depth: 3,
            learned_features: 4,
            include_original: true,
            include_time: true,
            gru_layers: 2,
            gru_hidden: 21,
            variational: false,
        }
    }

    pub fn gru() -> Self {
        EncoderConfig { kind: EncoderKind::Gru, ..Self::signature() }
    }

    pub fn point(mode: PointMode) -> Self {
        EncoderConfig { kind: EncoderKind::Point { mode }, ..Self::signature() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Node,
    Anode,
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    /// MLP width: 136 for the NODE/ANODE field, 26 for the flow's g and
    /// readout.
    pub hidden: usize,
    /// Linear maps in the NODE/ANODE field; 1 means a single linear map.
    pub layers: usize,
    /// Zero-initialized channels appended to the state (ANODE).
    pub augment_dims: usize,
    /// Euler step; 0 picks (query span)/200.
    pub solver_step: f64,
}

impl DecoderConfig {
    pub fn node() -> Self {
        DecoderConfig { kind: DecoderKind::Node, hidden: 136, layers: 3, augment_dims: 0, solver_step: 0.0 }
    }

    pub fn anode() -> Self {
        DecoderConfig { kind: DecoderKind::Anode, augment_dims: 1, ..Self::node() }
    }

    pub fn flow() -> Self {
        DecoderConfig { kind: DecoderKind::Flow, hidden: 26, layers: 2, augment_dims: 0, solver_step: 0.0 }
    }
}

/// y = W x + b with named parameters.
pub(crate) fn linear(
    tape: &Tape,
    params: &BoundParams,
    w: &str,
    b: &str,
    x: &Tensor,
) -> Result<Tensor, ModelError> {
    Ok(tape.add(&tape.matmul(params.get(w), x)?, params.get(b))?)
}

/// One forward pass: per-query predictions plus the KL term when the
/// encoder is variational. `bound` is kept so gradients can be read back
/// for every parameter of the pass.
#[derive(Debug)]
pub struct Forward {
    pub preds: Vec<Tensor>,
    pub kl: Option<Tensor>,
    pub bound: BoundParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub store: ParamStore,
}

impl Model {
    /// Builds and initializes a model. The same (configs, data_dim, seed)
    /// reproduce every weight bit-for-bit.
    pub fn new(
        encoder: EncoderConfig,
        decoder: DecoderConfig,
        data_dim: usize,
        seed: u64,
    ) -> Result<Model, ModelError> {
        validate_configs(&encoder, &decoder, data_dim)?;
        let latent_dim = effective_latent(&encoder, &decoder, data_dim);
        let mut rng = derive_rng(seed, "model-init", 0);
        let mut store = ParamStore::new();
        match encoder.kind {
            EncoderKind::Signature => {
                encoders::register_signature_params(&mut store, &encoder, data_dim, latent_dim, &mut rng)?
            }
            EncoderKind::Gru => {
                encoders::register_gru_params(&mut store, &encoder, data_dim, latent_dim, &mut rng)?
            }
            EncoderKind::Point { .. } => {}
        }
        match decoder.kind {
            DecoderKind::Node => decoders::register_node_params(&mut store, &decoder, latent_dim, &mut rng)?,
            DecoderKind::Anode => decoders::register_node_params(
                &mut store,
                &decoder,
                latent_dim + decoder.augment_dims,
                &mut rng,
            )?,
            DecoderKind::Flow => {
                decoders::register_flow_params(&mut store, &decoder, latent_dim, data_dim, &mut rng)?;
            }
        }
        let mut model = Model { encoder, decoder, data_dim, latent_dim, store };
        model.after_optimizer_step()?;
        Ok(model)
    }

    /// Encodes the observed prefix and decodes at the query times. The
    /// prefix must use a clock starting at 0; query times count from the
    /// end of the prefix. `sample_rng` draws the latent when the encoder is
    /// variational; without it the mean is used (deterministic evaluation).
    pub fn forward(
        &self,
        tape: &Tape,
        enc: &TimeSeries,
        query_times: &[f64],
        sample_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Forward, ModelError> {
        if enc.dim() != self.data_dim {
            return Err(ModelError::Config(format!(
                "model expects {}-dimensional data, series has {}",
                self.data_dim,
                enc.dim()
            )));
        }
        let bound = self.store.bind(tape);
        let raw = match self.encoder.kind {
            EncoderKind::Signature => encoders::encode_signature(tape, enc, &self.encoder, &bound)?,
            EncoderKind::Gru => encoders::encode_gru(tape, enc, &self.encoder, &bound)?,
            EncoderKind::Point { mode } => tape.constant(&encoders::encode_point(enc, mode)?),
        };
        let (z0, kl) = if self.encoder.variational {
            let l = self.latent_dim;
            let mean = tape.slice(&raw, 0, l)?;
            let log_std = tape.slice(&raw, l, l)?;
            match sample_rng {
                Some(rng) => {
                    let (sample, kl) = encoders::reparameterize(tape, &mean, &log_std, rng)?;
                    (sample, Some(kl))
                }
                None => {
                    let kl = encoders::kl_divergence(tape, &mean, &log_std)?;
                    (mean, Some(kl))
                }
            }
        } else {
            (raw, None)
        };
        let preds = match self.decoder.kind {
            DecoderKind::Node => decoders::decode_node(tape, &z0, query_times, &self.decoder, &bound)?,
            DecoderKind::Anode => decoders::decode_anode(tape, &z0, query_times, &self.decoder, &bound)?,
            DecoderKind::Flow => decoders::decode_flow(tape, &z0, query_times, &self.decoder, &bound)?,
        };
        Ok(Forward { preds, kl, bound })
    }

    /// Re-establishes post-step invariants; currently the flow decoder's
    /// contraction certificate.
    pub fn after_optimizer_step(&mut self) -> Result<(), ModelError> {
        if matches!(self.decoder.kind, DecoderKind::Flow) {
            decoders::flow_contraction_rescale(&mut self.store)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.store.param_count_matching(&["phi.", "sig_head.", "gru"])
    }

    pub fn decoder_param_count(&self) -> usize {
        self.store.param_count_matching(&["f.", "flow."])
    }
}

fn effective_latent(encoder: &EncoderConfig, decoder: &DecoderConfig, d: usize) -> usize {
    let state_space = matches!(decoder.kind, DecoderKind::Node | DecoderKind::Anode);
    if state_space || matches!(encoder.kind, EncoderKind::Point { .. }) {
        d
    } else {
        encoder.latent_dim
    }
}

fn validate_configs(
    encoder: &EncoderConfig,
    decoder: &DecoderConfig,
    data_dim: usize,
) -> Result<(), ModelError> {
    let fail = |msg: String| Err(ModelError::Config(msg));
    if data_dim == 0 {
        return fail("data dimension must be positive".to_string());
    }
    match encoder.kind {
        EncoderKind::Signature => {
            if encoder.window == 0 {
                return fail("signature encoder needs a positive window".to_string());
            }
            if encoder.depth == 0 {
                return fail("signature depth must be at least 1".to_string());
            }
            if encoder.lift_channels(data_dim) == 0 {
                return fail(
                    "signature encoder has no channels: enable learned features, original values, or time"
                        .to_string(),
                );
            }
        }
        EncoderKind::Gru => {
            if encoder.gru_layers == 0 || encoder.gru_hidden == 0 {
                return fail("GRU encoder needs at least one layer and one hidden unit".to_string());
            }
        }
        EncoderKind::Point { .. } => {
            if encoder.variational {
                return fail("point encoder has no distribution heads; variational mode needs a learned encoder".to_string());
            }
        }
    }
    if effective_latent(encoder, decoder, data_dim) == 0 {
        return fail("latent dimension must be positive".to_string());
    }
    match decoder.kind {
        DecoderKind::Node | DecoderKind::Anode => {
            if decoder.layers == 0 {
                return fail("decoder field needs at least one linear map".to_string());
            }
            if decoder.layers > 1 && decoder.hidden == 0 {
                return fail("decoder field needs a positive hidden width".to_string());
            }
            if !decoder.solver_step.is_finite() || decoder.solver_step < 0.0 {
                return fail(format!("bad solver step {}", decoder.solver_step));
            }
        }
        DecoderKind::Flow => {
            if decoder.hidden == 0 {
                return fail("flow decoder needs a positive hidden width".to_string());
            }
        }
    }
    Ok(())
}

/// Training metadata carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs: usize,
    pub best_epoch: usize,
    /// None when no validation pass ever ran (0-epoch runs).
    pub best_val_rmse: Option<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamManifest {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    data_dim: usize,
    latent_dim: usize,
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    metadata: CheckpointMeta,
    params: Vec<ParamManifest>,
}

/// Writes `model.json` (configs, parameter names and shapes, metadata) and
/// `weights.bin` (parameters as little-endian f64, manifest order).
/// Overwrites; checkpoints are mutable run artifacts, unlike datasets.
pub fn save_checkpoint(dir: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        data_dim: model.data_dim,
        latent_dim: model.latent_dim,
        encoder: model.encoder.clone(),
        decoder: model.decoder.clone(),
        metadata: meta.clone(),
        params: model
            .store
            .entries()
            .iter()
            .map(|e| ParamManifest { name: e.name.clone(), shape: e.shape.clone() })
            .collect(),
    };
    fs::write(dir.join("model.json"), serde_json::to_vec_pretty(&manifest)?)?;
    let mut bytes = Vec::with_capacity(model.store.param_count() * 8);
    for v in model.store.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(dir.join("model.json"))?)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Malformed(format!(
            "checkpoint format {} unsupported, expected {}",
            manifest.format_version, CHECKPOINT_VERSION
        )));
    }
    let bytes = fs::read(dir.join("weights.bin"))?;
    if bytes.len() % 8 != 0 {
        return Err(ModelError::Malformed(format!(
            "weights.bin holds {} bytes, not a whole number of f64s",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let shapes: Vec<(String, Vec<usize>)> =
        manifest.params.into_iter().map(|p| (p.name, p.shape)).collect();
    let store = ParamStore::from_parts(&shapes, data)?;
    validate_configs(&manifest.encoder, &manifest.decoder, manifest.data_dim)?;
    let model = Model {
        encoder: manifest.encoder,
        decoder: manifest.decoder,
        data_dim: manifest.data_dim,
        latent_dim: manifest.latent_dim,
        store,
    };
    Ok((model, manifest.metadata))
}

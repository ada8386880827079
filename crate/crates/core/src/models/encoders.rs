//! Trajectory encoders: windowed signature, stacked GRU, and endpoint
//! projection. Each maps an observed prefix to a latent vector (twice the
//! width when the encoder also emits log-std heads).

use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor};
use crate::series::TimeSeries;
use crate::signature::{sig_dimension, signature, PiecewiseLinearPath};

use super::params::{BoundParams, Init, ParamStore};
use super::{linear, EncoderConfig, ModelError, PointMode};

/// Hidden width of the shared per-window MLP.
pub const PHI_HIDDEN: usize = 25;

impl EncoderConfig {
    /// Channel count of the lifted path: learned features plus the optional
    /// raw-value and timestamp pass-throughs.
    pub fn lift_channels(&self, d: usize) -> usize {
        self.learned_features
            + if self.include_original { d } else { 0 }
            + if self.include_time { 1 } else { 0 }
    }

    /// Width of the encoder output: latent, doubled when a log-std head is
    /// stacked on top.
    pub fn output_dim(&self, latent: usize) -> usize {
        if self.variational {
            2 * latent
        } else {
            latent
        }
    }
}

pub(super) fn register_signature_params(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    d: usize,
    latent: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(), ModelError> {
    if cfg.learned_features > 0 {
        let fan = cfg.window * d;
        store.register("phi.w1", &[PHI_HIDDEN, fan], Init::UniformFanIn(fan), rng)?;
        store.register("phi.b1", &[PHI_HIDDEN], Init::UniformFanIn(fan), rng)?;
        store.register(
            "phi.w2",
            &[cfg.learned_features, PHI_HIDDEN],
            Init::UniformFanIn(PHI_HIDDEN),
            rng,
        )?;
        store.register("phi.b2", &[cfg.learned_features], Init::UniformFanIn(PHI_HIDDEN), rng)?;
    }
    let q = sig_dimension(cfg.lift_channels(d), cfg.depth);
    let out = cfg.output_dim(latent);
    store.register("sig_head.w", &[out, q], Init::UniformFanIn(q), rng)?;
    store.register("sig_head.b", &[out], Init::UniformFanIn(q), rng)?;
    Ok(())
}

pub(super) fn register_gru_params(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    d: usize,
    latent: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(), ModelError> {
    let h = cfg.gru_hidden;
    for layer in 0..cfg.gru_layers {
        let input = if layer == 0 { d + 1 } else { h };
        store.register(
            &format!("gru.l{layer}.w_ih"),
            &[3 * h, input],
            Init::UniformFanIn(input),
            rng,
        )?;
        store.register(&format!("gru.l{layer}.b_ih"), &[3 * h], Init::Zeros, rng)?;
        store.register(&format!("gru.l{layer}.w_hh"), &[3 * h, h], Init::UniformFanIn(h), rng)?;
        store.register(&format!("gru.l{layer}.b_hh"), &[3 * h], Init::Zeros, rng)?;
    }
    let out = cfg.output_dim(latent);
    store.register("gru_head.w", &[out, h], Init::UniformFanIn(h), rng)?;
    store.register("gru_head.b", &[out], Init::UniformFanIn(h), rng)?;
    Ok(())
}

/// Slides a length-m window over the series (stride 1, n-m+1 windows) and
/// maps each one to a point of the lifted path: the window's flattened
/// values through the shared two-layer MLP, then the window's last raw
/// value and last timestamp appended as pass-through channels when enabled.
pub fn phi_lift(
    tape: &Tape,
    series: &TimeSeries,
    cfg: &EncoderConfig,
    params: &BoundParams,
) -> Result<PiecewiseLinearPath, ModelError> {
    let (n, m, d) = (series.len(), cfg.window, series.dim());
    if n < m {
        return Err(ModelError::SeriesTooShort { got: n, min: m });
    }
    if cfg.lift_channels(d) == 0 {
        return Err(ModelError::Config(
            "encoder lift has no channels: learned features, original values, and time are all off"
                .to_string(),
        ));
    }
    let values = series.values();
    let times = series.times();
    let mut points = Vec::with_capacity(n - m + 1);
    for i in 0..=(n - m) {
        let mut parts: Vec<Tensor> = Vec::with_capacity(3);
        if cfg.learned_features > 0 {
            let window = tape.constant(&Tensor::vector(values[i * d..(i + m) * d].to_vec()));
            let hidden = tape.tanh(&linear(tape, params, "phi.w1", "phi.b1", &window)?)?;
            parts.push(linear(tape, params, "phi.w2", "phi.b2", &hidden)?);
        }
        let last = i + m - 1;
        if cfg.include_original {
            parts.push(tape.constant(&Tensor::vector(series.point(last).to_vec())));
        }
        if cfg.include_time {
            parts.push(tape.constant(&Tensor::vector(vec![times[last]])));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        points.push(tape.concat(&refs)?);
    }
    Ok(PiecewiseLinearPath::from_points(points)?)
}

/// Signature encoder: depth-N signature of the lifted path, flattened and
/// passed through one linear map.
pub fn encode_signature(
    tape: &Tape,
    series: &TimeSeries,
    cfg: &EncoderConfig,
    params: &BoundParams,
) -> Result<Tensor, ModelError> {
    // The lift needs n >= m; the signature additionally needs two path
    // points, i.e. one increment.
    if series.len() < cfg.window + 1 {
        return Err(ModelError::SeriesTooShort { got: series.len(), min: cfg.window + 1 });
    }
    let path = phi_lift(tape, series, cfg, params)?;
    let sig = signature(tape, &path, cfg.depth)?;
    let flat = sig.flatten(tape)?;
    Ok(linear(tape, params, "sig_head.w", "sig_head.b", &flat)?)
}

/// Stacked GRU over per-step inputs (x(t_i), t_i), linear head on the final
/// hidden state of the top layer. Gates are packed (reset, update,
/// candidate) in the input-to-hidden and hidden-to-hidden maps.
pub fn encode_gru(
    tape: &Tape,
    series: &TimeSeries,
    cfg: &EncoderConfig,
    params: &BoundParams,
) -> Result<Tensor, ModelError> {
    if series.is_empty() {
        return Err(ModelError::SeriesTooShort { got: 0, min: 1 });
    }
    let h = cfg.gru_hidden;
    let ones = tape.constant(&Tensor::filled(&[h], 1.0));
    let mut seq: Vec<Tensor> = (0..series.len())
        .map(|i| {
            let mut v = series.point(i).to_vec();
            v.push(series.times()[i]);
            tape.constant(&Tensor::vector(v))
        })
        .collect();
    for layer in 0..cfg.gru_layers {
        let w_ih = params.get(&format!("gru.l{layer}.w_ih"));
        let b_ih = params.get(&format!("gru.l{layer}.b_ih"));
        let w_hh = params.get(&format!("gru.l{layer}.w_hh"));
        let b_hh = params.get(&format!("gru.l{layer}.b_hh"));
        let mut state = tape.constant(&Tensor::zeros(&[h]));
        let mut next_seq = Vec::with_capacity(seq.len());
        for x in &seq {
            let gi = tape.add(&tape.matmul(w_ih, x)?, b_ih)?;
            let gh = tape.add(&tape.matmul(w_hh, &state)?, b_hh)?;
            let reset = tape.sigmoid(&tape.add(&tape.slice(&gi, 0, h)?, &tape.slice(&gh, 0, h)?)?)?;
            let update = tape.sigmoid(&tape.add(&tape.slice(&gi, h, h)?, &tape.slice(&gh, h, h)?)?)?;
            let cand_h = tape.mul(&reset, &tape.slice(&gh, 2 * h, h)?)?;
            let cand = tape.tanh(&tape.add(&tape.slice(&gi, 2 * h, h)?, &cand_h)?)?;
            let keep = tape.mul(&update, &state)?;
            state = tape.add(&tape.mul(&tape.sub(&ones, &update)?, &cand)?, &keep)?;
            next_seq.push(state.clone());
        }
        seq = next_seq;
    }
    let last = seq.last().expect("series is non-empty");
    Ok(linear(tape, params, "gru_head.w", "gru_head.b", last)?)
}

/// Endpoint projection: the first or last observed value, untouched.
pub fn encode_point(series: &TimeSeries, mode: PointMode) -> Result<Tensor, ModelError> {
    if series.is_empty() {
        return Err(ModelError::SeriesTooShort { got: 0, min: 1 });
    }
    let idx = match mode {
        PointMode::First => 0,
        PointMode::Last => series.len() - 1,
    };
    Ok(Tensor::vector(series.point(idx).to_vec()))
}

/// Draws a latent sample mean + exp(log_std) * eta with eta standard normal,
/// and the KL divergence of N(mean, exp(log_std)^2) from N(0, I).
pub fn reparameterize(
    tape: &Tape,
    mean: &Tensor,
    log_std: &Tensor,
    rng: &mut ChaCha20Rng,
) -> Result<(Tensor, Tensor), ModelError> {
    let l = mean.len();
    if log_std.len() != l {
        return Err(ModelError::Config(format!(
            "mean has {l} entries but log_std has {}",
            log_std.len()
        )));
    }
    let eta: Vec<f64> = (0..l).map(|_| StandardNormal.sample(rng)).collect();
    let eta = tape.constant(&Tensor::vector(eta));
    let std = tape.exp_clamped(log_std)?;
    let sample = tape.add(mean, &tape.mul(&std, &eta)?)?;
    Ok((sample, kl_divergence(tape, mean, log_std)?))
}

/// KL(N(mean, exp(log_std)^2) || N(0, I)) =
/// 1/2 * sum(exp(2 log_std) + mean^2 - 1 - 2 log_std).
pub fn kl_divergence(tape: &Tape, mean: &Tensor, log_std: &Tensor) -> Result<Tensor, ModelError> {
    let ones = tape.constant(&Tensor::filled(&[mean.len()], 1.0));
    let two_ls = tape.scale(log_std, 2.0)?;
    let var = tape.exp_clamped(&two_ls)?;
    let terms = tape.sub(&tape.sub(&tape.add(&var, &tape.square(mean)?)?, &ones)?, &two_ls)?;
    Ok(tape.scale(&tape.sum(&terms)?, 0.5)?)
}

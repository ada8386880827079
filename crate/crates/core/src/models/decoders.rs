//! Latent-to-trajectory decoders: forward-Euler NODE/ANODE and the
//! contractive flow. All three read a query clock that starts at 0, the end
//! of the encoding window.

use rand_chacha::ChaCha20Rng;

use crate::autodiff::{Tape, Tensor};

use super::params::{BoundParams, Init, ParamStore};
use super::{linear, DecoderConfig, ModelError};

/// Registers the vector field f(x, t) for NODE/ANODE: `layers` linear maps
/// with tanh between them, 136 hidden units by default, input width
/// state + 1 for the time channel. `layers = 1` is a single linear map.
pub(super) fn register_node_params(
    store: &mut ParamStore,
    cfg: &DecoderConfig,
    state_dim: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(), ModelError> {
    let mut input = state_dim + 1;
    for layer in 0..cfg.layers {
        let output = if layer + 1 == cfg.layers { state_dim } else { cfg.hidden };
        store.register(
            &format!("f.w{layer}"),
            &[output, input],
            Init::UniformFanIn(input),
            rng,
        )?;
        store.register(&format!("f.b{layer}"), &[output], Init::UniformFanIn(input), rng)?;
        input = output;
    }
    Ok(())
}

pub(super) fn register_flow_params(
    store: &mut ParamStore,
    cfg: &DecoderConfig,
    latent: usize,
    d: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(), ModelError> {
    let h = cfg.hidden;
    store.register("flow.alpha", &[latent], Init::Ones, rng)?;
    store.register("flow.g.w0", &[h, latent + 1], Init::UniformFanIn(latent + 1), rng)?;
    store.register("flow.g.b0", &[h], Init::UniformFanIn(latent + 1), rng)?;
    store.register("flow.g.w1", &[latent, h], Init::UniformFanIn(h), rng)?;
    store.register("flow.g.b1", &[latent], Init::UniformFanIn(h), rng)?;
    store.register("flow.read.w0", &[h, latent], Init::UniformFanIn(latent), rng)?;
    store.register("flow.read.b0", &[h], Init::UniformFanIn(latent), rng)?;
    store.register("flow.read.w1", &[d, h], Init::UniformFanIn(h), rng)?;
    store.register("flow.read.b1", &[d], Init::UniformFanIn(h), rng)?;
    Ok(())
}

fn check_query_times(query_times: &[f64]) -> Result<(), ModelError> {
    for (i, &t) in query_times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(ModelError::BadQueryTimes(format!(
                "query time {t} at index {i} is before the anchor at 0"
            )));
        }
        if i > 0 && t < query_times[i - 1] {
            return Err(ModelError::BadQueryTimes(format!(
                "query times decrease at index {i}: {} then {t}",
                query_times[i - 1]
            )));
        }
    }
    Ok(())
}

/// One evaluation of the vector field: tanh MLP on (state ‖ t).
fn field_eval(
    tape: &Tape,
    params: &BoundParams,
    layers: usize,
    state: &Tensor,
    t: f64,
) -> Result<Tensor, ModelError> {
    let t_in = tape.constant(&Tensor::vector(vec![t]));
    let mut x = tape.concat(&[state, &t_in])?;
    for layer in 0..layers {
        let y = linear(tape, params, &format!("f.w{layer}"), &format!("f.b{layer}"), &x)?;
        if layer + 1 == layers {
            return Ok(y);
        }
        x = tape.tanh(&y)?;
    }
    Ok(x)
}

/// Forward-Euler grid from the anchor and linear readout at the queries.
/// Returns one state per query; a query exactly on a grid node returns that
/// node, so query_times = {0} returns z0 itself.
fn euler_readout(
    tape: &Tape,
    z0: &Tensor,
    query_times: &[f64],
    cfg: &DecoderConfig,
    params: &BoundParams,
) -> Result<Vec<Tensor>, ModelError> {
    check_query_times(query_times)?;
    if query_times.is_empty() {
        return Ok(Vec::new());
    }
    let span = *query_times.last().expect("non-empty");
    if span == 0.0 {
        return Ok(query_times.iter().map(|_| z0.clone()).collect());
    }
    if cfg.solver_step < 0.0 || !cfg.solver_step.is_finite() {
        return Err(ModelError::Config(format!("bad solver step {}", cfg.solver_step)));
    }
    let h = if cfg.solver_step > 0.0 { cfg.solver_step } else { span / 200.0 };
    let n_steps = ((span / h) - 1e-9).ceil().max(1.0) as usize;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(z0.clone());
    for k in 0..n_steps {
        let t = k as f64 * h;
        let f = field_eval(tape, params, cfg.layers, &states[k], t)?;
        states.push(tape.add(&states[k], &tape.scale(&f, h)?)?);
    }
    let mut out = Vec::with_capacity(query_times.len());
    for &t in query_times {
        let u = t / h;
        let mut j = u.floor() as usize;
        let mut frac = u - j as f64;
        if j >= n_steps {
            j = n_steps;
            frac = 0.0;
        }
        if frac <= 1e-12 {
            out.push(states[j].clone());
        } else {
            let a = tape.scale(&states[j], 1.0 - frac)?;
            let b = tape.scale(&states[j + 1], frac)?;
            out.push(tape.add(&a, &b)?);
        }
    }
    Ok(out)
}

/// NODE decoder: Euler-integrate the learned field from z0 and read out at
/// the query times by linear interpolation between Euler nodes.
pub fn decode_node(
    tape: &Tape,
    z0: &Tensor,
    query_times: &[f64],
    cfg: &DecoderConfig,
    params: &BoundParams,
) -> Result<Vec<Tensor>, ModelError> {
    euler_readout(tape, z0, query_times, cfg, params)
}

/// ANODE decoder: same integration on the state padded with zero-initialized
/// augmentation channels, projected back to the first d coordinates.
pub fn decode_anode(
    tape: &Tape,
    z0: &Tensor,
    query_times: &[f64],
    cfg: &DecoderConfig,
    params: &BoundParams,
) -> Result<Vec<Tensor>, ModelError> {
    if cfg.augment_dims == 0 {
        return euler_readout(tape, z0, query_times, cfg, params);
    }
    let d = z0.len();
    let pad = tape.constant(&Tensor::zeros(&[cfg.augment_dims]));
    let z0_aug = tape.concat(&[z0, &pad])?;
    let states = euler_readout(tape, &z0_aug, query_times, cfg, params)?;
    states
        .iter()
        .map(|s| Ok(tape.slice(s, 0, d)?))
        .collect()
}

/// Flow decoder: F(t, z0) = z0 + tanh(alpha ⊙ t) ⊙ g(t, z0) with g kept
/// contractive, then a readout MLP into state space. F(0, ·) is exactly the
/// identity because tanh(0) = 0.
pub fn decode_flow(
    tape: &Tape,
    z0: &Tensor,
    query_times: &[f64],
    _cfg: &DecoderConfig,
    params: &BoundParams,
) -> Result<Vec<Tensor>, ModelError> {
    check_query_times(query_times)?;
    let l = z0.len();
    let alpha = params.get("flow.alpha");
    let mut out = Vec::with_capacity(query_times.len());
    for &t in query_times {
        let t_vec = tape.constant(&Tensor::filled(&[l], t));
        let gate = tape.tanh(&tape.mul(alpha, &t_vec)?)?;
        let t_in = tape.constant(&Tensor::vector(vec![t]));
        let g_in = tape.concat(&[z0, &t_in])?;
        let g_hidden = tape.tanh(&linear(tape, params, "flow.g.w0", "flow.g.b0", &g_in)?)?;
        let g_out = linear(tape, params, "flow.g.w1", "flow.g.b1", &g_hidden)?;
        let latent = tape.add(z0, &tape.mul(&gate, &g_out)?)?;
        let r_hidden = tape.tanh(&linear(tape, params, "flow.read.w0", "flow.read.b0", &latent)?)?;
        out.push(linear(tape, params, "flow.read.w1", "flow.read.b1", &r_hidden)?);
    }
    Ok(out)
}

/// Largest singular value by power iteration on a row-major rows x cols
/// matrix. Deterministic: fixed start vector, fixed iteration count.
pub fn spectral_norm_estimate(mat: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(mat.len(), rows * cols, "matrix data does not fill rows x cols");
    // Slightly asymmetric start so it is never orthogonal to the top
    // singular direction by symmetry accident.
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + 1e-3 * i as f64).collect();
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..100 {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = (0..cols).map(|j| mat[i * cols + j] * v[j]).sum();
        }
        let un: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if un == 0.0 {
            return 0.0;
        }
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = (0..rows).map(|i| mat[i * cols + j] * u[i]).sum::<f64>() / un;
        }
        let vn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 {
            return 0.0;
        }
        for vj in v.iter_mut() {
            *vj /= vn;
        }
        sigma = vn;
    }
    sigma
}

/// Rescales the two weight matrices of g so the product of their spectral
/// norms stays below 1 (target 0.99, the safety margin absorbing power-
/// iteration slack). Returns the product bound after rescaling. Call after
/// init and after every optimizer step; biases and alpha are untouched, so
/// the map stays expressive while the contraction certificate holds.
pub fn flow_contraction_rescale(store: &mut ParamStore) -> Result<f64, ModelError> {
    let (r0, c0) = {
        let s = store
            .shape("flow.g.w0")
            .ok_or_else(|| ModelError::Config("flow weights are not registered".to_string()))?;
        (s[0], s[1])
    };
    let (r1, c1) = {
        let s = store.shape("flow.g.w1").expect("w1 registered with w0");
        (s[0], s[1])
    };
    let s0 = spectral_norm_estimate(store.values("flow.g.w0").expect("registered"), r0, c0);
    let s1 = spectral_norm_estimate(store.values("flow.g.w1").expect("registered"), r1, c1);
    let product = s0 * s1;
    if product <= 0.99 {
        return Ok(product);
    }
    let shrink = (0.99 / product).sqrt();
    for w in store.values_mut("flow.g.w0").expect("registered") {
        *w *= shrink;
    }
    for w in store.values_mut("flow.g.w1").expect("registered") {
        *w *= shrink;
    }
    Ok(0.99)
}

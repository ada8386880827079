//! Delay differential equations: benchmark systems and a fixed-step solver.
//!
//! Each system is an autonomous DDE with a single constant delay `tau`,
//!
//!     x'(t) = f(x(t), x(t - tau)),
//!
//! integrated by the method of steps: classical RK4 on a uniform grid of
//! step `h <= tau`, with the delayed state read from constant pre-history
//! (`x0` for `t <= t_start`) or from cubic Hermite interpolation over an
//! already-computed grid interval. The Hermite evaluation is written in
//! incremental form, `x_j + dx * h01 + h * (...)`, so a constant solution
//! is reproduced without rounding: equilibria stay pinned to the bit.
//!
//! Blow-ups are reported, not silently propagated: the first non-finite
//! state aborts the run with the time at which it appeared.

pub mod dataset;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::TimeSeries;

#[derive(Debug, Error)]
pub enum DdeError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("unknown parameter `{key}` for {system}; valid keys: {valid}")]
    UnknownParam { system: String, key: String, valid: String },
    #[error("delay must be positive, got {0}")]
    NonPositiveDelay(f64),
    #[error("initial state has {got} components, system needs {want}")]
    BadInitialState { got: usize, want: usize },
    #[error("integration window [{start}, {end}] is empty")]
    EmptyWindow { start: f64, end: f64 },
    #[error("step {step} exceeds the delay {delay}; the method of steps needs step <= delay")]
    StepExceedsDelay { step: f64, delay: f64 },
    #[error("step {step} does not divide the window of length {span}")]
    StepWindowMismatch { step: f64, span: f64 },
    #[error("non-finite state at t = {t}; the trajectory blew up")]
    BlowUp { t: f64 },
    #[error("{0}")]
    Dataset(String),
}

/// Right-hand sides with parameters resolved to plain floats.
#[derive(Debug, Clone, Copy)]
enum Rhs {
    /// x1' = x1 (1 - x2(t-tau)),  x2' = r x2 (x1(t-tau) - 1).
    /// The predator equation carries the classic sign: the growth-growth
    /// variant turns (1,1) into a saddle and every lattice start runs away.
    LotkaVolterra { r: f64 },
    /// x' = A tanh(x + x(t-tau)) componentwise inside the tanh
    Spiral { a: [f64; 4] },
    /// x1' = x1 - x1^3/3 - gamma x2(t-tau) + i_ext,
    /// x2' = epsilon (gamma x1 + a - b x2)
    FitzhughNagumo { a: f64, b: f64, epsilon: f64, i_ext: f64, gamma: f64 },
    /// x1' = -x2 - x3,  x2' = x1 + a x2,  x3' = b + x3 (x1(t-tau) - c)
    Rossler { a: f64, b: f64, c: f64 },
}

impl Rhs {
    fn eval(&self, x: &[f64], xd: &[f64], out: &mut [f64]) {
        match *self {
            Rhs::LotkaVolterra { r } => {
                out[0] = x[0] * (1.0 - xd[1]);
                out[1] = r * x[1] * (xd[0] - 1.0);
            }
            Rhs::Spiral { a } => {
                let u = (x[0] + xd[0]).tanh();
                let v = (x[1] + xd[1]).tanh();
                out[0] = a[0] * u + a[1] * v;
                out[1] = a[2] * u + a[3] * v;
            }
            Rhs::FitzhughNagumo { a, b, epsilon, i_ext, gamma } => {
                out[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - gamma * xd[1] + i_ext;
                out[1] = epsilon * (gamma * x[0] + a - b * x[1]);
            }
            Rhs::Rossler { a, b, c } => {
                out[0] = -x[1] - x[2];
                out[1] = x[0] + a * x[1];
                out[2] = b + x[2] * (xd[0] - c);
            }
        }
    }
}

/// A benchmark system: dimension, delay, parameter map, and the defaults
/// used when generating datasets (time window and initial-condition box).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdeSystem {
    pub name: String,
    pub dim: usize,
    pub delay: f64,
    pub params: BTreeMap<String, f64>,
    /// Generation window. `open_start` drops the first grid node, so the
    /// sampled trajectory lives on (start, end] while the constant history
    /// is still anchored at `start`.
    pub t_start: f64,
    pub t_end: f64,
    pub open_start: bool,
    /// Per-component initial-condition box for lattice sampling.
    pub ic_low: Vec<f64>,
    pub ic_high: Vec<f64>,
}

fn param(map: &BTreeMap<String, f64>, key: &str) -> f64 {
    map[key]
}

impl DdeSystem {
    fn compile(&self) -> Rhs {
        let p = &self.params;
        match self.name.as_str() {
            "lotka_volterra_dde" => Rhs::LotkaVolterra { r: param(p, "r") },
            "spiral_dde" => Rhs::Spiral {
                a: [param(p, "a11"), param(p, "a12"), param(p, "a21"), param(p, "a22")],
            },
            "fitzhugh_nagumo_dde" => Rhs::FitzhughNagumo {
                a: param(p, "a"),
                b: param(p, "b"),
                epsilon: param(p, "epsilon"),
                i_ext: param(p, "i_ext"),
                gamma: param(p, "gamma"),
            },
            "rossler_dde" => {
                Rhs::Rossler { a: param(p, "a"), b: param(p, "b"), c: param(p, "c") }
            }
            other => unreachable!("unvalidated system `{other}`"),
        }
    }

    /// Evaluate the right-hand side at time `t`, current state `x`, and
    /// delayed state `xd`. All four benchmark systems are autonomous, so
    /// `t` is accepted for interface uniformity and ignored.
    pub fn rhs(&self, _t: f64, x: &[f64], xd: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.compile().eval(x, xd, &mut out);
        out
    }
}

/// Build a benchmark system by name, with optional parameter overrides.
/// Unknown names and unknown parameter keys are rejected; `tau` must stay
/// positive.
pub fn make_system(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<DdeSystem, DdeError> {
    let canonical = if name.ends_with("_dde") {
        name.to_string()
    } else {
        format!("{name}_dde")
    };
    let mut system = match canonical.as_str() {
        "lotka_volterra_dde" => DdeSystem {
            name: canonical,
            dim: 2,
            delay: 0.1,
            params: BTreeMap::from([("tau".to_string(), 0.1), ("r".to_string(), 0.5)]),
            t_start: 2.0,
            t_end: 30.0,
            open_start: false,
            ic_low: vec![0.1, 0.1],
            ic_high: vec![2.0, 2.0],
        },
        "spiral_dde" => DdeSystem {
            name: canonical,
            dim: 2,
            delay: 2.5,
            params: BTreeMap::from([
                ("tau".to_string(), 2.5),
                ("a11".to_string(), -1.0),
                ("a12".to_string(), 1.0),
                ("a21".to_string(), -1.0),
                ("a22".to_string(), -1.0),
            ]),
            t_start: 0.0,
            t_end: 20.0,
            open_start: true,
            ic_low: vec![-2.0, -2.0],
            ic_high: vec![2.0, 2.0],
        },
        "fitzhugh_nagumo_dde" => DdeSystem {
            name: canonical,
            dim: 2,
            delay: 1.0,
            params: BTreeMap::from([
                ("tau".to_string(), 1.0),
                ("a".to_string(), 0.5),
                ("b".to_string(), 0.8),
                ("epsilon".to_string(), 0.02),
                ("i_ext".to_string(), 0.5),
                ("gamma".to_string(), 1.0),
            ]),
            t_start: 2.0,
            t_end: 30.0,
            open_start: false,
            ic_low: vec![-5.0, -5.0],
            ic_high: vec![5.0, 5.0],
        },
        "rossler_dde" => DdeSystem {
            name: canonical,
            dim: 3,
            delay: 2.5,
            params: BTreeMap::from([
                ("tau".to_string(), 2.5),
                ("a".to_string(), 0.2),
                ("b".to_string(), 0.2),
                ("c".to_string(), 4.5),
            ]),
            t_start: 2.0,
            t_end: 20.0,
            open_start: false,
            ic_low: vec![0.1, 0.1, 0.1],
            ic_high: vec![1.5, 1.5, 1.5],
        },
        _ => return Err(DdeError::UnknownSystem(name.to_string())),
    };
    for (key, &value) in overrides {
        if !system.params.contains_key(key) {
            let valid = system
                .params
                .keys()
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join(", ");
            return Err(DdeError::UnknownParam {
                system: system.name,
                key: key.clone(),
                valid,
            });
        }
        system.params.insert(key.clone(), value);
    }
    let tau = system.params["tau"];
    if !(tau > 0.0) {
        return Err(DdeError::NonPositiveDelay(tau));
    }
    system.delay = tau;
    Ok(system)
}

/// Grid solution with node derivatives, as produced by `integrate`.
struct Grid {
    t_start: f64,
    step: f64,
    x0: Vec<f64>,
    dim: usize,
    /// Node states, row-major over nodes; grows as integration proceeds.
    xs: Vec<f64>,
    /// Node derivatives, same layout.
    ms: Vec<f64>,
}

impl Grid {
    /// Delayed-state lookup at query time `t`, which must not be ahead of
    /// the last completed node. Constant history before `t_start`; cubic
    /// Hermite inside completed intervals; exact node values on hits.
    fn state_at(&self, t: f64, out: &mut [f64]) {
        if t <= self.t_start {
            out.copy_from_slice(&self.x0);
            return;
        }
        let n_nodes = self.xs.len() / self.dim;
        let u = (t - self.t_start) / self.step;
        let mut j = u.floor() as usize;
        let mut s = u - j as f64;
        if s >= 1.0 - 1e-9 && j + 1 < n_nodes {
            j += 1;
            s = 0.0;
        }
        let j = j.min(n_nodes - 1);
        if s <= 1e-9 || j == n_nodes - 1 {
            out.copy_from_slice(&self.xs[j * self.dim..(j + 1) * self.dim]);
            return;
        }
        let h01 = s * s * (3.0 - 2.0 * s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h11 = s * s * (s - 1.0);
        for c in 0..self.dim {
            let xj = self.xs[j * self.dim + c];
            let xj1 = self.xs[(j + 1) * self.dim + c];
            let mj = self.ms[j * self.dim + c];
            let mj1 = self.ms[(j + 1) * self.dim + c];
            out[c] = xj + (xj1 - xj) * h01 + self.step * (mj * h10 + mj1 * h11);
        }
    }
}

/// Integrate from constant history `x(t) = x0` for `t <= t_start` over
/// `[t_start, t_end]` with fixed step `step`. The step must divide the
/// window and must not exceed the delay.
pub fn integrate(
    system: &DdeSystem,
    x0: &[f64],
    t_start: f64,
    t_end: f64,
    step: f64,
) -> Result<TimeSeries, DdeError> {
    if x0.len() != system.dim {
        return Err(DdeError::BadInitialState { got: x0.len(), want: system.dim });
    }
    if !(t_end > t_start) {
        return Err(DdeError::EmptyWindow { start: t_start, end: t_end });
    }
    let tau = system.delay;
    if step > tau * (1.0 + 1e-12) {
        return Err(DdeError::StepExceedsDelay { step, delay: tau });
    }
    let span = t_end - t_start;
    let n_steps = (span / step).round();
    if n_steps < 1.0 || (n_steps * step - span).abs() > 1e-9 * span.max(1.0) {
        return Err(DdeError::StepWindowMismatch { step, span });
    }
    let n_steps = n_steps as usize;
    let dim = system.dim;
    let rhs = system.compile();

    let mut grid = Grid {
        t_start,
        step,
        x0: x0.to_vec(),
        dim,
        xs: Vec::with_capacity((n_steps + 1) * dim),
        ms: Vec::with_capacity((n_steps + 1) * dim),
    };
    grid.xs.extend_from_slice(x0);
    let mut d0 = vec![0.0; dim];
    let mut xd = vec![0.0; dim];
    grid.state_at(t_start - tau, &mut xd);
    rhs.eval(x0, &xd, &mut d0);
    grid.ms.extend_from_slice(&d0);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    let mut next = vec![0.0; dim];

    for i in 0..n_steps {
        let t = t_start + i as f64 * step;
        let x = grid.xs[i * dim..(i + 1) * dim].to_vec();
        k1.copy_from_slice(&grid.ms[i * dim..(i + 1) * dim]);

        // The two midpoint stages share one delayed lookup.
        grid.state_at(t + 0.5 * step - tau, &mut xd);
        for c in 0..dim {
            stage[c] = x[c] + 0.5 * step * k1[c];
        }
        rhs.eval(&stage, &xd, &mut k2);
        for c in 0..dim {
            stage[c] = x[c] + 0.5 * step * k2[c];
        }
        rhs.eval(&stage, &xd, &mut k3);

        grid.state_at(t + step - tau, &mut xd);
        for c in 0..dim {
            stage[c] = x[c] + step * k3[c];
        }
        rhs.eval(&stage, &xd, &mut k4);

        // Stage terms are scaled before accumulation so the combination
        // only overflows when the state itself does.
        for c in 0..dim {
            next[c] = x[c]
                + step / 6.0 * k1[c]
                + step / 3.0 * k2[c]
                + step / 3.0 * k3[c]
                + step / 6.0 * k4[c];
        }
        let t_next = t_start + (i + 1) as f64 * step;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DdeError::BlowUp { t: t_next });
        }
        grid.xs.extend_from_slice(&next);
        grid.state_at(t_next - tau, &mut xd);
        rhs.eval(&next, &xd, &mut k1);
        grid.ms.extend_from_slice(&k1);
    }

    let times: Vec<f64> = (0..=n_steps).map(|i| t_start + i as f64 * step).collect();
    TimeSeries::new(times, grid.xs, dim).map_err(DdeError::Dataset)
}

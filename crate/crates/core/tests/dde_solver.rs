use std::collections::BTreeMap;

use sigdyn::dde::{integrate, make_system, DdeError, DdeSystem};

fn no_overrides() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn overrides(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Max |x(t) - x0| over every node and component.
fn max_drift(system: &DdeSystem, x0: &[f64], steps: usize) -> f64 {
    let step = (system.t_end - system.t_start) / steps as f64;
    let traj = integrate(system, x0, system.t_start, system.t_end, step).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        for (c, &v) in traj.point(i).iter().enumerate() {
            worst = worst.max((v - x0[c]).abs());
        }
    }
    worst
}

#[test]
fn lotka_volterra_equilibrium_is_pinned() {
    let sys = make_system("lotka_volterra_dde", &no_overrides()).unwrap();
    assert!(max_drift(&sys, &[1.0, 1.0], 999) < 1e-9);
}

#[test]
fn spiral_origin_stays_zero() {
    let sys = make_system("spiral_dde", &no_overrides()).unwrap();
    assert!(max_drift(&sys, &[0.0, 0.0], 1000) < 1e-9);
}

fn offset_ulps(x: f64, n: i64) -> f64 {
    let mut y = x;
    if n >= 0 {
        for _ in 0..n {
            y = y.next_up();
        }
    } else {
        for _ in 0..-n {
            y = y.next_down();
        }
    }
    y
}

/// The cubic nullcline intersection of the relaxation system is linearly
/// unstable, so any rounding in the seed would be amplified by ten orders
/// of magnitude across the window. The test therefore searches the ulp
/// neighborhood of the analytic fixed point for a float pair where the
/// right-hand side evaluates to exactly (0, 0); the integrator must then
/// hold it without drift.
#[test]
fn fitzhugh_nagumo_equilibrium_is_pinned() {
    let sys = make_system("fitzhugh_nagumo_dde", &no_overrides()).unwrap();

    // Real root of x^3 + 0.75 x + 0.375 = 0 by Newton iteration.
    let mut x1 = -0.41;
    for _ in 0..60 {
        let f = x1 * x1 * x1 + 0.75 * x1 + 0.375;
        let df = 3.0 * x1 * x1 + 0.75;
        x1 -= f / df;
    }

    let mut stationary = None;
    'scan: for i in -2000..=2000i64 {
        let c1 = offset_ulps(x1, i);
        let base2 = (c1 + 0.5) / 0.8;
        for j in -4..=4i64 {
            let c2 = offset_ulps(base2, j);
            let r = sys.rhs(0.0, &[c1, c2], &[c1, c2]);
            if r[0] == 0.0 && r[1] == 0.0 {
                stationary = Some([c1, c2]);
                break 'scan;
            }
        }
    }
    let x0 = stationary.expect("no exactly-stationary float pair near the fixed point");
    assert!(x0[0] > -0.45 && x0[0] < -0.35, "wrong root: {}", x0[0]);
    let residual = x0[0] * x0[0] * x0[0] + 0.75 * x0[0] + 0.375;
    assert!(residual.abs() < 1e-9);
    assert!(max_drift(&sys, &x0, 999) < 1e-9);
}

#[test]
fn make_system_defaults_match_published_values() {
    let sys = make_system("rossler_dde", &no_overrides()).unwrap();
    assert_eq!(sys.dim, 3);
    assert_eq!(sys.params["a"], 0.2);
    assert_eq!(sys.params["b"], 0.2);
    assert_eq!(sys.params["c"], 4.5);
    assert_eq!(sys.params["tau"], 2.5);

    let lv = make_system("lotka_volterra_dde", &no_overrides()).unwrap();
    assert_eq!(lv.delay, 0.1);
    let spiral = make_system("spiral_dde", &no_overrides()).unwrap();
    assert_eq!(spiral.delay, 2.5);
    assert_eq!(spiral.params["a11"], -1.0);
    assert_eq!(spiral.params["a12"], 1.0);
    assert_eq!(spiral.params["a21"], -1.0);
    assert_eq!(spiral.params["a22"], -1.0);
    let fhn = make_system("fitzhugh_nagumo_dde", &no_overrides()).unwrap();
    assert_eq!(fhn.delay, 1.0);
    assert_eq!(fhn.params["a"], 0.5);
    assert_eq!(fhn.params["b"], 0.8);
    assert_eq!(fhn.params["epsilon"], 0.02);
    assert_eq!(fhn.params["i_ext"], 0.5);
    assert_eq!(fhn.params["gamma"], 1.0);
}

#[test]
fn coupling_override_scales_both_terms() {
    let sys = make_system("fitzhugh_nagumo_dde", &overrides(&[("gamma", 2.0)])).unwrap();
    assert_eq!(sys.params["gamma"], 2.0);
    // With gamma = 2 the delayed inhibition doubles and so does the
    // activator's influence on recovery.
    let r = sys.rhs(0.0, &[0.0, 0.0], &[0.0, 1.0]);
    assert_eq!(r[0], 0.5 - 2.0);
    let r = sys.rhs(0.0, &[1.0, 0.0], &[0.0, 0.0]);
    assert!((r[1] - 0.02 * 2.5).abs() < 1e-15);
}

#[test]
fn zero_delay_rejected() {
    let err = make_system("spiral_dde", &overrides(&[("tau", 0.0)])).unwrap_err();
    assert!(matches!(err, DdeError::NonPositiveDelay(_)));
}

#[test]
fn unknown_system_and_param_rejected() {
    assert!(matches!(
        make_system("van_der_pol_dde", &no_overrides()),
        Err(DdeError::UnknownSystem(_))
    ));
    let err = make_system("rossler_dde", &overrides(&[("q", 1.0)])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("q"));
    assert!(msg.contains("tau"), "error should list valid keys: {msg}");
}

#[test]
fn integrate_rejects_bad_arguments() {
    let sys = make_system("lotka_volterra_dde", &no_overrides()).unwrap();
    assert!(matches!(
        integrate(&sys, &[1.0, 1.0, 1.0], 2.0, 30.0, 0.01),
        Err(DdeError::BadInitialState { got: 3, want: 2 })
    ));
    assert!(matches!(
        integrate(&sys, &[1.0, 1.0], 2.0, 2.0, 0.01),
        Err(DdeError::EmptyWindow { .. })
    ));
    assert!(matches!(
        integrate(&sys, &[1.0, 1.0], 2.0, 30.0, 0.2),
        Err(DdeError::StepExceedsDelay { .. })
    ));
    assert!(matches!(
        integrate(&sys, &[1.0, 1.0], 2.0, 3.0, 0.03),
        Err(DdeError::StepWindowMismatch { .. })
    ));
}

#[test]
fn blow_up_aborts_with_time() {
    let sys = make_system("lotka_volterra_dde", &no_overrides()).unwrap();
    match integrate(&sys, &[1e300, 1e-300], 2.0, 30.0, 28.0 / 999.0) {
        Err(DdeError::BlowUp { t }) => assert!(t > 2.0 && t <= 30.0),
        other => panic!("expected blow-up, got {other:?}"),
    }
}

/// Classical RK4 for a plain ODE, used as an independent reference.
fn rk4_ode(
    f: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Vec<Vec<f64>> {
    let h = (t1 - t0) / steps as f64;
    let d = x0.len();
    let mut xs = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    for _ in 0..steps {
        let k1 = f(&x);
        let mut s: Vec<f64> = (0..d).map(|c| x[c] + 0.5 * h * k1[c]).collect();
        let k2 = f(&s);
        s = (0..d).map(|c| x[c] + 0.5 * h * k2[c]).collect();
        let k3 = f(&s);
        s = (0..d).map(|c| x[c] + h * k3[c]).collect();
        let k4 = f(&s);
        x = (0..d)
            .map(|c| x[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]))
            .collect();
        xs.push(x.clone());
    }
    xs
}

/// With the coupling zeroed the relaxation system never reads its history,
/// so the delay machinery must reproduce a plain ODE integration.
#[test]
fn history_independent_rhs_matches_plain_rk4() {
    let sys = make_system("fitzhugh_nagumo_dde", &overrides(&[("gamma", 0.0)])).unwrap();
    let x0 = [0.3, -0.2];
    let steps = 1000;
    let traj = integrate(&sys, &x0, 2.0, 10.0, 8.0 / steps as f64).unwrap();
    let reference = rk4_ode(
        |x| {
            vec![
                x[0] - x[0] * x[0] * x[0] / 3.0 + 0.5,
                0.02 * (0.5 - 0.8 * x[1]),
            ]
        },
        &x0,
        2.0,
        10.0,
        steps,
    );
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        for c in 0..2 {
            worst = worst.max((traj.point(i)[c] - reference[i][c]).abs());
        }
    }
    assert!(worst < 1e-8, "worst deviation {worst}");
}

/// Max deviation between a coarse run and a reference run on the coarse
/// nodes that fall inside [t_lo, t_end]. Both grids must nest in the
/// reference grid.
fn error_vs_reference(
    system: &DdeSystem,
    x0: &[f64],
    t_start: f64,
    t_end: f64,
    coarse_steps: usize,
    ref_steps: usize,
    t_lo: f64,
) -> f64 {
    let coarse =
        integrate(system, x0, t_start, t_end, (t_end - t_start) / coarse_steps as f64)
            .unwrap();
    let fine =
        integrate(system, x0, t_start, t_end, (t_end - t_start) / ref_steps as f64)
            .unwrap();
    assert_eq!(ref_steps % coarse_steps, 0);
    let ratio = ref_steps / coarse_steps;
    let mut worst: f64 = 0.0;
    for i in 0..coarse.len() {
        if coarse.times()[i] < t_lo - 1e-12 {
            continue;
        }
        let f = fine.point(i * ratio);
        for (c, &v) in coarse.point(i).iter().enumerate() {
            worst = worst.max((v - f[c]).abs());
        }
    }
    worst
}

/// Derivative kinks sit at integer multiples of the delay past the window
/// start; delay-aligned steps put them on grid nodes, and past the second
/// kink the solution is smooth enough for the full fourth-order rate to
/// show.
#[test]
fn observed_convergence_order_is_fourth() {
    // (system, overrides, x0, t_end, steps at delay/k for k1, 2*k1, ref)
    let cases: Vec<(&str, Vec<f64>, f64, usize, usize)> = vec![
        ("lotka_volterra_dde", vec![1.2, 0.8], 6.0, 4, 64),
        ("spiral_dde", vec![1.5, -0.5], 20.0, 16, 256),
        ("fitzhugh_nagumo_dde", vec![1.0, 0.5], 10.0, 16, 256),
        ("rossler_dde", vec![0.5, 0.5, 0.5], 12.0, 16, 256),
    ];
    for (name, x0, t_end, k1, kref) in cases {
        let sys = make_system(name, &no_overrides()).unwrap();
        let t_start = if sys.open_start { 0.0 } else { sys.t_start };
        let span = t_end - t_start;
        let per_delay = span / sys.delay;
        // Step tau/k gives span/tau*k steps; spans here are integer
        // multiples of tau so the counts below are exact.
        let steps = |k: usize| (per_delay * k as f64).round() as usize;
        let t_lo = t_start + 2.0 * sys.delay;
        let e1 = error_vs_reference(&sys, &x0, t_start, t_end, steps(k1), steps(kref), t_lo);
        let e2 =
            error_vs_reference(&sys, &x0, t_start, t_end, steps(2 * k1), steps(kref), t_lo);
        let order = (e1 / e2).log2();
        assert!(
            order >= 3.5,
            "{name}: e({}) = {e1:.3e}, e({}) = {e2:.3e}, observed order {order:.2}",
            steps(k1),
            steps(2 * k1),
        );
    }
}

#[test]
fn halving_the_step_cuts_error_by_at_least_eight() {
    let sys = make_system("lotka_volterra_dde", &no_overrides()).unwrap();
    let x0 = [1.2, 0.8];
    let (t_start, t_end) = (2.0, 6.0);
    let t_lo = t_start + 2.0 * sys.delay;
    // Steps of delay/5 and delay/10 against a delay/80 reference.
    let e1 = error_vs_reference(&sys, &x0, t_start, t_end, 200, 3200, t_lo);
    let e2 = error_vs_reference(&sys, &x0, t_start, t_end, 400, 3200, t_lo);
    assert!(
        e1 / e2 >= 8.0,
        "e(h) = {e1:.3e}, e(h/2) = {e2:.3e}, ratio {:.2}",
        e1 / e2
    );
}

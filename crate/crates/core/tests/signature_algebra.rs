use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sigdyn::autodiff::{gradient_check, Tape, Tensor};
use sigdyn::signature::{
    chen_concat, segment_signature, sig_dimension, signature, time_augment, PiecewiseLinearPath,
    TruncatedSignature,
};

// ---------------------------------------------------------------------------
// Oracle: iterated integrals by direct quadrature of their defining ODE,
//   d/dt I_{w.j}(t) = I_w(t) * x'_j(t),   I_()(t) = 1,
// stepped with classical RK4 at ~10^4 steps across the whole polyline. No
// Chen products, no factorials; completely independent of the implementation.
// ---------------------------------------------------------------------------

fn oracle_signature(points: &[Vec<f64>], depth: usize, total_steps: usize) -> Vec<Vec<f64>> {
    let e = points[0].len();
    let segs = points.len() - 1;
    let steps_per_seg = total_steps.div_ceil(segs);

    // levels[k] has e^k entries, k = 1..=depth; level 0 is the constant 1.
    let mut levels: Vec<Vec<f64>> = (1..=depth).map(|k| vec![0.0; e.pow(k as u32)]).collect();

    let deriv = |state: &[Vec<f64>], v: &[f64]| -> Vec<Vec<f64>> {
        let mut d: Vec<Vec<f64>> = Vec::with_capacity(depth);
        d.push(v.to_vec());
        for k in 2..=depth {
            let prev = &state[k - 2];
            let mut out = vec![0.0; e.pow(k as u32)];
            for (w, &pw) in prev.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    out[w * e + j] = pw * vj;
                }
            }
            d.push(out);
        }
        d
    };

    let axpy = |a: &[Vec<f64>], b: &[Vec<f64>], w: f64| -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| u + w * v).collect())
            .collect()
    };

    for s in 0..segs {
        let v: Vec<f64> = (0..e).map(|c| points[s + 1][c] - points[s][c]).collect();
        let h = 1.0 / steps_per_seg as f64;
        for _ in 0..steps_per_seg {
            let k1 = deriv(&levels, &v);
            let k2 = deriv(&axpy(&levels, &k1, h / 2.0), &v);
            let k3 = deriv(&axpy(&levels, &k2, h / 2.0), &v);
            let k4 = deriv(&axpy(&levels, &k3, h), &v);
            for k in 0..depth {
                for i in 0..levels[k].len() {
                    levels[k][i] +=
                        h / 6.0 * (k1[k][i] + 2.0 * k2[k][i] + 2.0 * k3[k][i] + k4[k][i]);
                }
            }
        }
    }
    levels
}

fn sig_of(points: &[Vec<f64>], depth: usize) -> TruncatedSignature {
    let tape = Tape::new();
    let path = PiecewiseLinearPath::from_points(
        points.iter().map(|p| Tensor::vector(p.clone())).collect(),
    )
    .unwrap();
    signature(&tape, &path, depth).unwrap()
}

fn assert_levels_close(a: &TruncatedSignature, b: &TruncatedSignature, tol: f64, what: &str) {
    assert_eq!(a.depth(), b.depth());
    for k in 0..=a.depth() {
        for (i, (&x, &y)) in a.level(k).data().iter().zip(b.level(k).data()).enumerate() {
            assert!(
                (x - y).abs() < tol,
                "{what}: level {k} coeff {i}: {x} vs {y} (diff {:.3e})",
                (x - y).abs()
            );
        }
    }
}

fn rand_path(r: &mut ChaCha12Rng, n: usize, e: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..e).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

// ---------------------------------------------------------------------------

#[test]
fn segment_signature_powers_over_factorials() {
    let tape = Tape::new();
    let one = Tensor::vector(vec![1.0]);
    let sig = segment_signature(&tape, &one, 3).unwrap();
    assert_eq!(sig.level(0).data(), &[1.0]);
    assert_eq!(sig.level(1).data(), &[1.0]);
    assert!((sig.level(2).data()[0] - 0.5).abs() < 1e-15);
    assert!((sig.level(3).data()[0] - 1.0 / 6.0).abs() < 1e-15);

    let v = Tensor::vector(vec![1.0, 2.0]);
    let sig = segment_signature(&tape, &v, 2).unwrap();
    assert_eq!(sig.level(1).data(), &[1.0, 2.0]);
    assert_eq!(sig.level(2).data(), &[0.5, 1.0, 1.0, 2.0]);

    let zero = Tensor::vector(vec![0.0, 0.0]);
    let sig = segment_signature(&tape, &zero, 4).unwrap();
    for k in 1..=4 {
        assert!(sig.level(k).data().iter().all(|&c| c == 0.0), "level {k} not zero");
    }
}

#[test]
fn chen_of_equal_segments_is_doubled_segment() {
    let tape = Tape::new();
    let v = Tensor::vector(vec![0.3, -0.8, 0.5]);
    let v2 = Tensor::vector(vec![0.6, -1.6, 1.0]);
    let a = segment_signature(&tape, &v, 3).unwrap();
    let b = segment_signature(&tape, &v, 3).unwrap();
    let joined = chen_concat(&tape, &a, &b).unwrap();
    let direct = segment_signature(&tape, &v2, 3).unwrap();
    assert_levels_close(&joined, &direct, 1e-12, "v then v equals 2v");
}

#[test]
fn chen_with_zero_segment_is_identity() {
    let tape = Tape::new();
    let v = Tensor::vector(vec![0.7, 0.1]);
    let zero = Tensor::vector(vec![0.0, 0.0]);
    let a = segment_signature(&tape, &v, 3).unwrap();
    let z = segment_signature(&tape, &zero, 3).unwrap();
    let left = chen_concat(&tape, &z, &a).unwrap();
    let right = chen_concat(&tape, &a, &z).unwrap();
    assert_levels_close(&left, &a, 1e-15, "zero segment on the left");
    assert_levels_close(&right, &a, 1e-15, "zero segment on the right");
}

#[test]
fn chen_rejects_mismatched_operands() {
    let tape = Tape::new();
    let a = segment_signature(&tape, &Tensor::vector(vec![1.0, 2.0]), 3).unwrap();
    let b = segment_signature(&tape, &Tensor::vector(vec![1.0]), 3).unwrap();
    assert!(chen_concat(&tape, &a, &b).is_err());
    let c = segment_signature(&tape, &Tensor::vector(vec![1.0, 2.0]), 2).unwrap();
    assert!(chen_concat(&tape, &a, &c).is_err());
}

#[test]
fn staircase_matches_hand_values_and_oracle() {
    // Unit staircase (0,0) -> (1,0) -> (1,1): the classic depth-2 table.
    let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let sig = sig_of(&points, 2);
    assert_eq!(sig.level(1).data(), &[1.0, 1.0]);
    let l2 = sig.level(2).data();
    assert!((l2[0] - 0.5).abs() < 1e-15); // S^11
    assert!((l2[1] - 1.0).abs() < 1e-15); // S^12: all the area
    assert!(l2[2].abs() < 1e-15); // S^21: none
    assert!((l2[3] - 0.5).abs() < 1e-15); // S^22

    let oracle = oracle_signature(&points, 2, 10_000);
    for (i, &c) in oracle[0].iter().enumerate() {
        assert!((c - sig.level(1).data()[i]).abs() < 1e-9);
    }
    for (i, &c) in oracle[1].iter().enumerate() {
        assert!((c - l2[i]).abs() < 1e-9);
    }
}

#[test]
fn one_dimensional_path_is_exponential_of_net_increment() {
    let points = vec![vec![0.0], vec![1.0]];
    let sig = sig_of(&points, 3);
    assert_eq!(sig.level(1).data(), &[1.0]);
    assert!((sig.level(2).data()[0] - 0.5).abs() < 1e-15);
    assert!((sig.level(3).data()[0] - 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn oracle_agrees_on_random_paths() {
    let mut r = ChaCha12Rng::seed_from_u64(41);
    for e in 1..=3usize {
        for n in [3usize, 5, 6] {
            let points = rand_path(&mut r, n, e);
            let sig = sig_of(&points, 3);
            let oracle = oracle_signature(&points, 3, 10_000);
            for k in 1..=3usize {
                for (i, &c) in oracle[k - 1].iter().enumerate() {
                    let got = sig.level(k).data()[i];
                    assert!(
                        (got - c).abs() < 1e-8,
                        "e={e} n={n} level {k} coeff {i}: {got} vs oracle {c}"
                    );
                }
            }
        }
    }
}

#[test]
fn concatenation_splits_through_chen() {
    let mut r = ChaCha12Rng::seed_from_u64(43);
    for _ in 0..10 {
        let points = rand_path(&mut r, 7, 3);
        let cut = r.gen_range(1..6usize);
        let full = sig_of(&points, 3);
        let left = sig_of(&points[..=cut], 3);
        let right = sig_of(&points[cut..], 3);
        let tape = Tape::new();
        let joined = chen_concat(&tape, &left, &right).unwrap();
        assert_levels_close(&joined, &full, 1e-10, "chen split");
    }
}

#[test]
fn collinear_refinement_leaves_signature_unchanged() {
    let mut r = ChaCha12Rng::seed_from_u64(47);
    for _ in 0..10 {
        let points = rand_path(&mut r, 5, 2);
        let base = sig_of(&points, 3);

        // Refine each segment with 1..3 interior interpolation points.
        let mut refined: Vec<Vec<f64>> = vec![points[0].clone()];
        for s in 0..points.len() - 1 {
            let extra = r.gen_range(1..=3usize);
            for j in 1..=extra {
                let w = j as f64 / (extra + 1) as f64;
                refined.push(
                    points[s]
                        .iter()
                        .zip(&points[s + 1])
                        .map(|(&a, &b)| a + w * (b - a))
                        .collect(),
                );
            }
            refined.push(points[s + 1].clone());
        }
        let fine = sig_of(&refined, 3);
        assert_levels_close(&fine, &base, 1e-12, "collinear refinement");
    }
}

#[test]
fn level_norms_decay_factorially() {
    let mut r = ChaCha12Rng::seed_from_u64(53);
    for _ in 0..5 {
        let points = rand_path(&mut r, 8, 3);
        let tv: f64 = points
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(&b, &a)| (b - a).powi(2)).sum::<f64>().sqrt())
            .sum();
        let sig = sig_of(&points, 5);
        let mut factorial = 1.0;
        for k in 1..=5usize {
            factorial *= k as f64;
            let norm: f64 = sig.level(k).data().iter().map(|c| c * c).sum::<f64>().sqrt();
            let bound = tv.powi(k as i32) / factorial + 1e-12;
            assert!(norm <= bound, "level {k}: norm {norm} exceeds {bound}");
        }
    }
}

#[test]
fn shuffle_identity_at_level_two() {
    let mut r = ChaCha12Rng::seed_from_u64(59);
    for _ in 0..10 {
        let e = 3;
        let points = rand_path(&mut r, 6, e);
        let sig = sig_of(&points, 2);
        let l1 = sig.level(1).data();
        let l2 = sig.level(2).data();
        for i in 0..e {
            for j in 0..e {
                let lhs = l2[i * e + j] + l2[j * e + i];
                let rhs = l1[i] * l1[j];
                assert!((lhs - rhs).abs() < 1e-10, "shuffle ({i},{j}): {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn dimension_formula_matches_flattened_length() {
    let mut r = ChaCha12Rng::seed_from_u64(61);
    for e in 1..=6usize {
        for depth in 1..=5usize {
            let points = rand_path(&mut r, 3, e);
            let sig = sig_of(&points, depth);
            let tape = Tape::new();
            let flat = sig.flatten(&tape).unwrap();
            assert_eq!(flat.len(), sig_dimension(e, depth), "e={e} N={depth}");
        }
    }
    assert_eq!(sig_dimension(7, 3), 400);
    assert_eq!(sig_dimension(2, 1), 3);
    assert_eq!(sig_dimension(3, 2), 13);
    assert_eq!(sig_dimension(1, 5), 6);
}

#[test]
fn flattened_order_is_levels_then_lexicographic() {
    // Two segments chosen so every level-2 coefficient is distinct.
    let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0]];
    let sig = sig_of(&points, 2);
    let tape = Tape::new();
    let flat = sig.flatten(&tape).unwrap();
    let expect: Vec<f64> = [1.0]
        .iter()
        .chain(sig.level(1).data())
        .chain(sig.level(2).data())
        .copied()
        .collect();
    assert_eq!(flat.data(), &expect[..]);
}

#[test]
fn time_augmentation_separates_a_round_trip_from_rest() {
    // A 1-D out-and-back excursion has the same raw signature as never
    // moving; prepending time tells them apart.
    let excursion = vec![vec![0.0], vec![1.0], vec![0.0]];
    let parked = vec![vec![0.0], vec![0.0], vec![0.0]];
    let raw_a = sig_of(&excursion, 2);
    let raw_b = sig_of(&parked, 2);
    assert_levels_close(&raw_a, &raw_b, 1e-15, "raw signatures coincide");

    let tape = Tape::new();
    let times = [0.0, 1.0, 2.0];
    let build = |pts: &[Vec<f64>]| {
        let p = PiecewiseLinearPath::from_points(
            pts.iter().map(|v| Tensor::vector(v.clone())).collect(),
        )
        .unwrap();
        let aug = time_augment(&tape, &p, &times).unwrap();
        assert_eq!(aug.channels(), 2);
        signature(&tape, &aug, 2).unwrap()
    };
    let aug_a = build(&excursion);
    let aug_b = build(&parked);
    // Level 1, channel 0 is the elapsed time either way.
    assert!((aug_a.level(1).data()[0] - 2.0).abs() < 1e-15);
    let max_diff: f64 = aug_a
        .level(2)
        .data()
        .iter()
        .zip(aug_b.level(2).data())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(max_diff > 0.1, "augmented signatures should differ, max diff {max_diff}");
}

#[test]
fn signature_is_differentiable_in_path_points() {
    // A plain sum over coefficients would be degenerate (by the shuffle
    // identity it collapses to a function of the net increment, so interior
    // points get exactly zero gradient); weight the coefficients instead.
    let mut r = ChaCha12Rng::seed_from_u64(67);
    let flat: Vec<f64> = (0..18).map(|_| r.gen_range(-1.0..1.0)).collect();
    let weights = Tensor::vector((0..sig_dimension(3, 3)).map(|_| r.gen_range(-1.0..1.0)).collect());
    let point = Tensor::vector(flat);
    let err = gradient_check(
        |tape, x| {
            let mat = tape.reshape(x, vec![6, 3])?;
            let mut pts = Vec::with_capacity(6);
            for i in 0..6 {
                let row = tape.slice(&mat, i, 1)?;
                pts.push(tape.reshape(&row, vec![3])?);
            }
            let path = PiecewiseLinearPath::from_points(pts).expect("valid path");
            let sig = signature(tape, &path, 3).expect("signature");
            let flat = sig.flatten(tape).expect("flatten");
            tape.sum(&tape.mul(&flat, &weights)?)
        },
        &point,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn rejects_degenerate_inputs() {
    let tape = Tape::new();
    let p = PiecewiseLinearPath::from_rows(1, 2, &[0.0, 0.0]).unwrap();
    assert!(signature(&tape, &p, 3).is_err());
    let p2 = PiecewiseLinearPath::from_rows(3, 2, &[0.0; 6]).unwrap();
    assert!(signature(&tape, &p2, 0).is_err());
    assert!(segment_signature(&tape, &Tensor::vector(vec![1.0]), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_chen_split_equals_full(seed in 0u64..1000, cut in 1usize..5) {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        let points = rand_path(&mut r, 6, 2);
        let full = sig_of(&points, 3);
        let left = sig_of(&points[..=cut], 3);
        let right = sig_of(&points[cut..], 3);
        let tape = Tape::new();
        let joined = chen_concat(&tape, &left, &right).unwrap();
        for k in 0..=3usize {
            for (x, y) in joined.level(k).data().iter().zip(full.level(k).data()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prop_midpoint_insertion_invariant(seed in 0u64..1000, seg in 0usize..4) {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        let points = rand_path(&mut r, 5, 3);
        let base = sig_of(&points, 3);
        let mut refined = points.clone();
        let mid: Vec<f64> = points[seg]
            .iter()
            .zip(&points[seg + 1])
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect();
        refined.insert(seg + 1, mid);
        let fine = sig_of(&refined, 3);
        for k in 0..=3usize {
            for (x, y) in fine.level(k).data().iter().zip(base.level(k).data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

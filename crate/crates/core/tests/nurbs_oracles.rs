use emotive::nurbs::{adapt_from_profile, KnotVector, Trajectory, KNOT_EPSILON};
use ndarray::Array4;
use proptest::prelude::*;

/// Textbook recursive Cox-de Boor with the last non-empty span closed at
/// the right end.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let last = *knots.last().unwrap();
        if t >= a && t < b {
            return 1.0;
        }
        // Closed interval for the final non-empty span.
        if t == last && b == last && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let mut out = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        out += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        out += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
    }
    out
}

fn knot_case() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=5)
        .prop_flat_map(|p| (Just(p), (p + 1)..=(p + 6)))
        .prop_flat_map(|(p, n)| {
            let interior = n - p - 1;
            (Just(n), Just(p), proptest::collection::vec(0.001f64..0.999, interior))
        })
        .prop_map(|(n, p, mut interior)| {
            interior.sort_by(f64::total_cmp);
            (n, p, interior)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn basis_matches_recursive_oracle((n, p, interior) in knot_case(), t in 0.0f64..=1.0) {
        let kv = KnotVector::clamped(n, p, &interior).unwrap();
        let all = kv.basis_all(t);
        for (i, &v) in all.iter().enumerate() {
            let want = cox_de_boor(kv.knots(), i, p, t);
            prop_assert!((v - want).abs() <= 1e-12, "N_{i} = {v} vs {want}");
        }
    }

    #[test]
    fn partition_of_unity_and_positivity((n, p, interior) in knot_case(), t in 0.0f64..=1.0) {
        let kv = KnotVector::clamped(n, p, &interior).unwrap();
        let all = kv.basis_all(t);
        prop_assert!(all.iter().all(|&v| v >= 0.0));
        prop_assert!((all.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(kv.basis_derivative_all(t).iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn greville_linear_precision((n, p, interior) in knot_case(), t in 0.0f64..=1.0) {
        let kv = KnotVector::clamped(n, p, &interior).unwrap();
        let s: f64 = kv.basis_all(t).iter().zip(kv.greville()).map(|(b, g)| b * g).sum();
        prop_assert!((s - t).abs() <= 1e-12);
    }

    #[test]
    fn rational_curve_interpolates_endpoints(
        (n, p, interior) in knot_case(),
        seed in proptest::collection::vec(-5.0f64..5.0, 22),
        wseed in proptest::collection::vec(0.2f64..3.0, 11),
    ) {
        let kv = KnotVector::clamped(n, p, &interior).unwrap();
        let mut control = Array4::zeros((n, 1, 1, 2));
        for i in 1..n {
            control[[i, 0, 0, 0]] = seed[2 * i];
            control[[i, 0, 0, 1]] = seed[2 * i + 1];
        }
        let traj = Trajectory::new(control, wseed[..n].to_vec(), kv).unwrap();
        prop_assert_eq!(traj.eval_at(0.0, 0, 0), [0.0, 0.0]);
        let end = traj.eval_at(1.0, 0, 0);
        prop_assert!((end[0] - seed[2 * (n - 1)]).abs() <= 1e-12);
        prop_assert!((end[1] - seed[2 * (n - 1) + 1]).abs() <= 1e-12);
    }

    #[test]
    fn velocity_matches_central_difference(
        (n, p, interior) in knot_case(),
        seed in proptest::collection::vec(-5.0f64..5.0, 22),
        wseed in proptest::collection::vec(0.2f64..3.0, 11),
        t in 0.02f64..0.98,
    ) {
        let kv = KnotVector::clamped(n, p, &interior).unwrap();
        // Keep away from knots where the derivative may jump.
        prop_assume!(kv.knots().iter().all(|k| (k - t).abs() > 1e-3));
        let mut control = Array4::zeros((n, 1, 1, 2));
        for i in 1..n {
            control[[i, 0, 0, 0]] = seed[2 * i];
            control[[i, 0, 0, 1]] = seed[2 * i + 1];
        }
        let traj = Trajectory::new(control, wseed[..n].to_vec(), kv).unwrap();
        let h = 1e-6;
        let a = traj.eval_at(t + h, 0, 0);
        let b = traj.eval_at(t - h, 0, 0);
        let v = traj.velocity_at(t, 0, 0);
        for c in 0..2 {
            let fd = (a[c] - b[c]) / (2.0 * h);
            prop_assert!((fd - v[c]).abs() <= 1e-5 * v[c].abs().max(1.0), "{fd} vs {}", v[c]);
        }
    }

    #[test]
    fn adaptation_invariants(
        profile in proptest::collection::vec(-50.0f64..50.0, 6..12),
        p in 1usize..4,
        extra in 1usize..4,
    ) {
        let n = (p + extra).min(profile.len());
        prop_assume!(n > p);
        let r = adapt_from_profile(&profile, n, p).unwrap();
        let knots = r.knots.knots();
        prop_assert_eq!(knots.len(), n + p + 1);
        prop_assert!(knots[..=p].iter().all(|&k| k == 0.0));
        prop_assert!(knots[n..].iter().all(|&k| k == 1.0));
        let interior = r.knots.interior();
        prop_assert!(interior.iter().all(|&k| (KNOT_EPSILON - 1e-15..=1.0 - KNOT_EPSILON + 1e-15).contains(&k)));
        prop_assert!(interior.windows(2).all(|w| w[1] - w[0] >= KNOT_EPSILON - 1e-12));
        prop_assert!(r.weights.iter().all(|&w| w > 0.0));
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        // Stable sort descending picks the same blocks.
        let mut order: Vec<usize> = (0..profile.len()).collect();
        order.sort_by(|&a, &b| profile[b].partial_cmp(&profile[a]).unwrap());
        let mut top: Vec<usize> = order[..n].iter().map(|i| i + 1).collect();
        top.sort();
        prop_assert_eq!(&r.anchor_indices, &top);
        for (t, i) in r.anchor_times.iter().zip(&top) {
            prop_assert_eq!(*t, *i as f64 / profile.len() as f64);
        }
    }
}

#[test]
fn bezier_line_is_three_t() {
    let kv = KnotVector::clamped(4, 3, &[]).unwrap();
    let mut traj = Trajectory::zeros(kv, vec![1.0; 4], 1, 1).unwrap();
    for i in 1..4 {
        traj.set_control(i, 0, 0, [i as f64, 0.0]).unwrap();
    }
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        assert!((traj.eval_at(t, 0, 0)[0] - 3.0 * t).abs() <= 1e-12);
        assert!((traj.velocity_at(t, 0, 0)[0] - 3.0).abs() <= 1e-12);
    }
    assert_eq!(traj.eval_at(0.5, 0, 0)[0], 1.5);
}

#[test]
fn uniform_profile_gives_equal_weights() {
    for n in 2..=6 {
        let r = adapt_from_profile(&[0.7; 6], n, 1).unwrap();
        for w in &r.weights {
            assert!((w - 1.0 / n as f64).abs() <= 1e-12);
        }
    }
}

#[test]
fn degree_zero_and_short_profiles_rejected() {
    assert!(adapt_from_profile(&[1.0; 6], 5, 0).is_err());
    assert!(adapt_from_profile(&[1.0; 3], 5, 3).is_err());
}

use emotive::events::{slice_window, Event, EventStream, SensorSize};
use emotive::projection::{
    box_mean_replicate, density_field, event_kymograph, event_voxel, Kymograph,
};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn stream(events: Vec<Event>, h: usize, w: usize, window: (u64, u64)) -> EventStream {
    EventStream::from_unsorted(events, SensorSize::new(h, w), window).unwrap()
}

fn events_strategy(h: u16, w: u16, end: u64) -> impl Strategy<Value = Vec<Event>> {
    proptest::collection::vec(
        (0..=end, 0..w, 0..h, prop_oneof![Just(1i8), Just(-1i8)]).prop_map(|(t, x, y, p)| Event::new(t, x, y, p)),
        0..60,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polarity_antisymmetry(events in events_strategy(6, 7, 1000)) {
        let s = stream(events, 6, 7, (0, 1000));
        let neg = s.negated();
        prop_assert_eq!(event_voxel(&neg, 7).unwrap().data, -event_voxel(&s, 7).unwrap().data);
        let k = event_kymograph(&s, 30, 4.0).unwrap();
        let kn = event_kymograph(&neg, 30, 4.0).unwrap();
        prop_assert_eq!(kn.kx, -k.kx);
        prop_assert_eq!(kn.ky, -k.ky);
    }

    #[test]
    fn linearity_over_disjoint_pixels(a in events_strategy(4, 4, 900), b in events_strategy(4, 4, 900)) {
        // `a` lives in rows/cols 0..4, `b` is shifted to rows/cols 4..8.
        let b: Vec<Event> = b.into_iter().map(|e| Event::new(e.t, e.x + 4, e.y + 4, e.p)).collect();
        let sa = stream(a, 8, 8, (0, 900));
        let sb = stream(b, 8, 8, (0, 900));
        let merged = sa.merge(&sb).unwrap();
        let v = event_voxel(&merged, 7).unwrap().data;
        prop_assert_eq!(v, event_voxel(&sa, 7).unwrap().data + event_voxel(&sb, 7).unwrap().data);
        let k = event_kymograph(&merged, 40, 5.0).unwrap();
        let ka = event_kymograph(&sa, 40, 5.0).unwrap();
        let kb = event_kymograph(&sb, 40, 5.0).unwrap();
        prop_assert_eq!(k.kx, ka.kx + kb.kx);
        prop_assert_eq!(k.ky, ka.ky + kb.ky);
    }

    #[test]
    fn linearity_general(a in events_strategy(5, 5, 500), b in events_strategy(5, 5, 500)) {
        let sa = stream(a, 5, 5, (0, 500));
        let sb = stream(b, 5, 5, (0, 500));
        let merged = sa.merge(&sb).unwrap();
        let k = event_kymograph(&merged, 25, 3.0).unwrap();
        let sum = event_kymograph(&sa, 25, 3.0).unwrap().kx + event_kymograph(&sb, 25, 3.0).unwrap().kx;
        prop_assert!(k.kx.iter().zip(&sum).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn slices_compose(events in events_strategy(3, 3, 100), a in 0u64..30, b in 30u64..60, c in 60u64..101) {
        let s = stream(events, 3, 3, (0, 100));
        let left = slice_window(&s, a, b).unwrap();
        let right = slice_window(&s, b, c).unwrap();
        let whole = slice_window(&s, a, c).unwrap();
        let mut joined = left.events().to_vec();
        joined.extend_from_slice(right.events());
        prop_assert_eq!(joined.as_slice(), whole.events());
    }

    #[test]
    fn voxel_preserves_signed_mass(events in events_strategy(4, 4, 777)) {
        let s = stream(events.clone(), 4, 4, (0, 777));
        let total: f64 = events.iter().map(|e| e.p as f64).sum();
        prop_assert!((event_voxel(&s, 7).unwrap().data.sum() - total).abs() <= 1e-9);
    }
}

#[test]
fn single_event_kernel_values() {
    // Window 0..600 with 7 bins: bin centers every 100 us.
    let sensor = SensorSize::new(2, 2);
    let at = |t: u64| EventStream::new(vec![Event::new(t, 1, 0, 1)], sensor, (0, 600)).unwrap();
    let v = event_voxel(&at(200), 7).unwrap();
    assert_eq!(v.data[[2, 0, 1]], 1.0);
    assert_eq!(v.data.sum(), 1.0);
    let v = event_voxel(&at(250), 7).unwrap();
    assert_eq!(v.data[[2, 0, 1]], 0.5);
    assert_eq!(v.data[[3, 0, 1]], 0.5);

    // 120 bins over 119 us: the event sits exactly on bin 50.
    let s = EventStream::new(vec![Event::new(50, 1, 1, 1)], sensor, (0, 119)).unwrap();
    let k = event_kymograph(&s, 120, 10.0).unwrap();
    assert!((k.kx[[50, 1]] - 1.0).abs() <= 1e-12);
    assert!((k.kx[[60, 1]] - (-1.0f64).exp()).abs() <= 1e-12);
    assert!((k.ky[[40, 1]] - (-1.0f64).exp()).abs() <= 1e-12);
}

fn box_mean_oracle(e: &Array3<f64>, pool: [usize; 3]) -> Array3<f64> {
    let (a, h, w) = e.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let off = |k: usize| (k as isize - 1) / 2;
    let mut out = Array3::zeros((a, h, w));
    for k in 0..a {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dk in 0..pool[0] as isize {
                    for dy in 0..pool[1] as isize {
                        for dx in 0..pool[2] as isize {
                            acc += e[[
                                clamp(k as isize + dk - off(pool[0]), a),
                                clamp(y as isize + dy - off(pool[1]), h),
                                clamp(x as isize + dx - off(pool[2]), w),
                            ]];
                        }
                    }
                }
                out[[k, y, x]] = acc / (pool[0] * pool[1] * pool[2]) as f64;
            }
        }
    }
    out
}

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*seed >> 11) as f64) / (1u64 << 53) as f64 * 2.0 - 1.0
}

#[test]
fn pooling_matches_triple_loop_oracle() {
    let mut seed = 42;
    for pool in [[3, 3, 3], [1, 3, 5], [2, 4, 1], [6, 8, 8]] {
        let e = Array3::from_shape_fn((6, 8, 8), |_| lcg(&mut seed));
        let got = box_mean_replicate(&e, pool);
        let want = box_mean_oracle(&e, pool);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{pool:?}: {g} vs {w}");
        }
    }
}

#[test]
fn density_field_matches_oracle() {
    let mut seed = 7;
    // 20 bins in 6 blocks: blocks of 4 bins, the last padded with zeros.
    let kymo = Kymograph {
        kx: Array2::from_shape_fn((20, 8), |_| lcg(&mut seed)),
        ky: Array2::from_shape_fn((20, 8), |_| lcg(&mut seed)),
        sigma: 1.0,
        window: (0, 1),
    };
    let d = density_field(&kymo, 6, [3, 3, 3]).unwrap();
    let mut es = Array3::zeros((6, 8, 8));
    for k in 0..6 {
        for y in 0..8 {
            for x in 0..8 {
                let (mut sx, mut sy) = (0.0, 0.0);
                for b in 4 * k..(4 * k + 4).min(20) {
                    sx += kymo.kx[[b, x]];
                    sy += kymo.ky[[b, y]];
                }
                es[[k, y, x]] = sx * sy;
            }
        }
    }
    for (g, w) in d.es.iter().zip(&es) {
        assert!((g - w).abs() <= 1e-12);
    }
    let ds = box_mean_oracle(&es, [3, 3, 3]);
    for (g, w) in d.ds.iter().zip(&ds) {
        assert!((g - w).abs() <= 1e-12);
    }
}

#[test]
fn lateral_motion_draws_a_straight_band() {
    use emotive::events::{synth_rigid_scene, CameraIntrinsics, RigidSceneConfig};
    let cfg = RigidSceneConfig {
        points: vec![[-1.2, 0.0, 10.0]],
        velocity: [20.0, 0.0, 0.0],
        duration: 1.0,
        intrinsics: CameraIntrinsics::new(10.0, 10.0, 16.0, 8.0).unwrap(),
        contrast_threshold: 0.25,
        sensor: SensorSize::new(16, 32),
    };
    let (s, _) = synth_rigid_scene(&cfg, 5).unwrap();
    let k = event_kymograph(&s, 120, 2.0).unwrap();
    // Column of the ridge at each time bin, fitted with a line.
    let pts: Vec<(f64, f64)> = (10..110)
        .map(|b| {
            let row = k.kx.row(b);
            let x = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            (b as f64 / 119.0, x as f64)
        })
        .collect();
    let n = pts.len() as f64;
    let (mt, mx) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - mx)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    // fx * V / Z = 20 px per second.
    assert!((slope - 20.0).abs() < 1.0, "slope {slope}");
}

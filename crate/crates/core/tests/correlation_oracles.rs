use emotive::correlation::{
    bilinear_zero, fuse_temporal, query_neighborhood, spatial_cost_pyramid, temporal_cost_pyramid, CostQuery,
    FeatureAxis, FeatureMap,
};
use ndarray::{Array2, Array3, Ix3, Ix4, Ix5};
use proptest::prelude::*;

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*seed >> 11) as f64) / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Mean of the `k x k` cell `(i, j)` of channel `c`.
fn pool2(f: &Array3<f64>, c: usize, i: usize, j: usize, k: usize) -> f64 {
    let mut acc = 0.0;
    for a in 0..k {
        for b in 0..k {
            acc += f[[c, i * k + a, j * k + b]];
        }
    }
    acc / (k * k) as f64
}

fn pool1(f: &Array2<f64>, c: usize, i: usize, k: usize) -> f64 {
    (0..k).map(|a| f[[c, i * k + a]]).sum::<f64>() / k as f64
}

#[test]
fn spatial_pyramid_matches_loops() {
    let mut seed = 1;
    let (d, h, w) = (4, 8, 8);
    let prev = Array3::from_shape_fn((d, h, w), |_| lcg(&mut seed));
    let next = Array3::from_shape_fn((d, h, w), |_| lcg(&mut seed));
    let pyr = spatial_cost_pyramid(
        &FeatureMap::spatial(prev.clone()).unwrap(),
        &FeatureMap::spatial(next.clone()).unwrap(),
        2,
    )
    .unwrap();
    for m in 0..2 {
        let k = 1 << m;
        let level = pyr.levels[m].view().into_dimensionality::<Ix4>().unwrap();
        assert_eq!(level.dim(), (h, w, h / k, w / k));
        for i in 0..h {
            for j in 0..w {
                for a in 0..h / k {
                    for b in 0..w / k {
                        let want: f64 =
                            (0..d).map(|c| prev[[c, i, j]] * pool2(&next, c, a, b, k)).sum::<f64>() / d as f64;
                        assert!((level[[i, j, a, b]] - want).abs() <= 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn temporal_and_fused_pyramids_match_loops() {
    let mut seed = 9;
    let (d, h, w, blocks) = (4, 8, 8, 4);
    let rows: Vec<Array2<f64>> = (0..blocks).map(|_| Array2::from_shape_fn((d, h), |_| lcg(&mut seed))).collect();
    let cols: Vec<Array2<f64>> = (0..blocks).map(|_| Array2::from_shape_fn((d, w), |_| lcg(&mut seed))).collect();
    let ht: Vec<FeatureMap> = rows
        .iter()
        .enumerate()
        .map(|(b, r)| FeatureMap::axis(r.clone(), FeatureAxis::Ht, b + 1).unwrap())
        .collect();
    let wt: Vec<FeatureMap> = cols
        .iter()
        .enumerate()
        .map(|(b, c)| FeatureMap::axis(c.clone(), FeatureAxis::Wt, b + 1).unwrap())
        .collect();
    let c_ht = temporal_cost_pyramid(&ht, 2).unwrap();
    let c_wt = temporal_cost_pyramid(&wt, 2).unwrap();
    let fused = fuse_temporal(&c_ht, &c_wt).unwrap();
    for m in 0..2 {
        let k = 1 << m;
        let lh = c_ht.levels[m].view().into_dimensionality::<Ix3>().unwrap();
        let lw = c_wt.levels[m].view().into_dimensionality::<Ix3>().unwrap();
        let lf = fused.levels[m].view().into_dimensionality::<Ix5>().unwrap();
        assert_eq!(lf.dim(), (blocks - 1, h, w, h / k, w / k));
        for n in 1..blocks {
            let row_cost = |i: usize, j: usize| {
                (0..d).map(|c| rows[0][[c, i]] * pool1(&rows[n], c, j, k)).sum::<f64>() / d as f64
            };
            let col_cost = |i: usize, j: usize| {
                (0..d).map(|c| cols[0][[c, i]] * pool1(&cols[n], c, j, k)).sum::<f64>() / d as f64
            };
            for i in 0..h {
                for j in 0..h / k {
                    assert!((lh[[n - 1, i, j]] - row_cost(i, j)).abs() <= 1e-10);
                }
            }
            for i in 0..w {
                for j in 0..w / k {
                    assert!((lw[[n - 1, i, j]] - col_cost(i, j)).abs() <= 1e-10);
                }
            }
            for y in 0..h {
                for x in 0..w {
                    for a in 0..h / k {
                        for b in 0..w / k {
                            let want = row_cost(y, a) * col_cost(x, b);
                            assert!((lf[[n - 1, y, x, a, b]] - want).abs() <= 1e-10);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn lookup_at_integer_positions_is_exact() {
    let mut seed = 3;
    let prev = Array3::from_shape_fn((4, 8, 8), |_| lcg(&mut seed));
    let next = Array3::from_shape_fn((4, 8, 8), |_| lcg(&mut seed));
    let pyr = spatial_cost_pyramid(
        &FeatureMap::spatial(prev).unwrap(),
        &FeatureMap::spatial(next).unwrap(),
        2,
    )
    .unwrap();
    let positions = Array3::from_shape_fn((8, 8, 2), |(y, x, c)| if c == 0 { x as f64 + 2.0 } else { y as f64 - 2.0 });
    let r = 2;
    let patch = query_neighborhood(&pyr, &[CostQuery { block: 0, positions }], r).unwrap();
    let l0 = pyr.levels[0].view().into_dimensionality::<Ix4>().unwrap();
    for y in 0..8 {
        for x in 0..8 {
            let win = patch.window(y, x, 0, 0);
            for dy in 0..5 {
                for dx in 0..5 {
                    let (py, px) = (y as isize - 2 + dy as isize - 2, x as isize + 2 + dx as isize - 2);
                    let want = if (0..8).contains(&py) && (0..8).contains(&px) {
                        l0[[y, x, py as usize, px as usize]]
                    } else {
                        0.0
                    };
                    assert_eq!(win[[dy, dx]].to_bits(), want.to_bits());
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn bilinear_reads(values in proptest::collection::vec(-10.0f64..10.0, 20), y in -3.0f64..7.0, x in -3.0f64..8.0) {
        let grid = Array2::from_shape_vec((4, 5), values).unwrap();
        let (yi, xi) = (y.round(), x.round());
        let exact = bilinear_zero(grid.view(), yi, xi);
        if (0.0..4.0).contains(&yi) && (0.0..5.0).contains(&xi) {
            prop_assert_eq!(exact.to_bits(), grid[[yi as usize, xi as usize]].to_bits());
        } else {
            prop_assert_eq!(exact, 0.0);
        }
        if y <= -1.0 || x <= -1.0 || y >= 4.0 || x >= 5.0 {
            prop_assert_eq!(bilinear_zero(grid.view(), y, x), 0.0);
        }
        // Interpolant stays within the hull of its corners and zero.
        let lo = grid.iter().copied().fold(0.0f64, f64::min);
        let hi = grid.iter().copied().fold(0.0f64, f64::max);
        let v = bilinear_zero(grid.view(), y, x);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

use std::cell::Cell;

use emotive::correlation::{features_from_projections, CostVolumes};
use emotive::events::{synth_rigid_scene, CameraIntrinsics, RigidSceneConfig, SensorSize};
use emotive::fitting::{
    fit_trajectory_lsq, refine_trajectory, CorrespondenceSet, FusedFeatures, GradientStepUpdater, LossConfig,
    LsqOptions, Updater,
};
use emotive::motion::flow_epe;
use emotive::nurbs::{density_adapt, AdaptationResult, KnotVector, Trajectory};
use emotive::projection::{density_field, event_kymograph, event_voxel};
use emotive::Result;
use ndarray::Array4;
use proptest::prelude::*;

fn exact_opts() -> LsqOptions {
    LsqOptions {
        smoothness: 0.0,
        ridge: 0.0,
        smoothness_grid: 0,
    }
}

fn eight_times() -> Vec<f64> {
    (1..=8).map(|k| k as f64 / 8.0).collect()
}

fn max_flow_error(a: &Trajectory, b: &Trajectory) -> f64 {
    (0..=50)
        .map(|k| {
            let t = k as f64 / 50.0;
            (&a.eval(t) - &b.eval(t)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v))
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_cubic_recovered(
        interior in 0.05f64..0.95,
        weights in proptest::collection::vec(0.3f64..3.0, 5),
        controls in proptest::collection::vec(-8.0f64..8.0, 2 * 4 * 6),
    ) {
        let knots = KnotVector::clamped(5, 3, &[interior]).unwrap();
        let mut c = Array4::zeros((5, 2, 3, 2));
        let mut it = controls.iter();
        for i in 1..5 {
            for y in 0..2 {
                for x in 0..3 {
                    c[[i, y, x, 0]] = *it.next().unwrap();
                    c[[i, y, x, 1]] = *it.next().unwrap();
                }
            }
        }
        let truth = Trajectory::new(c, weights.clone(), knots.clone()).unwrap();
        let corr = CorrespondenceSet::from_trajectory(&truth, &eight_times()).unwrap();
        let fit = fit_trajectory_lsq(&corr, &knots, &weights, &exact_opts()).unwrap();
        prop_assert!(max_flow_error(&fit.trajectory, &truth) <= 1e-6);

        // Refit from the fit's own samples.
        let again = CorrespondenceSet::from_trajectory(&fit.trajectory, &eight_times()).unwrap();
        let refit = fit_trajectory_lsq(&again, &knots, &weights, &exact_opts()).unwrap();
        prop_assert!(max_flow_error(&refit.trajectory, &fit.trajectory) <= 1e-9);
    }
}

#[test]
fn linear_motion_recovered_with_collinear_controls() {
    let knots = KnotVector::clamped(4, 3, &[]).unwrap();
    let mut truth = Trajectory::zeros(knots.clone(), vec![1.0; 4], 1, 1).unwrap();
    for i in 1..4 {
        truth.set_control(i, 0, 0, [i as f64, 0.0]).unwrap();
    }
    let corr = CorrespondenceSet::from_trajectory(&truth, &eight_times()).unwrap();
    let fit = fit_trajectory_lsq(&corr, &knots, &[1.0; 4], &exact_opts()).unwrap();
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let p = fit.trajectory.eval_at(t, 0, 0);
        assert!((p[0] - 3.0 * t).abs() <= 1e-9 && p[1].abs() <= 1e-9);
    }
    assert!(fit.diagnostics.max_residual <= 1e-9);
}

#[test]
fn light_smoothing_stays_close() {
    let knots = KnotVector::uniform(5, 3).unwrap();
    let mut truth = Trajectory::zeros(knots.clone(), vec![1.0; 5], 1, 1).unwrap();
    for i in 1..5 {
        truth.set_control(i, 0, 0, [1.5 * i as f64, -0.5 * i as f64]).unwrap();
    }
    let corr = CorrespondenceSet::from_trajectory(&truth, &eight_times()).unwrap();
    let opts = LsqOptions { smoothness: 1e-7, ..LsqOptions::default() };
    let fit = fit_trajectory_lsq(&corr, &knots, &[1.0; 5], &opts).unwrap();
    assert!(max_flow_error(&fit.trajectory, &truth) <= 1e-5);
    assert_eq!(fit.diagnostics.ridged_pixels, 0);
}

fn lateral_scene() -> (CostVolumes, AdaptationResult, emotive::events::GroundTruth) {
    let (z, f) = (10.0, 10.0);
    let points = [(3.0, 5.0), (13.0, 15.0), (23.0, 25.0)]
        .iter()
        .map(|&(x, y)| [(x - 16.0) * z / f, (y - 16.0) * z / f, z])
        .collect();
    let cfg = RigidSceneConfig {
        points,
        velocity: [6.0, 0.0, 0.0],
        duration: 1.0,
        intrinsics: CameraIntrinsics::new(f, f, 16.0, 16.0).unwrap(),
        contrast_threshold: 0.25,
        sensor: SensorSize::new(32, 32),
    };
    let (stream, gt) = synth_rigid_scene(&cfg, 1).unwrap();
    let voxel = event_voxel(&stream, 7).unwrap();
    let kymo = event_kymograph(&stream, 120, 10.0).unwrap();
    let adapt = density_adapt(&density_field(&kymo, 6, [3, 3, 3]).unwrap(), 5, 3).unwrap();
    let volumes = CostVolumes::build(&features_from_projections(&voxel, &kymo, 6, 1).unwrap(), 2).unwrap();
    (volumes, adapt, gt)
}

#[test]
fn default_updater_reduces_epe_monotonically() {
    let (volumes, adapt, gt) = lateral_scene();
    let traj0 = Trajectory::zeros(adapt.knots.clone(), adapt.weights.clone(), 32, 32).unwrap();
    let out = refine_trajectory(&traj0, &volumes, &adapt, &GradientStepUpdater::default(), &LossConfig::default())
        .unwrap();
    let truth = gt.flow_field(1.0);
    let epe: Vec<f64> = out.history.iter().map(|f| flow_epe(f, &truth, &truth.valid).unwrap()).collect();
    assert_eq!(epe.len(), 6);
    let start = flow_epe(&emotive::motion::FlowField::zeros(32, 32), &truth, &truth.valid).unwrap();
    assert!(epe[0] <= start);
    assert!(epe.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{epe:?}");
    assert!(epe[5] < 1.0, "{epe:?}");
}

struct EndpointShift {
    calls: Cell<usize>,
}

impl Updater for EndpointShift {
    fn increment(&self, _f: &FusedFeatures, traj: &Trajectory) -> Result<Array4<f64>> {
        self.calls.set(self.calls.get() + 1);
        let mut d = Array4::zeros(traj.control().raw_dim());
        let last = traj.control_count() - 1;
        d.index_axis_mut(ndarray::Axis(0), last)
            .index_axis_mut(ndarray::Axis(2), 0)
            .fill(1.0);
        Ok(d)
    }
}

#[test]
fn endpoint_increment_shifts_final_flow() {
    let (volumes, adapt, _) = lateral_scene();
    let traj0 = Trajectory::zeros(adapt.knots.clone(), adapt.weights.clone(), 32, 32).unwrap();
    let before = traj0.clone();
    let updater = EndpointShift { calls: Cell::new(0) };
    let cfg = LossConfig { iters: 1, ..LossConfig::default() };
    let out = refine_trajectory(&traj0, &volumes, &adapt, &updater, &cfg).unwrap();
    assert_eq!(updater.calls.get(), 1);
    assert_eq!(traj0, before);
    assert!(out.history[0].u.iter().all(|&u| u == 1.0));
    assert!(out.history[0].v.iter().all(|&v| v == 0.0));

    let cfg = LossConfig { iters: 4, ..LossConfig::default() };
    let counter = EndpointShift { calls: Cell::new(0) };
    refine_trajectory(&traj0, &volumes, &adapt, &counter, &cfg).unwrap();
    assert_eq!(counter.calls.get(), 4);
}

struct MovesPinned;

impl Updater for MovesPinned {
    fn increment(&self, _f: &FusedFeatures, traj: &Trajectory) -> Result<Array4<f64>> {
        Ok(Array4::from_elem(traj.control().raw_dim(), 0.5))
    }
}

#[test]
fn pinned_point_violations_are_rejected() {
    let (volumes, adapt, _) = lateral_scene();
    let traj0 = Trajectory::zeros(adapt.knots.clone(), adapt.weights.clone(), 32, 32).unwrap();
    assert!(refine_trajectory(&traj0, &volumes, &adapt, &MovesPinned, &LossConfig::default()).is_err());
}

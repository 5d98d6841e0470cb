use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use emotive::correlation::{features_from_projections, CostVolumes};
use emotive::events::{
    parse_event_stream, synth_rigid_scene, write_csv, write_raw_bin, EventFormat, EventStream, ParseOptions,
    RigidSceneConfig, SensorSize,
};
use emotive::fitting::{
    fit_trajectory_lsq, flow_loss, refine_trajectory_with, temporal_regularizer, CorrespondenceSet,
    GradientStepUpdater, LossConfig, LsqOptions,
};
use emotive::io::{
    default_max_flow, mid_from_container, mid_to_container, read_file, read_flo, trajectory_from_container,
    trajectory_to_container, write_file, write_flo, write_flow_ppm, write_pgm, Container,
};
use emotive::motion::{
    metrics, motion_in_depth_multiview, motion_in_depth_single, normalized_scene_flow, optical_flow,
    upsample_bilinear, upsample_nearest, FlowField, MiDField,
};
use emotive::nurbs::{density_adapt, KnotVector, Trajectory};
use emotive::projection::{density_field, event_kymograph, event_voxel, DEFAULT_POOL};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{EvalArgs, EventInput, FitArgs, FormatArg, MotionArgs, ProjectArgs, SynthArgs};

const SCHEMA: u32 = 1;
/// Upper bound on fused cost volume entries before `--downsample` is required.
const MAX_COST_ENTRIES: usize = 200_000_000;

/// 1 for failures of the computation, 2 for usage and input problems.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<emotive::Error>()) {
        Some(e) if !e.is_input_error() => 1,
        _ => 2,
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn save(prefix: &Path, suffix: &str, bytes: &[u8]) -> Result<()> {
    Ok(write_file(&suffixed(prefix, suffix), bytes)?)
}

fn save_json<T: Serialize>(prefix: &Path, suffix: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    save(prefix, suffix, text.as_bytes())
}

fn save_pgm(prefix: &Path, suffix: &str, image: &Array2<f64>) -> Result<()> {
    let (bytes, scale) = write_pgm(image);
    save(prefix, &format!("{suffix}.pgm"), &bytes)?;
    save_json(prefix, &format!("{suffix}.pgm.json"), &scale)
}

fn load_container(path: &Path) -> Result<Container> {
    let bytes = read_file(path)?;
    Container::from_bytes(&bytes).with_context(|| format!("reading {}", path.display()))
}

fn event_format(path: &Path, format: FormatArg) -> EventFormat {
    match format {
        FormatArg::Csv => EventFormat::Csv,
        FormatArg::Bin => EventFormat::RawBin,
        FormatArg::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => EventFormat::RawBin,
            _ => EventFormat::Csv,
        },
    }
}

fn load_events(path: &Path, format: FormatArg, sensor: SensorSize, strict: bool) -> Result<EventStream> {
    let bytes = read_file(path)?;
    let stream = parse_event_stream(&bytes, event_format(path, format), sensor, ParseOptions { strict })
        .with_context(|| format!("parsing {}", path.display()))?;
    if stream.is_empty() {
        eprintln!("warning: {} contains no events", path.display());
    }
    Ok(stream)
}

pub fn project(args: ProjectArgs) -> Result<()> {
    let EventInput {
        events,
        format,
        height,
        width,
        strict,
    } = args.input;
    let stream = load_events(&events, format, SensorSize::new(height, width), strict)?;
    let p = &args.params;
    let voxel = event_voxel(&stream, p.bins)?;
    let kymo = event_kymograph(&stream, p.t_bins, p.sigma)?;
    let density = density_field(&kymo, p.n_a, DEFAULT_POOL)?;
    let window = [voxel.window.0, voxel.window.1];

    let out = &args.out;
    let container = |data: ndarray::ArrayD<f64>, meta| Container::new(data, meta).to_bytes();
    save(
        out,
        "_voxel.emok",
        &container(
            voxel.data.clone().into_dyn(),
            json!({ "kind": "voxel", "bin_duration": voxel.bin_duration, "window": window }),
        ),
    )?;
    save(
        out,
        "_kymo_x.emok",
        &container(
            kymo.kx.clone().into_dyn(),
            json!({ "kind": "kymograph_x", "sigma": kymo.sigma, "window": window }),
        ),
    )?;
    save(
        out,
        "_kymo_y.emok",
        &container(
            kymo.ky.clone().into_dyn(),
            json!({ "kind": "kymograph_y", "sigma": kymo.sigma, "window": window }),
        ),
    )?;
    save(
        out,
        "_density.emok",
        &container(
            density.ds.clone().into_dyn(),
            json!({ "kind": "density", "pool": density.pool, "profile": density.temporal_profile() }),
        ),
    )?;
    save_pgm(out, "_voxel", &voxel.data.sum_axis(Axis(0)))?;
    save_pgm(out, "_kymo_x", &kymo.kx)?;
    save_pgm(out, "_kymo_y", &kymo.ky)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SynthConfig {
    schema: u32,
    #[serde(flatten)]
    scene: RigidSceneConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrespondenceFile {
    schema: u32,
    degree: usize,
    knots: Vec<f64>,
    weights: Vec<f64>,
    #[serde(flatten)]
    set: CorrespondenceSet,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let text = read_file(&args.config)?;
    let cfg: SynthConfig = serde_json::from_slice(&text)
        .map_err(|e| emotive::Error::Format(format!("{}: {e}", args.config.display())))?;
    if cfg.schema != SCHEMA {
        return Err(emotive::Error::Format(format!("unsupported config schema {}", cfg.schema)).into());
    }
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let (stream, gt) = synth_rigid_scene(&cfg.scene, args.seed)?;
    let out = &args.out;
    save(out, "_events.csv", write_csv(&stream).as_bytes())?;
    save(out, "_events.bin", &write_raw_bin(&stream))?;
    save(out, "_flow.flo", &write_flo(&gt.flow_field(1.0)))?;
    save(out, "_mid.emok", &mid_to_container(&gt.mid_field(1.0)).to_bytes())?;

    let knots = KnotVector::uniform(args.n, args.p)?;
    let (weights, exact) = match gt.exact_weights(&knots) {
        Ok(w) => (w, true),
        Err(emotive::Error::NonUniformDepth) => (vec![1.0; args.n], false),
        Err(e) => return Err(e.into()),
    };
    let times: Vec<f64> = (1..=args.samples).map(|k| k as f64 / args.samples as f64).collect();
    let corr = CorrespondenceSet::from_ground_truth(&gt, &times)?;
    save_json(
        out,
        "_corr.json",
        &CorrespondenceFile {
            schema: SCHEMA,
            degree: args.p,
            knots: knots.knots().to_vec(),
            weights: weights.clone(),
            set: corr,
        },
    )?;

    let pixels = gt.point_pixels();
    let points: Vec<_> = (0..gt.point_count())
        .map(|i| {
            json!({
                "index": i,
                "pixel": pixels[i].map(|(y, x)| [x, y]),
                "depth": gt.depth(i, 0.0),
                "flow_at_tau1": gt.flow(i, 1.0),
                "mid_at_tau1": gt.mid(i, 1.0),
            })
        })
        .collect();
    let mids: Vec<f64> = (0..gt.point_count()).map(|i| gt.mid(i, 1.0)).collect();
    save_json(
        out,
        "_manifest.json",
        &json!({
            "schema": SCHEMA,
            "seed": args.seed,
            "scene": cfg.scene,
            "event_count": stream.len(),
            "window_us": [stream.window().0, stream.window().1],
            "mid_at_tau1": mids,
            "points": points,
            "knots": knots.knots(),
            "weights": weights,
            "exact_weights": exact,
        }),
    )?;
    Ok(())
}

pub fn fit(args: FitArgs) -> Result<()> {
    match &args.lsq {
        Some(path) => fit_lsq(&args, path),
        None => fit_refine(&args),
    }
}

fn fit_lsq(args: &FitArgs, path: &Path) -> Result<()> {
    let text = read_file(path)?;
    let file: CorrespondenceFile = serde_json::from_slice(&text)
        .map_err(|e| emotive::Error::Format(format!("{}: {e}", path.display())))?;
    let knots = KnotVector::from_knots(file.knots, file.degree)?;
    let opts = LsqOptions {
        smoothness: args.smoothness,
        ridge: args.ridge,
        ..LsqOptions::default()
    };
    let fit = fit_trajectory_lsq(&file.set, &knots, &file.weights, &opts)?;
    save(&args.out, "_traj.emok", &trajectory_to_container(&fit.trajectory).to_bytes())?;
    let d = fit.diagnostics;
    save_json(
        &args.out,
        "_fit.json",
        &json!({
            "mode": "lsq",
            "epe": d.mean_residual,
            "max_error": d.max_residual,
            "samples": file.set.samples.len(),
            "fitted_pixels": d.fitted_pixels,
            "ridged_pixels": d.ridged_pixels,
            "smoothness": opts.smoothness,
            "ridge": opts.ridge,
        }),
    )
}

fn upsampled(flow: &FlowField, h: usize, w: usize) -> FlowField {
    if flow.dim() == (h, w) {
        return flow.clone();
    }
    FlowField {
        u: upsample_bilinear(&flow.u, h, w),
        v: upsample_bilinear(&flow.v, h, w),
        valid: Array2::from_elem((h, w), true),
    }
}

fn fit_refine(args: &FitArgs) -> Result<()> {
    let (Some(events), Some(height), Some(width)) = (&args.events, args.height, args.width) else {
        bail!("--events, --height and --width are required unless --lsq is given");
    };
    if args.downsample == 0 {
        bail!("--downsample must be at least 1");
    }
    let p = &args.params;
    let cells = (height / args.downsample) * (width / args.downsample);
    if p.n_a.saturating_sub(1).saturating_mul(cells).saturating_mul(cells) > MAX_COST_ENTRIES {
        bail!(
            "a {height}x{width} sensor needs a larger --downsample for {} temporal blocks",
            p.n_a
        );
    }
    let stream = load_events(events, args.format, SensorSize::new(height, width), args.strict)?;
    let voxel = event_voxel(&stream, p.bins)?;
    let kymo = event_kymograph(&stream, p.t_bins, p.sigma)?;
    let adapt = density_adapt(&density_field(&kymo, p.n_a, DEFAULT_POOL)?, args.n, args.p)?;
    let features = features_from_projections(&voxel, &kymo, p.n_a, args.downsample)?;
    let volumes = CostVolumes::build(&features, args.levels)?;
    let (gh, gw) = volumes.grid();
    let traj0 = Trajectory::zeros(adapt.knots.clone(), adapt.weights.clone(), gh, gw)?;
    let cfg = LossConfig {
        gamma: args.gamma,
        lambda: args.lambda,
        iters: args.iters,
    };
    let updater = GradientStepUpdater {
        step: args.step,
        clip: args.clip,
    };
    let result = refine_trajectory_with(&traj0, &volumes, &adapt, &updater, &cfg, args.radius)?;
    save(&args.out, "_traj.emok", &trajectory_to_container(&result.trajectory).to_bytes())?;

    let history: Vec<FlowField> = result.history.iter().map(|f| upsampled(f, height, width)).collect();
    let grid: Vec<f64> = (0..16).map(|k| k as f64 / 15.0).collect();
    let regularizer = temporal_regularizer(&result.trajectory, &grid)?;
    let mut iterations: Vec<serde_json::Value> = (1..=history.len()).map(|i| json!({ "iteration": i })).collect();
    let mut loss = None;
    if let Some(gt_prefix) = &args.gt {
        let gt = read_flo(&read_file(&suffixed(gt_prefix, "_flow.flo"))?)?;
        if gt.dim() != (height, width) {
            return Err(emotive::Error::ShapeMismatch(format!(
                "ground truth {:?} vs sensor ({height}, {width})",
                gt.dim()
            ))
            .into());
        }
        for (entry, flow) in iterations.iter_mut().zip(&history) {
            entry["epe"] = json!(emotive::motion::flow_epe(flow, &gt, &gt.valid)?);
        }
        loss = Some(flow_loss(&history, &gt, cfg.gamma)? + cfg.lambda * regularizer);
    }
    save_json(
        &args.out,
        "_fit.json",
        &json!({
            "mode": "refine",
            "anchor_indices": adapt.anchor_indices,
            "anchor_times": adapt.anchor_times,
            "knots": adapt.knots.knots(),
            "weights": adapt.weights,
            "grid": [gh, gw],
            "downsample": args.downsample,
            "iterations": iterations,
            "temporal_regularizer": regularizer,
            "loss": loss,
            "config": cfg,
        }),
    )
}

fn resized_mid(mid: MiDField, h: usize, w: usize) -> MiDField {
    if mid.dim() == (h, w) {
        return mid;
    }
    MiDField {
        m: upsample_bilinear(&mid.m, h, w),
        valid: upsample_nearest(&mid.valid, h, w),
    }
}

pub fn motion(args: MotionArgs) -> Result<()> {
    let traj = trajectory_from_container(&load_container(&args.traj)?)?;
    let (gh, gw) = traj.grid();
    let (h, w) = (args.height.unwrap_or(gh), args.width.unwrap_or(gw));
    if args.tau.is_empty() {
        bail!("at least one --tau is required");
    }
    if args.multiview && args.views == 0 {
        bail!("--views must be at least 1");
    }
    let out = &args.out;
    let last = args.tau.len() - 1;
    for (j, &tau) in args.tau.iter().enumerate() {
        let tag = format!("_tau{tau}");
        let flow = optical_flow(&traj, tau, Some((h, w)))?;
        let flo = write_flo(&flow);
        save(out, &format!("{tag}_flow.flo"), &flo)?;
        let max_flow = args.max_flow.unwrap_or_else(|| default_max_flow(&flow));
        save(out, &format!("{tag}_flow.ppm"), &write_flow_ppm(&flow, max_flow))?;
        if j == last {
            save(out, "_flow.flo", &flo)?;
        }
        if tau == 0.0 {
            continue;
        }
        let mid = if args.multiview {
            let times: Vec<f64> = (1..=args.views).map(|k| k as f64 / args.views as f64 * tau).collect();
            motion_in_depth_multiview(&traj, &times)?
        } else {
            motion_in_depth_single(&traj, tau)?
        };
        let mid = resized_mid(mid, h, w);
        let container = mid_to_container(&mid).to_bytes();
        save(out, &format!("{tag}_mid.emok"), &container)?;
        let preview = ndarray::Zip::from(&mid.m)
            .and(&mid.valid)
            .map_collect(|&m, &ok| if ok { m } else { f64::NAN });
        save_pgm(out, &format!("{tag}_mid"), &preview)?;
        let nsf = normalized_scene_flow(&flow, &mid)?;
        let mut s = nsf.s.clone();
        for ((y, x), &ok) in nsf.valid.indexed_iter() {
            if !ok {
                s.slice_mut(ndarray::s![y, x, ..]).fill(f64::NAN);
            }
        }
        save(
            out,
            &format!("{tag}_sflow.emok"),
            &Container::new(s.into_dyn(), json!({ "kind": "normalized_scene_flow", "tau": tau })).to_bytes(),
        )?;
        if j == last {
            save(out, "_mid.emok", &container)?;
        }
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let load = |prefix: &Path| -> Result<(FlowField, MiDField)> {
        let flow = read_flo(&read_file(&suffixed(prefix, "_flow.flo"))?)?;
        let mid = mid_from_container(&load_container(&suffixed(prefix, "_mid.emok"))?)?;
        Ok((flow, mid))
    };
    let (pred_flow, pred_mid) = load(&args.pred)?;
    let (gt_flow, gt_mid) = load(&args.gt)?;
    let dim = gt_flow.dim();
    if pred_flow.dim() != dim || pred_mid.dim() != dim || gt_mid.dim() != dim {
        return Err(anyhow!(emotive::Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred_flow.dim(),
            dim
        ))));
    }
    let valid = &(&gt_flow.valid & &gt_mid.valid) & &(&pred_flow.valid & &pred_mid.valid);
    let report = metrics(&pred_flow, &gt_flow, &pred_mid, &gt_mid, &valid)?;
    let text = report.to_text();
    print!("{text}");
    let out = args.out.as_ref().unwrap_or(&args.pred);
    save(out, "_metrics.txt", text.as_bytes())?;
    let mut json_line = serde_json::to_string(&report)?;
    json_line.push('\n');
    save(out, "_metrics.json", json_line.as_bytes())
}

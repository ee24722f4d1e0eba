//! Implementations of the `bbx` subcommands.

use crate::config::parse_scenario_config;
use crate::{CliError, ObservabilityArgs, ReplayArgs, RunArgs, ScenarioSource};
use bearing_box::box3d::thrust_direction;
use bearing_box::io::{
    parse_camera_poses, parse_detection_log, write_detection_log, write_camera_poses,
    write_summary_json, write_trace_csv, write_verdicts_jsonl, CameraPoseRow, DetectionRow,
    VerdictRecord,
};
use bearing_box::metrics::MetricSummary;
use bearing_box::observability::{build_polynomial_stack, StackObservation};
use bearing_box::scenarios;
use bearing_box::simulator::{
    mav_attitude_from_accel, measurements_from_detection, run_estimator,
    Estimator, Scenario, StepInput,
};
use bearing_box::filters::projector;
use nalgebra::Vector3;
use std::fs;
use std::path::Path;
use std::str::FromStr;

fn load_scenario(source: &ScenarioSource) -> Result<Scenario, CliError> {
    match (&source.scenario, &source.scenario_file) {
        (Some(name), None) => scenarios::builtin(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown scenario '{name}' (available: {})",
                scenarios::BUILTIN_NAMES.join(", ")
            ))
        }),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_scenario_config(&text).map_err(|e| CliError::Config(e.to_string()))
        }
        (None, None) => Err(CliError::Config(
            "one of --scenario or --scenario-file is required".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    }
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var("BBX_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("BBX_SEED is not an unsigned integer: '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

pub fn list_scenarios() -> Result<(), CliError> {
    for name in scenarios::BUILTIN_NAMES {
        println!("{name}");
    }
    Ok(())
}

pub fn run(args: RunArgs) -> Result<(), CliError> {
    let mut sc = load_scenario(&args.source)?;
    if let Some(seed) = args.seed.or(seed_from_env()?) {
        sc.seed = seed;
    }
    if let Some(dt) = args.dt {
        if !(dt > 0.0) {
            return Err(CliError::Config(format!("--dt must be positive, got {dt}")));
        }
        sc.dt = dt;
    }
    if let Some(duration) = args.duration {
        if duration < sc.dt {
            return Err(CliError::Config(format!(
                "--duration must be at least one time step, got {duration}"
            )));
        }
        sc.duration = duration;
    }
    if let Some(s) = args.sigma_tbar {
        sc.noise.sigma_tbar = s;
    }
    if let Some(s) = args.sigma_h {
        sc.noise.sigma_h = s;
    }

    let estimators: Vec<Estimator> = if args.estimator.is_empty() {
        scenarios::applicable_estimators(&sc)
    } else {
        args.estimator
            .iter()
            .map(|s| Estimator::from_str(s).map_err(CliError::Config))
            .collect::<Result<_, _>>()?
    };
    if estimators.is_empty() {
        return Err(CliError::Config("no estimators selected".into()));
    }
    for e in &estimators {
        if e.needs_mav() && !sc.target_is_mav {
            return Err(CliError::Config(format!(
                "estimator {} requires a MAV target (scenario '{}' has target_is_mav = false)",
                e.name(),
                sc.name
            )));
        }
    }

    ensure_dir(&args.out)?;
    let output = bearing_box::simulator::run_scenario(&sc, &estimators)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut summaries = Vec::new();
    for trace in &output.traces {
        let path = args.out.join(format!("trace_{}.csv", trace.estimator.name()));
        write_trace_csv(&path, trace).map_err(|e| CliError::Runtime(e.to_string()))?;
        summaries.push(MetricSummary::from_trace(trace));
    }
    write_summary_json(&args.out.join("summary.json"), &summaries)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    if args.export_detections {
        let mut detections = Vec::new();
        let mut poses = Vec::new();
        for f in &output.frames {
            poses.push(CameraPoseRow {
                t: f.t,
                p_c_w: f.observer.position,
                r_cw: f.r_cw,
            });
            if let Some(d) = f.noisy_detection {
                detections.push(DetectionRow { t: f.t, detection: d });
            }
        }
        write_detection_log(&args.out.join("detections.csv"), &detections)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_camera_poses(&args.out.join("camera_poses.csv"), &poses)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

pub fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let estimator = Estimator::from_str(&args.estimator).map_err(CliError::Config)?;
    let detections = fs::File::open(&args.detections)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", args.detections.display())))
        .and_then(|f| {
            parse_detection_log(f)
                .map_err(|e| CliError::Config(format!("{}: {e}", args.detections.display())))
        })?;
    let poses = fs::File::open(&args.camera_poses)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", args.camera_poses.display())))
        .and_then(|f| {
            parse_camera_poses(f)
                .map_err(|e| CliError::Config(format!("{}: {e}", args.camera_poses.display())))
        })?;

    // The camera-pose rows are the frame clock; detections attach to the
    // pose row with the matching timestamp. Frames without a detection are
    // predict-only.
    let half_step = poses
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    let mut det_iter = detections.iter().peekable();
    let mut steps = Vec::with_capacity(poses.len());
    for pose in &poses {
        let mut step = StepInput {
            t: pose.t,
            p_c_w: pose.p_c_w,
            r_cw: pose.r_cw,
            t_bar_w: None,
            h: None,
            bearing: None,
            theta: None,
            truth: None,
        };
        while let Some(d) = det_iter.peek() {
            if d.t < pose.t - half_step {
                return Err(CliError::Config(format!(
                    "detection at t={} has no camera pose",
                    d.t
                )));
            }
            if d.t <= pose.t + half_step {
                let m = measurements_from_detection(&d.detection, &pose.r_cw, d.t)
                    .map_err(|e| CliError::Config(format!("detection at t={}: {e}", d.t)))?;
                step.t_bar_w = Some(m.t_bar_w);
                step.h = Some(m.h);
                step.bearing = Some(m.bearing_w);
                step.theta = Some(m.theta.max(1e-6));
                det_iter.next();
            } else {
                break;
            }
        }
        steps.push(step);
    }
    if let Some(d) = det_iter.next() {
        return Err(CliError::Config(format!(
            "detection at t={} has no camera pose",
            d.t
        )));
    }

    ensure_dir(&args.out)?;
    let init = bearing_box::filters::FilterInit::default();
    let noise = bearing_box::filters::NoiseParams::default();
    let trace = run_estimator(estimator, &steps, &init, &noise, "replay", 0);
    let path = args.out.join(format!("trace_{}.csv", estimator.name()));
    write_trace_csv(&path, &trace).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_summary_json(
        &args.out.join("summary.json"),
        &[MetricSummary::from_trace(&trace)],
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

pub fn observability(args: ObservabilityArgs) -> Result<(), CliError> {
    let sc = load_scenario(&args.source)?;
    if args.order == 0 {
        return Err(CliError::Config("--order must be at least 1".into()));
    }
    if args.window < args.order + 1 {
        return Err(CliError::Config(format!(
            "--window must be at least order + 1 = {}",
            args.order + 1
        )));
    }
    if args.stride == 0 {
        return Err(CliError::Config("--stride must be positive".into()));
    }

    let (observer, target) = sc
        .build_trajectories()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let alpha = sc.target_cuboid.scale();
    let steps = (sc.duration / sc.dt).round() as usize;
    let mut samples = Vec::new();
    for k in (0..=steps).step_by(args.stride) {
        let t = k as f64 * sc.dt;
        let tgt = target.sample(t);
        let obs = observer.sample(t);
        let h = if sc.target_is_mav {
            let r = mav_attitude_from_accel(&tgt.acceleration, sc.noise.g, 0.0)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Some(thrust_direction(&r))
        } else {
            None
        };
        samples.push((
            StackObservation {
                t,
                t_bar: (tgt.position - obs.position) / alpha,
                p_c: obs.position,
                h,
            },
            tgt.acceleration,
            obs.acceleration,
        ));
    }
    if samples.len() < args.window {
        return Err(CliError::Config(format!(
            "scenario provides {} samples, fewer than the window {}",
            samples.len(),
            args.window
        )));
    }

    let mut records = Vec::new();
    for window in samples.windows(args.window) {
        let obs: Vec<StackObservation> = window.iter().map(|(o, _, _)| *o).collect();
        let stack = build_polynomial_stack(&obs, args.order, sc.target_is_mav, sc.noise.g)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let (rank, sigma_min, sigma_max) = stack.numeric_rank();

        let tau = obs[1].t - obs[0].t;
        let cond_a = higher_order_motion(window, args.order, tau);
        let cond_b = sc.target_is_mav
            && window.iter().any(|(o, a_o, a_c)| {
                let p_h = projector(&o.h.unwrap()).expect("unit thrust");
                (p_h * (a_o - a_c)).norm() > 1e-6
            });

        records.push(VerdictRecord {
            scenario: sc.name.clone(),
            n_obs: args.window,
            n: args.order,
            rank,
            cols: stack.cols(),
            sigma_min,
            sigma_max,
            cond_a,
            cond_b,
            observable: rank == stack.cols(),
        });
    }

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_verdicts_jsonl(&args.out, &records).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "{} windows, {} observable",
        records.len(),
        records.iter().filter(|r| r.observable).count()
    );
    Ok(())
}

/// Detects observer motion of order greater than `order` by finite
/// differences of the observer accelerations over the window.
fn higher_order_motion(
    window: &[(StackObservation, Vector3<f64>, Vector3<f64>)],
    order: usize,
    tau: f64,
) -> bool {
    // Differencing the acceleration (order - 1) more times probes the
    // (order + 1)-th derivative of the observer position.
    let mut values: Vec<Vector3<f64>> = window.iter().map(|(_, _, a_c)| *a_c).collect();
    for _ in 0..order.saturating_sub(1) {
        if values.len() < 2 {
            return false;
        }
        values = values.windows(2).map(|w| (w[1] - w[0]) / tau).collect();
    }
    values.iter().any(|v| v.norm() > 1e-6)
}

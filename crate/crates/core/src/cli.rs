//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid input or I/O failures, 2 when the
//! solver does not reach an optimal solution.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{compare, compare_lookat, Comparison, MetricReport};
use crate::error::{Error, Result};
use crate::keyframes::KeyframeList;
use crate::planner::{plan_trajectory, PlanningContext, Trajectory};
use crate::qp::{SolveReport, Weights};
use crate::scene::{load_scene, SceneSpec};
use crate::time_opt::{optimize_times, TimeOptConfig, TimeOptMode, TimeOptTrace};
use crate::traj_io::{format_number, read_trajectory, sidecar_path, write_json, write_trajectory, RunReport};

#[derive(Debug, Parser)]
#[command(name = "quadcam", version, about = "Keyframe trajectory planning for camera quadrotors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a trajectory through the scene's keyframes.
    Plan {
        scene: PathBuf,
        #[command(flatten)]
        overrides: SceneOverrides,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Optimize keyframe times and compare against the original timing.
    TimeOpt {
        scene: PathBuf,
        #[command(flatten)]
        overrides: SceneOverrides,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Cost per grid step of horizon (free-end mode).
        #[arg(long)]
        w: Option<f64>,
        /// Finite-difference step, seconds.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Smoothness metrics of a trajectory table.
    Metrics {
        trajectory: PathBuf,
        /// Scene whose keyframes are used for the fit metrics.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Side-by-side metrics of two trajectory tables.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Look-at orientation along the planned positions, next to the planned orientation.
    BaselineLookat {
        scene: PathBuf,
        #[command(flatten)]
        overrides: SceneOverrides,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SceneOverrides {
    /// Grid step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Weight override as KEY=VALUE, arrays colon-separated
    /// (e.g. keyframe=1e3, position_derivative=0:0:2). Repeatable.
    #[arg(long = "weights", value_name = "KEY=VALUE")]
    weights: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    FreeEnd,
    FixedEnd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn parse_array(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(':').collect();
    let bad = || Error::validation(format!("weights.{key}"), format!("expected three colon-separated numbers, got {value:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn apply_weight(weights: &mut Weights, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::validation("--weights", format!("expected KEY=VALUE, got {spec:?}")))?;
    let key = key.trim();
    let scalar = || -> Result<f64> {
        value
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("weights.{key}"), format!("not a number: {value:?}")))
    };
    match key {
        "keyframe" => weights.keyframe = scalar()?,
        "orientation" => weights.orientation = scalar()?,
        "effort" => weights.effort = scalar()?,
        "position_derivative" => weights.position_derivative = parse_array(key, value)?,
        "angle_derivative" => weights.angle_derivative = parse_array(key, value)?,
        _ => return Err(Error::validation("--weights", format!("unknown weight {key:?}"))),
    }
    Ok(())
}

fn load_with_overrides(path: &Path, overrides: &SceneOverrides) -> Result<SceneSpec> {
    let mut scene = load_scene(path)?;
    if let Some(dt) = overrides.dt {
        scene.dt = dt;
    }
    for spec in &overrides.weights {
        apply_weight(&mut scene.weights, spec)?;
    }
    scene.validate()?;
    Ok(scene)
}

fn scene_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run_report(traj: &Trajectory, solve: &SolveReport, keyframes: &KeyframeList, ctx: &PlanningContext) -> Result<RunReport> {
    let model = ctx.model()?;
    Ok(RunReport::new(
        solve,
        traj.dynamics_residual(&model),
        traj.bound_violation(&ctx.quad, &ctx.gimbal),
        MetricReport::new(traj, Some(keyframes)).ok(),
    ))
}

/// Writes `<dir>/<name>.csv` and its sidecar report; returns the table path.
fn write_plan(dir: &Path, name: &str, traj: &Trajectory, report: &RunReport) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.csv"));
    write_trajectory(traj, &path)?;
    write_json(report, &sidecar_path(&path))?;
    Ok(path)
}

fn metric_lines(report: &MetricReport) -> Vec<(String, String)> {
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mut lines = vec![
        ("normalized_jerk [m/s^3]".to_string(), format_number(report.normalized_jerk)),
        (
            "normalized_angular_jerk [deg/s^3]".to_string(),
            format_number(report.normalized_angular_jerk),
        ),
    ];
    if !report.keyframe_position_errors.is_empty() {
        lines.push(("max_keyframe_position_error [m]".to_string(), format_number(max(&report.keyframe_position_errors))));
        lines.push(("max_keyframe_yaw_error [rad]".to_string(), format_number(max(&report.keyframe_yaw_errors))));
        lines.push(("max_keyframe_pitch_error [rad]".to_string(), format_number(max(&report.keyframe_pitch_errors))));
        lines.push((
            "max_interkeyframe_pitch_excursion [rad]".to_string(),
            format_number(report.max_interkeyframe_pitch_excursion),
        ));
    }
    lines
}

fn write_comparison_text(out: &mut dyn Write, cmp: &Comparison) -> std::io::Result<()> {
    let a = metric_lines(&cmp.a);
    let b = metric_lines(&cmp.b);
    writeln!(out, "{:<42} {:>14} {:>14} {:>14}", "metric", "a", "b", "b - a")?;
    let d = &cmp.delta;
    let delta = [
        d.normalized_jerk,
        d.normalized_angular_jerk,
        d.max_position_error,
        d.max_yaw_error,
        d.max_pitch_error,
        d.max_interkeyframe_pitch_excursion,
    ];
    for (i, ((name, va), (_, vb))) in a.iter().zip(&b).enumerate() {
        let d = delta.get(i).map(|&d| format_number(d)).unwrap_or_default();
        writeln!(out, "{name:<42} {va:>14} {vb:>14} {d:>14}")?;
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parameter(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn cmd_plan(scene_path: &Path, overrides: &SceneOverrides, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let scene = load_with_overrides(scene_path, overrides)?;
    let ctx = scene.context();
    let (traj, solve) = plan_trajectory(&scene.keyframes, &ctx)?;
    let report = run_report(&traj, &solve, &scene.keyframes, &ctx)?;
    create_dir(out_dir)?;
    let path = write_plan(out_dir, &scene_stem(scene_path), &traj, &report)?;
    writeln!(
        out,
        "planned {} stages (objective {}, {} iterations) -> {}",
        traj.grid.n_stages,
        format_number(report.objective),
        report.iterations,
        path.display()
    )
    .map_err(stdout_err)?;
    if let Some(m) = &report.metrics {
        for (name, v) in metric_lines(m) {
            writeln!(out, "  {name:<42} {v}").map_err(stdout_err)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TimeOptSummary<'a> {
    mode: TimeOptMode,
    w: f64,
    initial_times: Vec<f64>,
    optimized_times: Vec<f64>,
    initial_score: f64,
    final_score: f64,
    no_progress: bool,
    trace: &'a TimeOptTrace,
}

#[allow(clippy::too_many_arguments)]
fn cmd_time_opt(
    scene_path: &Path,
    overrides: &SceneOverrides,
    mode: Option<ModeArg>,
    w: Option<f64>,
    h: Option<f64>,
    max_iters: Option<usize>,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let mut scene = load_with_overrides(scene_path, overrides)?;
    let mut config = scene.time_opt.clone().unwrap_or_else(|| TimeOptConfig {
        h: scene.dt,
        min_gap: scene.dt,
        ..TimeOptConfig::default()
    });
    if let Some(m) = mode {
        config.mode = match m {
            ModeArg::FreeEnd => TimeOptMode::FreeEnd,
            ModeArg::FixedEnd => TimeOptMode::FixedEnd,
        };
    }
    if let Some(w) = w {
        config.w = w;
    }
    if let Some(h) = h {
        config.h = h;
    }
    if let Some(n) = max_iters {
        config.max_iters = n;
    }
    config.validate(scene.dt)?;

    let ctx = scene.context();
    let outcome = optimize_times(&scene.keyframes, &config, &ctx)?;
    let (fixed, fixed_solve) = plan_trajectory(&scene.keyframes, &ctx)?;
    let (optimized, opt_solve) = plan_trajectory(&outcome.keyframes, &ctx)?;

    create_dir(out_dir)?;
    let stem = scene_stem(scene_path);
    let fixed_report = run_report(&fixed, &fixed_solve, &scene.keyframes, &ctx)?;
    let opt_report = run_report(&optimized, &opt_solve, &outcome.keyframes, &ctx)?;
    write_plan(out_dir, &format!("{stem}.fixed"), &fixed, &fixed_report)?;
    write_plan(out_dir, &format!("{stem}.optimized"), &optimized, &opt_report)?;

    let summary = TimeOptSummary {
        mode: config.mode,
        w: config.effective_w(),
        initial_times: scene.keyframes.times(),
        optimized_times: outcome.keyframes.times(),
        initial_score: outcome.initial_score(),
        final_score: outcome.final_score(),
        no_progress: outcome.no_progress,
        trace: &outcome.trace,
    };
    write_json(&summary, &out_dir.join(format!("{stem}.time_opt.json")))?;

    let cmp = compare(&fixed, &optimized, None)?;
    write_json(&cmp, &out_dir.join(format!("{stem}.comparison.json")))?;

    scene.keyframes = outcome.keyframes.clone();
    let optimized_scene = out_dir.join(format!("{stem}.optimized.toml"));
    std::fs::write(&optimized_scene, scene.to_toml()?).map_err(|e| Error::io(&optimized_scene, e))?;

    let times = |v: &[f64]| v.iter().map(|&t| format_number(t)).collect::<Vec<_>>().join(", ");
    writeln!(out, "times [{}] -> [{}]", times(&summary.initial_times), times(&summary.optimized_times)).map_err(stdout_err)?;
    writeln!(
        out,
        "score {} -> {} over {} accepted steps{}",
        format_number(summary.initial_score),
        format_number(summary.final_score),
        outcome.trace.iterations.len() - 1,
        if outcome.no_progress { " (no progress)" } else { "" }
    )
    .map_err(stdout_err)?;
    writeln!(out, "a = fixed timing, b = optimized timing").map_err(stdout_err)?;
    write_comparison_text(out, &cmp).map_err(stdout_err)?;
    Ok(())
}

fn cmd_metrics(path: &Path, scene: Option<&Path>, format: Format, out: &mut dyn Write) -> Result<()> {
    let traj = read_trajectory(path)?;
    let scene = scene.map(load_scene).transpose()?;
    let report = MetricReport::new(&traj, scene.as_ref().map(|s| &s.keyframes))?;
    match format {
        Format::Json => emit_json(out, &report),
        Format::Text => {
            for (name, v) in metric_lines(&report) {
                writeln!(out, "{name:<42} {v}").map_err(stdout_err)?;
            }
            Ok(())
        }
    }
}

fn cmd_compare(a: &Path, b: &Path, scene: Option<&Path>, format: Format, out: &mut dyn Write) -> Result<()> {
    let ta = read_trajectory(a)?;
    let tb = read_trajectory(b)?;
    let scene = scene.map(load_scene).transpose()?;
    let cmp = compare(&ta, &tb, scene.as_ref().map(|s| &s.keyframes))?;
    match format {
        Format::Json => emit_json(out, &cmp),
        Format::Text => write_comparison_text(out, &cmp).map_err(stdout_err),
    }
}

fn cmd_baseline_lookat(scene_path: &Path, overrides: &SceneOverrides, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let scene = load_with_overrides(scene_path, overrides)?;
    let lookat = scene
        .lookat_keyframes
        .as_deref()
        .ok_or_else(|| Error::validation("lookat_keyframes", "required by baseline-lookat"))?;
    let ctx = scene.context();
    let (traj, _) = plan_trajectory(&scene.keyframes, &ctx)?;
    let summary = compare_lookat(&traj, &scene.keyframes, lookat)?;
    let baseline = &summary.baseline;

    create_dir(out_dir)?;
    let stem = scene_stem(scene_path);
    let table = out_dir.join(format!("{stem}.lookat.csv"));
    let file = std::fs::File::create(&table).map_err(|e| Error::io(&table, e))?;
    let mut w = csv::Writer::from_writer(file);
    let yaw = traj.camera_yaw();
    let pitch = traj.camera_pitch();
    let io = |e: csv::Error| Error::Parameter(format!("{}: {e}", table.display()));
    w.write_record(["index", "t", "lookat_yaw", "lookat_pitch", "planned_yaw", "planned_pitch"])
        .map_err(io)?;
    for (i, (by, bp)) in baseline.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format_number(traj.grid.time(i)),
            format_number(*by),
            format_number(*bp),
            format_number(yaw[i]),
            format_number(pitch[i]),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&table, e))?;
    write_json(&summary, &out_dir.join(format!("{stem}.lookat.json")))?;

    writeln!(
        out,
        "pitch excursion between keyframes: look-at {} deg, planned {} deg -> {}",
        format_number(summary.baseline_pitch_excursion.to_degrees()),
        format_number(summary.planned_pitch_excursion.to_degrees()),
        table.display()
    )
    .map_err(stdout_err)?;
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Plan { scene, overrides, out_dir } => cmd_plan(&scene, &overrides, &out_dir, out),
        Command::TimeOpt {
            scene,
            overrides,
            mode,
            w,
            h,
            max_iters,
            out_dir,
        } => cmd_time_opt(&scene, &overrides, mode, w, h, max_iters, &out_dir, out),
        Command::Metrics { trajectory, scene, format } => cmd_metrics(&trajectory, scene.as_deref(), format, out),
        Command::Compare { a, b, scene, format } => cmd_compare(&a, &b, scene.as_deref(), format, out),
        Command::BaselineLookat { scene, overrides, out_dir } => cmd_baseline_lookat(&scene, &overrides, &out_dir, out),
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_solver_failure() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_overrides() {
        let mut w = Weights::default();
        apply_weight(&mut w, "keyframe=5").unwrap();
        apply_weight(&mut w, "position_derivative=0:1:2").unwrap();
        assert_eq!(w.keyframe, 5.0);
        assert_eq!(w.position_derivative, [0.0, 1.0, 2.0]);
        assert!(apply_weight(&mut w, "snap=1").is_err());
        assert!(apply_weight(&mut w, "angle_derivative=1:2").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run_with(["quadcam", "fly"], &mut out, &mut err), 1);
        assert_eq!(run_with(["quadcam", "plan", "/nonexistent/scene.toml"], &mut out, &mut err), 1);
        assert!(String::from_utf8(err).unwrap().contains("/nonexistent/scene.toml"));
    }
}

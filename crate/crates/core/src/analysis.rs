//! Smoothness and fit metrics, and the look-at orientation baseline.

use serde::{Deserialize, Serialize};

use crate::dynamics::{keyframe_index_map, sx, Grid};
use crate::error::{Error, Result};
use crate::keyframes::{unwrap_angles, KeyframeList};
use crate::planner::Trajectory;

/// Time-integrated magnitude of the third finite difference of a vector
/// series, divided by the horizon length.
fn normalized_third_difference<const D: usize>(series: &[[f64; D]], dt: f64) -> Result<f64> {
    let n = series.len().saturating_sub(1);
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "jerk needs at least 3 stages, trajectory has {n}"
        )));
    }
    let dt3 = dt * dt * dt;
    let mut accumulated = 0.0;
    for i in 3..=n {
        let mut sq = 0.0;
        for k in 0..D {
            let d = series[i][k] - 3.0 * series[i - 1][k] + 3.0 * series[i - 2][k]
                - series[i - 3][k];
            sq += d * d;
        }
        accumulated += sq.sqrt() / dt3 * dt;
    }
    Ok(accumulated / (n as f64 * dt))
}

/// Normalized position jerk, m/s³.
pub fn normalized_jerk(traj: &Trajectory) -> Result<f64> {
    normalized_third_difference(&traj.positions(), traj.grid.dt)
}

/// Normalized jerk of the camera direction (world yaw, gimbal pitch), deg/s³.
pub fn normalized_angular_jerk(traj: &Trajectory) -> Result<f64> {
    let series: Vec<[f64; 2]> = traj
        .states
        .iter()
        .map(|x| [x[sx::YAW_Q] + x[sx::YAW_G], x[sx::PITCH_G]])
        .collect();
    Ok(normalized_third_difference(&series, traj.grid.dt)?.to_degrees())
}

/// Per-keyframe tracking errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyframeFit {
    pub position_errors: Vec<f64>,
    pub yaw_errors: Vec<f64>,
    pub pitch_errors: Vec<f64>,
}

fn keyframe_stages(traj: &Trajectory, keyframes: &KeyframeList) -> Result<Vec<usize>> {
    let stages = keyframe_index_map(&keyframes.times(), traj.grid.dt)?;
    for (j, &s) in stages.iter().enumerate() {
        if s > traj.grid.n_stages {
            return Err(Error::IndexOutOfGrid {
                keyframe: j,
                stage: s,
                n_stages: traj.grid.n_stages,
            });
        }
    }
    Ok(stages)
}

pub fn keyframe_fit(traj: &Trajectory, keyframes: &KeyframeList) -> Result<KeyframeFit> {
    let stages = keyframe_stages(traj, keyframes)?;
    let yaws = keyframes.unwrapped_yaws();
    let camera_yaw = traj.camera_yaw();
    let mut fit = KeyframeFit::default();
    for (j, kf) in keyframes.as_slice().iter().enumerate() {
        let x = &traj.states[stages[j]];
        let d2: f64 = (0..3).map(|k| (x[sx::POS + k] - kf.position[k]).powi(2)).sum();
        fit.position_errors.push(d2.sqrt());
        fit.yaw_errors.push((camera_yaw[stages[j]] - yaws[j]).abs());
        fit.pitch_errors.push((x[sx::PITCH_G] - kf.pitch).abs());
    }
    Ok(fit)
}

/// Largest distance, over stages strictly between consecutive keyframes, of
/// the pitch from the interval spanned by those two keyframes' pitches.
pub fn pitch_excursion(pitch: &[f64], stages: &[usize], keyframe_pitch: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 1..stages.len() {
        let lo = keyframe_pitch[j - 1].min(keyframe_pitch[j]);
        let hi = keyframe_pitch[j - 1].max(keyframe_pitch[j]);
        for &p in &pitch[stages[j - 1]..=stages[j].min(pitch.len() - 1)] {
            worst = worst.max(lo - p).max(p - hi);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// m/s³
    pub normalized_jerk: f64,
    /// deg/s³
    pub normalized_angular_jerk: f64,
    pub keyframe_position_errors: Vec<f64>,
    pub keyframe_yaw_errors: Vec<f64>,
    pub keyframe_pitch_errors: Vec<f64>,
    /// rad
    pub max_interkeyframe_pitch_excursion: f64,
}

impl MetricReport {
    /// Jerk metrics always; keyframe-dependent fields only when keyframes are given.
    pub fn new(traj: &Trajectory, keyframes: Option<&KeyframeList>) -> Result<Self> {
        let mut report = Self {
            normalized_jerk: normalized_jerk(traj)?,
            normalized_angular_jerk: normalized_angular_jerk(traj)?,
            keyframe_position_errors: Vec::new(),
            keyframe_yaw_errors: Vec::new(),
            keyframe_pitch_errors: Vec::new(),
            max_interkeyframe_pitch_excursion: 0.0,
        };
        if let Some(kfs) = keyframes {
            let fit = keyframe_fit(traj, kfs)?;
            report.keyframe_position_errors = fit.position_errors;
            report.keyframe_yaw_errors = fit.yaw_errors;
            report.keyframe_pitch_errors = fit.pitch_errors;
            let stages = keyframe_stages(traj, kfs)?;
            let desired: Vec<f64> = kfs.as_slice().iter().map(|k| k.pitch).collect();
            report.max_interkeyframe_pitch_excursion =
                pitch_excursion(&traj.camera_pitch(), &stages, &desired);
        }
        Ok(report)
    }

    fn max_of(v: &[f64]) -> f64 {
        v.iter().copied().fold(0.0, f64::max)
    }
}

/// `b - a` for each scalar summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub normalized_jerk: f64,
    pub normalized_angular_jerk: f64,
    pub max_position_error: f64,
    pub max_yaw_error: f64,
    pub max_pitch_error: f64,
    pub max_interkeyframe_pitch_excursion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: MetricReport,
    pub b: MetricReport,
    pub delta: MetricDelta,
}

pub fn compare(a: &Trajectory, b: &Trajectory, keyframes: Option<&KeyframeList>) -> Result<Comparison> {
    compare_reports(MetricReport::new(a, keyframes)?, MetricReport::new(b, keyframes)?)
}

/// Like [`compare`], with keyframe fits taken against each trajectory's own keyframes.
pub fn compare_reports(a: MetricReport, b: MetricReport) -> Result<Comparison> {
    let m = MetricReport::max_of;
    let delta = MetricDelta {
        normalized_jerk: b.normalized_jerk - a.normalized_jerk,
        normalized_angular_jerk: b.normalized_angular_jerk - a.normalized_angular_jerk,
        max_position_error: m(&b.keyframe_position_errors) - m(&a.keyframe_position_errors),
        max_yaw_error: m(&b.keyframe_yaw_errors) - m(&a.keyframe_yaw_errors),
        max_pitch_error: m(&b.keyframe_pitch_errors) - m(&a.keyframe_pitch_errors),
        max_interkeyframe_pitch_excursion: b.max_interkeyframe_pitch_excursion
            - a.max_interkeyframe_pitch_excursion,
    };
    Ok(Comparison { a, b, delta })
}

/// A point the camera should look at, at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAtKeyframe {
    pub time: f64,
    pub target: [f64; 3],
}

/// Look-at target at time `t`, linearly interpolated between keyframes and
/// held constant outside them.
pub fn lookat_target(lookat: &[LookAtKeyframe], t: f64) -> [f64; 3] {
    let first = &lookat[0];
    if t <= first.time {
        return first.target;
    }
    for w in lookat.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if t <= b.time {
            let s = (t - a.time) / (b.time - a.time);
            return [0, 1, 2].map(|k| a.target[k] + s * (b.target[k] - a.target[k]));
        }
    }
    lookat.last().unwrap().target
}

/// Baseline orientation from aiming the camera at a straight-line
/// interpolation of the look-at points: per-stage `(yaw, pitch)` with yaw
/// unwrapped across stages.
pub fn lookat_baseline_orientation(
    camera_positions: &[[f64; 3]],
    lookat: &[LookAtKeyframe],
    grid: &Grid,
) -> Result<Vec<(f64, f64)>> {
    if lookat.is_empty() {
        return Err(Error::validation("lookat_keyframes", "at least one look-at keyframe is required"));
    }
    for j in 1..lookat.len() {
        if !(lookat[j].time > lookat[j - 1].time) {
            return Err(Error::validation(
                format!("lookat_keyframes[{j}].time"),
                "look-at times must be strictly increasing",
            ));
        }
    }
    let mut yaws = Vec::with_capacity(camera_positions.len());
    let mut pitches = Vec::with_capacity(camera_positions.len());
    for (stage, cam) in camera_positions.iter().enumerate() {
        let target = lookat_target(lookat, grid.time(stage));
        let d = [0, 1, 2].map(|k| target[k] - cam[k]);
        let horizontal = d[0].hypot(d[1]);
        if horizontal.hypot(d[2]) < 1e-9 {
            return Err(Error::SingularBearing { stage });
        }
        let yaw = if horizontal > 1e-12 {
            d[1].atan2(d[0])
        } else {
            yaws.last().copied().unwrap_or(0.0)
        };
        yaws.push(yaw);
        pitches.push(d[2].atan2(horizontal));
    }
    Ok(unwrap_angles(yaws).into_iter().zip(pitches).collect())
}

/// Look-at baseline next to a planned trajectory, with the pitch excursion
/// of each between their own keyframes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LookAtComparison {
    /// Per-stage baseline `(yaw, pitch)`.
    #[serde(skip)]
    pub baseline: Vec<(f64, f64)>,
    /// rad
    pub baseline_pitch_excursion: f64,
    /// rad
    pub planned_pitch_excursion: f64,
}

pub fn compare_lookat(traj: &Trajectory, keyframes: &KeyframeList, lookat: &[LookAtKeyframe]) -> Result<LookAtComparison> {
    let baseline = lookat_baseline_orientation(&traj.positions(), lookat, &traj.grid)?;
    let base_pitch: Vec<f64> = baseline.iter().map(|o| o.1).collect();
    let lookat_times: Vec<f64> = lookat.iter().map(|k| k.time).collect();
    let lookat_stages: Vec<usize> = keyframe_index_map(&lookat_times, traj.grid.dt)?
        .into_iter()
        .map(|s| s.min(traj.grid.n_stages))
        .collect();
    let lookat_pitch: Vec<f64> = lookat_stages.iter().map(|&s| base_pitch[s]).collect();
    let kf_stages = keyframe_stages(traj, keyframes)?;
    let kf_pitch: Vec<f64> = keyframes.as_slice().iter().map(|k| k.pitch).collect();
    Ok(LookAtComparison {
        baseline_pitch_excursion: pitch_excursion(&base_pitch, &lookat_stages, &lookat_pitch),
        planned_pitch_excursion: pitch_excursion(&traj.camera_pitch(), &kf_stages, &kf_pitch),
        baseline,
    })
}

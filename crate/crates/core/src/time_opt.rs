//! Keyframe time optimization.
//!
//! The planner's optimal objective `f(t)` is a function of the keyframe times.
//! Adding `N·w` for the horizon length `N` keeps free-end runs from drifting
//! toward arbitrarily long, slow trajectories. The score is minimized by
//! projected gradient descent with numerical directional derivatives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{keyframe_index_map, stage_index, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::keyframes::KeyframeList;
use crate::planner::{prepare_plan, PlanningContext};
use crate::qp::{solve_qp, SolveStatus};

/// Slack for comparing times that should sit on grid multiples.
const TIME_EPS: f64 = 1e-9;
const MAX_HALVINGS: usize = 20;
const MIN_GRADIENT_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOptMode {
    /// The last keyframe time is optimized too, against the `N·w` penalty.
    FreeEnd,
    /// Total duration is held and only interior times move; `w` is ignored.
    FixedEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeOptConfig {
    /// Cost per grid step of horizon.
    pub w: f64,
    /// Finite-difference step in seconds.
    pub h: f64,
    pub mode: TimeOptMode,
    pub max_iters: usize,
    /// Stop once an accepted step improves the score by less than this fraction.
    pub rel_tol: f64,
    /// Minimum separation between consecutive keyframes, seconds.
    pub min_gap: f64,
    /// Largest single-time move of the first line-search trial, seconds.
    pub initial_step: f64,
}

impl Default for TimeOptConfig {
    fn default() -> Self {
        Self {
            w: 0.0,
            h: DEFAULT_DT,
            mode: TimeOptMode::FixedEnd,
            max_iters: 50,
            rel_tol: 1e-6,
            min_gap: DEFAULT_DT,
            initial_step: 1.0,
        }
    }
}

impl TimeOptConfig {
    /// The horizon weight actually applied.
    pub fn effective_w(&self) -> f64 {
        match self.mode {
            TimeOptMode::FreeEnd => self.w,
            TimeOptMode::FixedEnd => 0.0,
        }
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        let field = |name: &str| format!("time_opt.{name}");
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::validation(field("w"), format!("must be finite and >= 0, got {}", self.w)));
        }
        if self.mode == TimeOptMode::FreeEnd && self.w <= 0.0 {
            return Err(Error::validation(
                field("w"),
                "free_end mode needs w > 0, otherwise the horizon grows without bound",
            ));
        }
        if !(self.h.is_finite() && self.h >= dt - TIME_EPS) {
            return Err(Error::validation(field("h"), format!("must be at least dt = {dt}, got {}", self.h)));
        }
        if !(self.min_gap.is_finite() && self.min_gap >= dt - TIME_EPS) {
            return Err(Error::validation(
                field("min_gap"),
                format!("must be at least dt = {dt}, got {}", self.min_gap),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::validation(field("max_iters"), "must be at least 1"));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return Err(Error::validation(field("rel_tol"), format!("must be finite and >= 0, got {}", self.rel_tol)));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::validation(
                field("initial_step"),
                format!("must be positive, got {}", self.initial_step),
            ));
        }
        Ok(())
    }

    /// Indices of the keyframe times that move.
    pub fn free_indices(&self, n_keyframes: usize) -> std::ops::Range<usize> {
        let end = match self.mode {
            TimeOptMode::FreeEnd => n_keyframes,
            TimeOptMode::FixedEnd => n_keyframes.saturating_sub(1),
        };
        1..end.max(1)
    }
}

/// One accepted iterate. Entry 0 of a trace is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeOptIteration {
    pub times: Vec<f64>,
    /// `f(t) + N·w`.
    pub score: f64,
    pub objective: f64,
    pub n_stages: usize,
    /// Accepted step in seconds along the normalized direction (0 for entry 0).
    pub step: f64,
    /// Euclidean norm of the gradient at these times (0 if not computed).
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TimeOptTrace {
    pub iterations: Vec<TimeOptIteration>,
}

impl TimeOptTrace {
    pub fn scores(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.score).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TimeOptOutcome {
    pub keyframes: KeyframeList,
    pub trace: TimeOptTrace,
    /// Set when the first iteration found no descent; times are then unchanged.
    pub no_progress: bool,
}

impl TimeOptOutcome {
    pub fn initial_score(&self) -> f64 {
        self.trace.iterations[0].score
    }

    pub fn final_score(&self) -> f64 {
        self.trace.iterations.last().map(|it| it.score).unwrap_or(f64::NAN)
    }
}

/// `f(t)` and the step count `N` implied by the last time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub n_stages: usize,
}

impl Evaluation {
    pub fn score(&self, w: f64) -> f64 {
        self.objective + self.n_stages as f64 * w
    }
}

/// Optimal planner objective for `keyframes` moved to `times`.
pub fn objective_f(keyframes: &KeyframeList, times: &[f64], ctx: &PlanningContext) -> Result<Evaluation> {
    let moved = keyframes.with_times(times)?;
    let stages = keyframe_index_map(times, ctx.dt)?;
    let plan = prepare_plan(&moved, ctx)?;
    let (_, report) = solve_qp(&plan.problem, &ctx.solver)?;
    if report.status != SolveStatus::Optimal {
        return Err(Error::Solver {
            status: report.status,
            detail: format!("objective evaluation at times {times:?}"),
        });
    }
    Ok(Evaluation {
        objective: report.objective,
        n_stages: *stages.last().unwrap(),
    })
}

/// Total score `f(t) + N·w`.
pub fn score(keyframes: &KeyframeList, times: &[f64], config: &TimeOptConfig, ctx: &PlanningContext) -> Result<f64> {
    Ok(objective_f(keyframes, times, ctx)?.score(config.effective_w()))
}

fn gap_ok(times: &[f64], i: usize, t: f64, min_gap: f64) -> bool {
    let after_prev = i == 0 || t >= times[i - 1] + min_gap - TIME_EPS;
    let before_next = i + 1 >= times.len() || t <= times[i + 1] - min_gap + TIME_EPS;
    after_prev && before_next
}

/// Score evaluation that treats grid collisions as an unusable point.
fn try_score(keyframes: &KeyframeList, times: &[f64], config: &TimeOptConfig, ctx: &PlanningContext) -> Result<Option<f64>> {
    match score(keyframes, times, config, ctx) {
        Ok(s) => Ok(Some(s)),
        Err(Error::KeyframeCollision { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Forward-difference score gradient over the free times, given the score at
/// `times`. A coordinate whose forward perturbation breaks the minimum gap
/// uses a backward difference instead; if neither fits, its entry is 0.
/// Entries are indexed like `times`; fixed times get 0.
pub fn numerical_gradient(
    keyframes: &KeyframeList,
    times: &[f64],
    base_score: f64,
    config: &TimeOptConfig,
    ctx: &PlanningContext,
) -> Result<Vec<f64>> {
    let h = config.h;
    let free: Vec<usize> = config.free_indices(times.len()).collect();
    let parts: Vec<Result<(usize, f64)>> = free
        .par_iter()
        .map(|&i| {
            let shifted = |delta: f64| {
                let mut t = times.to_vec();
                t[i] += delta;
                t
            };
            if gap_ok(times, i, times[i] + h, config.min_gap) {
                if let Some(s) = try_score(keyframes, &shifted(h), config, ctx)? {
                    return Ok((i, (s - base_score) / h));
                }
            }
            if gap_ok(times, i, times[i] - h, config.min_gap) {
                if let Some(s) = try_score(keyframes, &shifted(-h), config, ctx)? {
                    return Ok((i, (base_score - s) / h));
                }
            }
            Ok((i, 0.0))
        })
        .collect();
    let mut grad = vec![0.0; times.len()];
    for part in parts {
        let (i, g) = part?;
        grad[i] = g;
    }
    Ok(grad)
}

/// Central-difference counterpart of [`numerical_gradient`] with step `2h`.
pub fn central_gradient(
    keyframes: &KeyframeList,
    times: &[f64],
    config: &TimeOptConfig,
    ctx: &PlanningContext,
) -> Result<Vec<f64>> {
    let h = config.h;
    let mut grad = vec![0.0; times.len()];
    for i in config.free_indices(times.len()) {
        let mut plus = times.to_vec();
        let mut minus = times.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let sp = score(keyframes, &plus, config, ctx)?;
        let sm = score(keyframes, &minus, config, ctx)?;
        grad[i] = (sp - sm) / (2.0 * h);
    }
    Ok(grad)
}

/// Rounds candidate times onto the grid and enforces `t_0 = 0` plus a gap of
/// at least `min_gap` between neighbours. In fixed-end mode the last time is
/// restored to `t_end` and interior times are pushed left to make room.
pub fn project_times(candidate: &[f64], t_end: f64, config: &TimeOptConfig, dt: f64) -> Vec<f64> {
    let m = candidate.len();
    let gap = ((config.min_gap / dt) - TIME_EPS).ceil().max(1.0) as usize;
    let mut k: Vec<usize> = candidate.iter().map(|&t| stage_index(t.max(0.0), dt)).collect();
    k[0] = 0;
    for j in 1..m {
        k[j] = k[j].max(k[j - 1] + gap);
    }
    if config.mode == TimeOptMode::FixedEnd && m > 1 {
        k[m - 1] = stage_index(t_end, dt);
        for j in (1..m - 1).rev() {
            k[j] = k[j].min(k[j + 1].saturating_sub(gap));
        }
        for j in 1..m - 1 {
            k[j] = k[j].max(k[j - 1] + gap);
        }
    }
    let mut out: Vec<f64> = k.iter().map(|&i| i as f64 * dt).collect();
    if config.mode == TimeOptMode::FixedEnd && m > 1 {
        out[m - 1] = t_end;
    }
    out
}

fn check_start(keyframes: &KeyframeList, config: &TimeOptConfig, dt: f64) -> Result<()> {
    config.validate(dt)?;
    let times = keyframes.times();
    for j in 1..times.len() {
        if times[j] - times[j - 1] < config.min_gap - TIME_EPS {
            return Err(Error::validation(
                format!("keyframes[{j}].time"),
                format!("closer than min_gap = {} to the previous keyframe", config.min_gap),
            ));
        }
    }
    if config.mode == TimeOptMode::FixedEnd && times.len() > 1 {
        let gap = ((config.min_gap / dt) - TIME_EPS).ceil().max(1.0) as usize;
        let needed = gap * (times.len() - 1);
        if stage_index(*times.last().unwrap(), dt) < needed {
            return Err(Error::validation(
                "time_opt.min_gap",
                "the fixed horizon cannot hold every keyframe at min_gap on the grid",
            ));
        }
    }
    Ok(())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient descent on `f(t) + N·w` with a halving line search.
pub fn optimize_times(keyframes: &KeyframeList, config: &TimeOptConfig, ctx: &PlanningContext) -> Result<TimeOptOutcome> {
    check_start(keyframes, config, ctx.dt)?;
    let t_end = keyframes.last().time;
    let mut times = keyframes.times();
    let start = objective_f(keyframes, &times, ctx)?;
    let w = config.effective_w();
    let mut current = start.score(w);
    let mut trace = TimeOptTrace {
        iterations: vec![TimeOptIteration {
            times: times.clone(),
            score: current,
            objective: start.objective,
            n_stages: start.n_stages,
            step: 0.0,
            gradient_norm: 0.0,
        }],
    };
    let mut no_progress = false;

    for iter in 0..config.max_iters {
        let grad = numerical_gradient(keyframes, &times, current, config, ctx)?;
        let gnorm = norm2(&grad);
        trace.iterations.last_mut().unwrap().gradient_norm = gnorm;
        if gnorm < MIN_GRADIENT_NORM {
            no_progress = iter == 0;
            break;
        }
        let ginf = grad.iter().fold(0f64, |a, g| a.max(g.abs()));

        let mut step = config.initial_step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = times.iter().zip(&grad).map(|(t, g)| t - step * g / ginf).collect();
            let projected = project_times(&candidate, t_end, config, ctx.dt);
            let moved = projected.iter().zip(&times).any(|(a, b)| (a - b).abs() > TIME_EPS);
            if moved {
                if let Ok(eval) = objective_f(keyframes, &projected, ctx) {
                    if eval.score(w) < current {
                        accepted = Some((projected, eval));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((next, eval)) = accepted else {
            no_progress = iter == 0;
            break;
        };
        let next_score = eval.score(w);
        let improvement = current - next_score;
        times = next;
        current = next_score;
        trace.iterations.push(TimeOptIteration {
            times: times.clone(),
            score: current,
            objective: eval.objective,
            n_stages: eval.n_stages,
            step,
            gradient_norm: 0.0,
        });
        if improvement <= config.rel_tol * current.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let keyframes = if no_progress { keyframes.clone() } else { keyframes.with_times(&times)? };
    Ok(TimeOptOutcome {
        keyframes,
        trace,
        no_progress,
    })
}

//! End-to-end planning: keyframes in, feasible trajectory out, one direct QP solve.

use crate::dynamics::{
    build_discrete_model, keyframe_index_map, sx, DiscreteModel, GimbalParams, Grid, Input,
    QuadrotorParams, State, INPUT_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::keyframes::KeyframeList;
use crate::qp::{assemble_qp, solve_qp, PlanInputs, QpProblem, SolveReport, SolveSettings, SolveStatus, VarLayout, Weights};

/// Solved state/input sequences on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    /// `n_stages + 1` states.
    pub states: Vec<State>,
    /// `n_stages` inputs.
    pub inputs: Vec<Input>,
}

impl Trajectory {
    pub fn from_solution(layout: VarLayout, dt: f64, x: &[f64]) -> Result<Self> {
        if x.len() != layout.n_vars() {
            return Err(Error::Shape {
                what: "solution vector",
                expected: layout.n_vars(),
                actual: x.len(),
            });
        }
        let n = layout.n_stages;
        let states = (0..=n)
            .map(|i| State::from_column_slice(&x[layout.state(i, 0)..layout.state(i, 0) + STATE_DIM]))
            .collect();
        let inputs = (0..n)
            .map(|i| Input::from_column_slice(&x[layout.input(i, 0)..layout.input(i, 0) + INPUT_DIM]))
            .collect();
        Ok(Self {
            grid: Grid::new(dt, n)?,
            states,
            inputs,
        })
    }

    /// Stacked decision vector in [`VarLayout`] order.
    pub fn to_solution(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.states.iter().flat_map(|s| s.iter().copied()).collect();
        x.extend(self.inputs.iter().flat_map(|u| u.iter().copied()));
        x
    }

    /// `max_i |x_{i+1} - (A x_i + B u_i + c)|`.
    pub fn dynamics_residual(&self, model: &DiscreteModel) -> f64 {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, u)| (self.states[i + 1] - model.step(&self.states[i], u)).abs().max())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the input box, gimbal rate and gimbal angle bounds.
    pub fn bound_violation(&self, quad: &QuadrotorParams, gimbal: &GimbalParams) -> f64 {
        let over = |v: f64, lo: f64, hi: f64| (lo - v).max(v - hi).max(0.0);
        let mut worst: f64 = 0.0;
        for u in &self.inputs {
            for k in 0..4 {
                worst = worst.max(over(u[k], quad.u_min[k], quad.u_max[k]));
            }
            for k in 0..2 {
                worst = worst.max(over(u[4 + k], gimbal.rate_min[k], gimbal.rate_max[k]));
            }
        }
        for x in &self.states {
            worst = worst.max(over(x[sx::YAW_G], gimbal.yaw_range[0], gimbal.yaw_range[1]));
            worst = worst.max(over(x[sx::PITCH_G], gimbal.pitch_range[0], gimbal.pitch_range[1]));
        }
        worst
    }

    /// Camera yaw seen from the world: body yaw plus gimbal yaw.
    pub fn camera_yaw(&self) -> Vec<f64> {
        self.states.iter().map(|x| x[sx::YAW_Q] + x[sx::YAW_G]).collect()
    }

    pub fn camera_pitch(&self) -> Vec<f64> {
        self.states.iter().map(|x| x[sx::PITCH_G]).collect()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.states.iter().map(|x| [x[0], x[1], x[2]]).collect()
    }
}

/// Everything needed to plan, minus the keyframe times being optimized.
#[derive(Debug, Clone)]
pub struct PlanningContext {
    pub quad: QuadrotorParams,
    pub gimbal: GimbalParams,
    pub weights: Weights,
    pub dt: f64,
    pub initial_state: Option<State>,
    pub solver: SolveSettings,
}

impl PlanningContext {
    pub fn new(quad: QuadrotorParams, gimbal: GimbalParams, weights: Weights, dt: f64) -> Self {
        Self {
            quad,
            gimbal,
            weights,
            dt,
            initial_state: None,
            solver: SolveSettings::default(),
        }
    }

    pub fn model(&self) -> Result<DiscreteModel> {
        build_discrete_model(&self.quad, &self.gimbal, self.dt)
    }
}

/// Rest state at the first keyframe: body yaw carries the requested yaw,
/// gimbal yaw is centered and gimbal pitch takes the requested pitch.
pub fn default_initial_state(keyframes: &KeyframeList, gimbal: &GimbalParams) -> State {
    let first = &keyframes[0];
    let mut x = State::zeros();
    for k in 0..3 {
        x[sx::POS + k] = first.position[k];
    }
    x[sx::YAW_Q] = first.yaw;
    x[sx::YAW_G] = 0.0f64.clamp(gimbal.yaw_range[0], gimbal.yaw_range[1]);
    x[sx::PITCH_G] = gimbal.clamp_pitch(first.pitch);
    x
}

/// The assembled program and what it was built from.
#[derive(Debug, Clone)]
pub struct PreparedPlan {
    pub problem: QpProblem,
    pub model: DiscreteModel,
    pub grid: Grid,
    pub stages: Vec<usize>,
    pub initial_state: State,
}

/// Stages up to the last keyframe, but never fewer than the longest
/// finite-difference stencil needs.
pub fn horizon_stages(keyframe_stages: &[usize], weights: &Weights) -> usize {
    keyframe_stages
        .last()
        .copied()
        .unwrap_or(0)
        .max(weights.max_active_order())
        .max(1)
}

pub fn prepare_plan(keyframes: &KeyframeList, ctx: &PlanningContext) -> Result<PreparedPlan> {
    let model = ctx.model()?;
    let stages = keyframe_index_map(&keyframes.times(), ctx.dt)?;
    let grid = Grid::new(ctx.dt, horizon_stages(&stages, &ctx.weights))?;
    let initial_state = ctx
        .initial_state
        .unwrap_or_else(|| default_initial_state(keyframes, &ctx.gimbal));
    let problem = assemble_qp(&PlanInputs {
        keyframes,
        quad: &ctx.quad,
        gimbal: &ctx.gimbal,
        model: &model,
        grid,
        weights: &ctx.weights,
        initial_state,
    })?;
    Ok(PreparedPlan {
        problem,
        model,
        grid,
        stages,
        initial_state,
    })
}

/// Grid, model, assembly, a single sparse solve and trajectory extraction.
pub fn plan_trajectory(
    keyframes: &KeyframeList,
    ctx: &PlanningContext,
) -> Result<(Trajectory, SolveReport)> {
    let plan = prepare_plan(keyframes, ctx)?;
    let (x, report) = solve_qp(&plan.problem, &ctx.solver)?;
    if report.status != SolveStatus::Optimal {
        let r = &report.kkt_residuals;
        return Err(Error::Solver {
            status: report.status,
            detail: format!(
                "after {} iterations: eq {:.3e}, ineq {:.3e}, stationarity {:.3e}, complementarity {:.3e}",
                report.iterations, r.primal_eq, r.primal_ineq, r.stationarity, r.complementarity
            ),
        });
    }
    let traj = Trajectory::from_solution(plan.problem.layout.unwrap(), ctx.dt, &x)?;
    Ok((traj, report))
}

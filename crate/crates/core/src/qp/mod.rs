//! Sparse quadratic program for joint quadrotor + gimbal trajectories.
//!
//! Decision vector layout: `[x_0, ..., x_N, u_0, ..., u_{N-1}]`.

pub mod cost;
mod solve;
pub mod sparse;

pub use cost::{
    build_derivative_cost, build_effort_cost, build_keyframe_cost, build_orientation_cost,
    QuadraticCost, Residual, Weights,
};
pub use solve::{solve_qp, KktResiduals, SolveReport, SolveSettings, SolveStatus};
pub use sparse::{SparseMatrix, TripletBuilder};

use std::sync::Arc;

use crate::dynamics::{
    sx, DiscreteModel, GimbalParams, Grid, QuadrotorParams, State, INPUT_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::keyframes::KeyframeList;

/// Index arithmetic for the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub n_stages: usize,
}

impl VarLayout {
    pub fn new(n_stages: usize) -> Self {
        Self { n_stages }
    }

    pub fn n_state_vars(&self) -> usize {
        STATE_DIM * (self.n_stages + 1)
    }

    pub fn n_input_vars(&self) -> usize {
        INPUT_DIM * self.n_stages
    }

    pub fn n_vars(&self) -> usize {
        self.n_state_vars() + self.n_input_vars()
    }

    pub fn state(&self, stage: usize, k: usize) -> usize {
        debug_assert!(stage <= self.n_stages && k < STATE_DIM);
        stage * STATE_DIM + k
    }

    pub fn input(&self, stage: usize, k: usize) -> usize {
        debug_assert!(stage < self.n_stages && k < INPUT_DIM);
        self.n_state_vars() + stage * INPUT_DIM + k
    }
}

/// `min X^T H X / 2 + f^T X + constant  s.t.  A_eq X = b_eq,  A_ineq X <= b_ineq`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: SparseMatrix,
    pub f: Vec<f64>,
    pub constant: f64,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_ineq: SparseMatrix,
    pub b_ineq: Vec<f64>,
    /// Present when the problem came from [`assemble_qp`].
    pub layout: Option<VarLayout>,
    /// Residual form of the cost, when known. Used for accurate objective values.
    pub residuals: Option<Arc<[Residual]>>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        match &self.residuals {
            Some(rs) => rs.iter().map(|r| r.value(x)).sum(),
            None => 0.5 * self.h.quad_form(x) + cost::dot(&self.f, x) + self.constant,
        }
    }

    /// Same problem without inequality rows.
    pub fn without_inequalities(&self) -> QpProblem {
        QpProblem {
            a_ineq: SparseMatrix::zeros(0, self.n_vars()),
            b_ineq: Vec::new(),
            ..self.clone()
        }
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let n = self.n_vars();
        let checks = [
            ("H rows", self.h.nrows, n),
            ("H cols", self.h.ncols, n),
            ("A_eq cols", self.a_eq.ncols, n),
            ("b_eq", self.b_eq.len(), self.a_eq.nrows),
            ("A_ineq cols", self.a_ineq.ncols, n),
            ("b_ineq", self.b_ineq.len(), self.a_ineq.nrows),
        ];
        for (what, actual, expected) in checks {
            if actual != expected {
                return Err(Error::Shape {
                    what,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Everything the planner needs to set up one program.
#[derive(Debug, Clone)]
pub struct PlanInputs<'a> {
    pub keyframes: &'a KeyframeList,
    pub quad: &'a QuadrotorParams,
    pub gimbal: &'a GimbalParams,
    pub model: &'a DiscreteModel,
    pub grid: Grid,
    pub weights: &'a Weights,
    pub initial_state: State,
}

/// Builds costs, dynamics equalities, the initial-state pin and the box
/// constraints on inputs and gimbal angles.
pub fn assemble_qp(inputs: &PlanInputs<'_>) -> Result<QpProblem> {
    let PlanInputs {
        keyframes,
        quad,
        gimbal,
        model,
        grid,
        weights,
        initial_state,
    } = inputs;
    if (model.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::Parameter(format!(
            "model dt {} differs from grid dt {}",
            model.dt, grid.dt
        )));
    }
    weights.validate()?;
    check_initial_state(initial_state, gimbal)?;

    let n = grid.n_stages;
    let layout = VarLayout::new(n);
    let nv = layout.n_vars();

    let mut cost = build_keyframe_cost(keyframes, grid, weights.keyframe)?;
    cost.add(&build_derivative_cost(
        grid,
        &weights.position_derivative,
        &weights.angle_derivative,
    )?);
    cost.add(&build_orientation_cost(keyframes, grid, weights.orientation)?);
    cost.add(&build_effort_cost(grid, quad, weights.effort));
    let (h, f, constant) = cost.finish();

    // Pin x_0, then x_{i+1} - A x_i - B u_i = c for every stage.
    let mut a_eq = TripletBuilder::new(STATE_DIM * (n + 1), nv);
    let mut b_eq = Vec::with_capacity(STATE_DIM * (n + 1));
    for k in 0..STATE_DIM {
        a_eq.push(k, layout.state(0, k), 1.0);
        b_eq.push(initial_state[k]);
    }
    for i in 0..n {
        for r in 0..STATE_DIM {
            let row = STATE_DIM * (i + 1) + r;
            a_eq.push(row, layout.state(i + 1, r), 1.0);
            for c in 0..STATE_DIM {
                a_eq.push(row, layout.state(i, c), -model.a[(r, c)]);
            }
            for c in 0..INPUT_DIM {
                a_eq.push(row, layout.input(i, c), -model.b[(r, c)]);
            }
            b_eq.push(model.c[r]);
        }
    }

    let input_lo = [
        quad.u_min[0],
        quad.u_min[1],
        quad.u_min[2],
        quad.u_min[3],
        gimbal.rate_min[0],
        gimbal.rate_min[1],
    ];
    let input_hi = [
        quad.u_max[0],
        quad.u_max[1],
        quad.u_max[2],
        quad.u_max[3],
        gimbal.rate_max[0],
        gimbal.rate_max[1],
    ];
    let mut boxes: Vec<(usize, f64, f64)> = Vec::with_capacity(INPUT_DIM * n + 2 * n);
    for i in 0..n {
        for k in 0..INPUT_DIM {
            boxes.push((layout.input(i, k), input_lo[k], input_hi[k]));
        }
    }
    // x_0 is pinned and already checked against the ranges.
    for i in 1..=n {
        let [ylo, yhi] = gimbal.yaw_range;
        let [plo, phi] = gimbal.pitch_range;
        boxes.push((layout.state(i, sx::YAW_G), ylo, yhi));
        boxes.push((layout.state(i, sx::PITCH_G), plo, phi));
    }
    let (a_ineq, b_ineq) = box_rows(&boxes, nv);

    Ok(QpProblem {
        h,
        f,
        constant,
        a_eq: a_eq.build(),
        b_eq,
        a_ineq,
        b_ineq,
        layout: Some(layout),
        residuals: Some(cost.residuals().into()),
    })
}

fn check_initial_state(x0: &State, gimbal: &GimbalParams) -> Result<()> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("initial_state", "values must be finite"));
    }
    let checks = [
        ("initial_state.gimbal_yaw", x0[sx::YAW_G], gimbal.yaw_range),
        ("initial_state.gimbal_pitch", x0[sx::PITCH_G], gimbal.pitch_range),
    ];
    for (path, v, [lo, hi]) in checks {
        if v < lo || v > hi {
            return Err(Error::Infeasible(format!(
                "{path} = {v} lies outside the gimbal range [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Two rows per bounded variable: `x <= hi` and `-x <= -lo`.
fn box_rows(boxes: &[(usize, f64, f64)], n_vars: usize) -> (SparseMatrix, Vec<f64>) {
    let mut a = TripletBuilder::new(2 * boxes.len(), n_vars);
    let mut b = Vec::with_capacity(2 * boxes.len());
    for (r, &(var, lo, hi)) in boxes.iter().enumerate() {
        a.push(2 * r, var, 1.0);
        a.push(2 * r + 1, var, -1.0);
        b.push(hi);
        b.push(-lo);
    }
    (a.build(), b)
}

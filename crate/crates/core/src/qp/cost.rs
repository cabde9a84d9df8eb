//! Sum-of-squares cost terms over the stacked decision vector.
//!
//! Every term is a weighted squared affine residual `w * (a . X - d)^2`, so
//! the accumulated Hessian is PSD by construction.

use serde::{Deserialize, Serialize};

use super::sparse::{SparseMatrix, TripletBuilder};
use super::VarLayout;
use crate::dynamics::{keyframe_index_map, sx, ux, Grid, QuadrotorParams};
use crate::error::{Error, Result};
use crate::keyframes::KeyframeList;

/// Highest derivative order with a penalty weight.
pub const MAX_DERIVATIVE_ORDER: usize = 3;

/// Cost weights. `position_derivative[q-1]` and `angle_derivative[q-1]`
/// penalize the q-th finite-difference derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub keyframe: f64,
    pub orientation: f64,
    pub position_derivative: [f64; MAX_DERIVATIVE_ORDER],
    pub angle_derivative: [f64; MAX_DERIVATIVE_ORDER],
    /// Small penalty on deviation from hover (acceleration units) and on
    /// gimbal rates. Keeps the program strictly convex.
    pub effort: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            keyframe: 1e4,
            orientation: 1e4,
            position_derivative: [0.0, 0.0, 1.0],
            angle_derivative: [0.0, 0.0, 1.0],
            effort: 1e-4,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("weights.keyframe", self.keyframe),
            ("weights.orientation", self.orientation),
            ("weights.effort", self.effort),
        ];
        for (path, v) in scalars {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(path, "must be finite and non-negative"));
            }
        }
        for (name, arr) in [
            ("position_derivative", &self.position_derivative),
            ("angle_derivative", &self.angle_derivative),
        ] {
            for (q, v) in arr.iter().enumerate() {
                if !(*v >= 0.0) || !v.is_finite() {
                    return Err(Error::validation(
                        format!("weights.{name}[{q}]"),
                        "must be finite and non-negative",
                    ));
                }
            }
            if arr.iter().all(|&v| v == 0.0) {
                return Err(Error::validation(
                    format!("weights.{name}"),
                    "at least one derivative order needs a positive weight",
                ));
            }
        }
        Ok(())
    }

    /// Highest derivative order with a positive weight, 0 if none.
    pub fn max_active_order(&self) -> usize {
        (1..=MAX_DERIVATIVE_ORDER)
            .rev()
            .find(|&q| self.position_derivative[q - 1] > 0.0 || self.angle_derivative[q - 1] > 0.0)
            .unwrap_or(0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            keyframe: s * self.keyframe,
            orientation: s * self.orientation,
            position_derivative: self.position_derivative.map(|v| s * v),
            angle_derivative: self.angle_derivative.map(|v| s * v),
            effort: s * self.effort,
        }
    }
}

/// One `weight * (sum_k coef_k * X[var_k] - target)^2` term.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub weight: f64,
    pub terms: Vec<(usize, f64)>,
    pub target: f64,
}

impl Residual {
    pub fn value(&self, x: &[f64]) -> f64 {
        let r: f64 = self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() - self.target;
        self.weight * r * r
    }
}

/// Accumulated `X^T H X / 2 + f^T X + constant`, together with the
/// residuals it was built from.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    hessian: TripletBuilder,
    linear: Vec<f64>,
    constant: f64,
    residuals: Vec<Residual>,
}

impl QuadraticCost {
    pub fn new(n_vars: usize) -> Self {
        Self {
            hessian: TripletBuilder::new(n_vars, n_vars),
            linear: vec![0.0; n_vars],
            constant: 0.0,
            residuals: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    /// Adds `weight * (sum_k coef_k * X[var_k] - target)^2`.
    pub fn add_residual(&mut self, weight: f64, terms: &[(usize, f64)], target: f64) {
        if weight == 0.0 {
            return;
        }
        for &(i, a) in terms {
            for &(j, b) in terms {
                self.hessian.push(i, j, 2.0 * weight * a * b);
            }
            self.linear[i] -= 2.0 * weight * target * a;
        }
        self.constant += weight * target * target;
        self.residuals.push(Residual {
            weight,
            terms: terms.to_vec(),
            target,
        });
    }

    pub fn add(&mut self, other: &QuadraticCost) {
        self.hessian.extend(&other.hessian);
        for (a, b) in self.linear.iter_mut().zip(&other.linear) {
            *a += b;
        }
        self.constant += other.constant;
        self.residuals.extend(other.residuals.iter().cloned());
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .hessian
            .entries()
            .iter()
            .map(|&(r, c, v)| x[r] * v * x[c])
            .sum();
        0.5 * quad + dot(&self.linear, x) + self.constant
    }

    /// Same value as [`evaluate`](Self::evaluate), summed term by term. Avoids
    /// the cancellation between large quadratic and linear parts.
    pub fn sum_of_squares(&self, x: &[f64]) -> f64 {
        self.residuals.iter().map(|r| r.value(x)).sum()
    }

    pub fn residuals(&self) -> &[Residual] {
        &self.residuals
    }

    pub fn finish(&self) -> (SparseMatrix, Vec<f64>, f64) {
        (self.hessian.build(), self.linear.clone(), self.constant)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn keyframe_stages(keyframes: &KeyframeList, grid: &Grid) -> Result<Vec<usize>> {
    let stages = keyframe_index_map(&keyframes.times(), grid.dt)?;
    for (j, &s) in stages.iter().enumerate() {
        if s > grid.n_stages {
            return Err(Error::IndexOutOfGrid {
                keyframe: j,
                stage: s,
                n_stages: grid.n_stages,
            });
        }
    }
    Ok(stages)
}

/// `weight * sum_j |r(stage_j) - k_j|^2`.
pub fn build_keyframe_cost(
    keyframes: &KeyframeList,
    grid: &Grid,
    weight: f64,
) -> Result<QuadraticCost> {
    let layout = VarLayout::new(grid.n_stages);
    let mut cost = QuadraticCost::new(layout.n_vars());
    for (kf, stage) in keyframes.as_slice().iter().zip(keyframe_stages(keyframes, grid)?) {
        for k in 0..3 {
            cost.add_residual(weight, &[(layout.state(stage, sx::POS + k), 1.0)], kf.position[k]);
        }
    }
    Ok(cost)
}

/// Backward finite-difference coefficients for `x_i, x_{i-1}, ..., x_{i-q}`,
/// already divided by `dt^q`.
pub fn difference_stencil(order: usize, dt: f64) -> Vec<f64> {
    let scale = dt.powi(order as i32);
    let mut binom = 1.0;
    (0..=order)
        .map(|m| {
            let c = if m % 2 == 0 { binom } else { -binom };
            binom = binom * (order - m) as f64 / (m + 1) as f64;
            c / scale
        })
        .collect()
}

const ANGLE_CHANNELS: [usize; 3] = [sx::YAW_Q, sx::YAW_G, sx::PITCH_G];

/// Squared finite-difference derivatives of position (per-order weights
/// `position`) and of body yaw, gimbal yaw and gimbal pitch (`angle`),
/// summed over stages `q..=N`.
pub fn build_derivative_cost(
    grid: &Grid,
    position: &[f64; MAX_DERIVATIVE_ORDER],
    angle: &[f64; MAX_DERIVATIVE_ORDER],
) -> Result<QuadraticCost> {
    let layout = VarLayout::new(grid.n_stages);
    let mut cost = QuadraticCost::new(layout.n_vars());
    for order in 1..=MAX_DERIVATIVE_ORDER {
        let (wp, wa) = (position[order - 1], angle[order - 1]);
        if wp == 0.0 && wa == 0.0 {
            continue;
        }
        if order > grid.n_stages {
            return Err(Error::InsufficientHorizon {
                order,
                n_stages: grid.n_stages,
            });
        }
        let stencil = difference_stencil(order, grid.dt);
        let mut terms = Vec::with_capacity(order + 1);
        for i in order..=grid.n_stages {
            let channels = (0..3)
                .map(|k| (sx::POS + k, wp))
                .chain(ANGLE_CHANNELS.iter().map(|&ch| (ch, wa)));
            for (ch, w) in channels {
                terms.clear();
                terms.extend(
                    stencil
                        .iter()
                        .enumerate()
                        .map(|(m, &c)| (layout.state(i - m, ch), c)),
                );
                cost.add_residual(w, &terms, 0.0);
            }
        }
    }
    Ok(cost)
}

/// `weight * sum_j [(yaw_g + yaw_q - yaw_j)^2 + (pitch_g - pitch_j)^2]` at the
/// keyframe stages, against unwrapped desired yaws.
pub fn build_orientation_cost(
    keyframes: &KeyframeList,
    grid: &Grid,
    weight: f64,
) -> Result<QuadraticCost> {
    let layout = VarLayout::new(grid.n_stages);
    let mut cost = QuadraticCost::new(layout.n_vars());
    let yaws = keyframes.unwrapped_yaws();
    let stages = keyframe_stages(keyframes, grid)?;
    for ((kf, &stage), &yaw) in keyframes.as_slice().iter().zip(&stages).zip(&yaws) {
        cost.add_residual(
            weight,
            &[
                (layout.state(stage, sx::YAW_Q), 1.0),
                (layout.state(stage, sx::YAW_G), 1.0),
            ],
            yaw,
        );
        cost.add_residual(weight, &[(layout.state(stage, sx::PITCH_G), 1.0)], kf.pitch);
    }
    Ok(cost)
}

/// `weight * sum_i [|F_i/m + g|^2 + (M_i/I)^2 + |u_g,i|^2]`.
pub fn build_effort_cost(grid: &Grid, quad: &QuadrotorParams, weight: f64) -> QuadraticCost {
    let layout = VarLayout::new(grid.n_stages);
    let mut cost = QuadraticCost::new(layout.n_vars());
    let hover = quad.hover_input();
    for i in 0..grid.n_stages {
        for k in 0..3 {
            cost.add_residual(
                weight,
                &[(layout.input(i, ux::FORCE + k), 1.0 / quad.mass)],
                hover[k] / quad.mass,
            );
        }
        cost.add_residual(weight, &[(layout.input(i, ux::TORQUE), 1.0 / quad.inertia_z)], 0.0);
        cost.add_residual(weight, &[(layout.input(i, ux::RATE_YAW_G), 1.0)], 0.0);
        cost.add_residual(weight, &[(layout.input(i, ux::RATE_PITCH_G), 1.0)], 0.0);
    }
    cost
}

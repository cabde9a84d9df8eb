//! Linear quadrotor + gimbal model and its zero-order-hold discretization.
//!
//! The body is a point mass with a single rotational degree of freedom about
//! the world z-axis (roll and pitch are held level). The gimbal adds two
//! kinematic angles driven directly by rate inputs. Both subsystems share one
//! augmented state so the orientation cost can couple body and gimbal yaw.
//!
//! State layout (10): `[x, y, z, yaw_q, yaw_g, pitch_g, vx, vy, vz, yaw_rate_q]`.
//! Input layout (6): `[fx, fy, fz, torque_z, rate_yaw_g, rate_pitch_g]`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 10;
pub const INPUT_DIM: usize = 6;

pub type State = SVector<f64, STATE_DIM>;
pub type Input = SVector<f64, INPUT_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Offsets into [`State`].
pub mod sx {
    pub const POS: usize = 0;
    pub const YAW_Q: usize = 3;
    pub const YAW_G: usize = 4;
    pub const PITCH_G: usize = 5;
    pub const VEL: usize = 6;
    pub const YAW_RATE_Q: usize = 9;
}

/// Offsets into [`Input`].
pub mod ux {
    pub const FORCE: usize = 0;
    pub const TORQUE: usize = 3;
    pub const RATE_YAW_G: usize = 4;
    pub const RATE_PITCH_G: usize = 5;
}

pub const DEFAULT_DT: f64 = 0.1;

/// Rigid-body parameters and input box of the quadrotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia_z: f64,
    pub gravity: [f64; 3],
    /// `[fx, fy, fz, torque_z]` lower bounds.
    pub u_min: [f64; 4],
    /// `[fx, fy, fz, torque_z]` upper bounds.
    pub u_max: [f64; 4],
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        // Roughly a 0.5 kg consumer camera drone.
        Self {
            mass: 0.5,
            inertia_z: 0.01,
            gravity: [0.0, 0.0, -9.81],
            u_min: [-4.0, -4.0, 0.0, -0.2],
            u_max: [4.0, 4.0, 10.0, 0.2],
        }
    }
}

impl QuadrotorParams {
    /// Force/torque that exactly cancels gravity.
    pub fn hover_input(&self) -> [f64; 4] {
        [
            -self.mass * self.gravity[0],
            -self.mass * self.gravity[1],
            -self.mass * self.gravity[2],
            0.0,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::validation("quadrotor.mass", "must be positive"));
        }
        if !(self.inertia_z > 0.0) || !self.inertia_z.is_finite() {
            return Err(Error::validation("quadrotor.inertia_z", "must be positive"));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::validation("quadrotor.gravity", "must be finite"));
        }
        let hover = self.hover_input();
        for k in 0..4 {
            if !(self.u_min[k] < self.u_max[k]) {
                return Err(Error::validation(
                    format!("quadrotor.u_min[{k}]"),
                    format!("must be below u_max[{k}]"),
                ));
            }
            if !(self.u_min[k] < hover[k] && hover[k] < self.u_max[k]) {
                return Err(Error::validation(
                    format!("quadrotor.u_max[{k}]"),
                    format!(
                        "hover input {} is not strictly inside [{}, {}]",
                        hover[k], self.u_min[k], self.u_max[k]
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Range of motion and rate limits of the 2-axis camera gimbal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GimbalParams {
    pub yaw_range: [f64; 2],
    pub pitch_range: [f64; 2],
    /// `[yaw, pitch]` rate lower bounds, rad/s.
    pub rate_min: [f64; 2],
    /// `[yaw, pitch]` rate upper bounds, rad/s.
    pub rate_max: [f64; 2],
}

impl Default for GimbalParams {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            yaw_range: [-PI, PI],
            pitch_range: [-FRAC_PI_2, 0.0],
            rate_min: [-PI, -PI],
            rate_max: [PI, PI],
        }
    }
}

impl GimbalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.yaw_range[0] < self.yaw_range[1]) {
            return Err(Error::validation("gimbal.yaw_range", "must satisfy min < max"));
        }
        if !(self.pitch_range[0] < self.pitch_range[1]) {
            return Err(Error::validation("gimbal.pitch_range", "must satisfy min < max"));
        }
        for k in 0..2 {
            if !(self.rate_min[k] < 0.0) {
                return Err(Error::validation(
                    format!("gimbal.rate_min[{k}]"),
                    "must be negative",
                ));
            }
            if !(self.rate_max[k] > 0.0) {
                return Err(Error::validation(
                    format!("gimbal.rate_max[{k}]"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn clamp_pitch(&self, pitch: f64) -> f64 {
        pitch.clamp(self.pitch_range[0], self.pitch_range[1])
    }
}

/// `x_{i+1} = a x_i + b u_i + c` on a uniform grid of step `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub c: State,
    pub dt: f64,
}

impl DiscreteModel {
    pub fn step(&self, x: &State, u: &Input) -> State {
        self.a * x + self.b * u + self.c
    }
}

/// Exact zero-order-hold discretization, in closed form.
///
/// Translation and body yaw are double integrators, gimbal angles are single
/// integrators of their rate inputs, so the matrix exponential truncates after
/// the quadratic term.
pub fn build_discrete_model(
    quad: &QuadrotorParams,
    gimbal: &GimbalParams,
    dt: f64,
) -> Result<DiscreteModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    quad.validate()?;
    gimbal.validate()?;

    let half_dt2 = 0.5 * dt * dt;
    let mut a = StateMatrix::identity();
    let mut b = InputMatrix::zeros();
    let mut c = State::zeros();

    for k in 0..3 {
        a[(sx::POS + k, sx::VEL + k)] = dt;
        b[(sx::POS + k, ux::FORCE + k)] = half_dt2 / quad.mass;
        b[(sx::VEL + k, ux::FORCE + k)] = dt / quad.mass;
        c[sx::POS + k] = half_dt2 * quad.gravity[k];
        c[sx::VEL + k] = dt * quad.gravity[k];
    }

    a[(sx::YAW_Q, sx::YAW_RATE_Q)] = dt;
    b[(sx::YAW_Q, ux::TORQUE)] = half_dt2 / quad.inertia_z;
    b[(sx::YAW_RATE_Q, ux::TORQUE)] = dt / quad.inertia_z;

    b[(sx::YAW_G, ux::RATE_YAW_G)] = dt;
    b[(sx::PITCH_G, ux::RATE_PITCH_G)] = dt;

    Ok(DiscreteModel { a, b, c, dt })
}

/// Forward simulation: returns `inputs.len() + 1` states starting at `x0`.
pub fn propagate(model: &DiscreteModel, x0: &State, inputs: &[Input]) -> Vec<State> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    for u in inputs {
        let next = model.step(states.last().unwrap(), u);
        states.push(next);
    }
    states
}

/// [`propagate`] over flat row-major buffers, checking dimensions.
pub fn propagate_flat(model: &DiscreteModel, x0: &[f64], inputs: &[f64]) -> Result<Vec<State>> {
    if x0.len() != STATE_DIM {
        return Err(Error::Shape {
            what: "initial state",
            expected: STATE_DIM,
            actual: x0.len(),
        });
    }
    if inputs.len() % INPUT_DIM != 0 {
        return Err(Error::Shape {
            what: "input sequence",
            expected: (inputs.len() / INPUT_DIM + 1) * INPUT_DIM,
            actual: inputs.len(),
        });
    }
    let x0 = State::from_column_slice(x0);
    let inputs: Vec<Input> = inputs
        .chunks_exact(INPUT_DIM)
        .map(Input::from_column_slice)
        .collect();
    Ok(propagate(model, &x0, &inputs))
}

/// Uniform time grid with `n_stages` steps: states live on `0..=n_stages`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dt: f64,
    pub n_stages: usize,
}

impl Grid {
    pub fn new(dt: f64, n_stages: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        if n_stages == 0 {
            return Err(Error::Parameter("grid needs at least one stage".into()));
        }
        Ok(Self { dt, n_stages })
    }

    /// Grid covering `[0, t_end]`; a zero-length horizon still gets one stage.
    pub fn for_horizon(t_end: f64, dt: f64) -> Result<Self> {
        Self::new(dt, stage_index(t_end, dt).max(1))
    }

    pub fn horizon(&self) -> f64 {
        self.n_stages as f64 * self.dt
    }

    pub fn time(&self, stage: usize) -> f64 {
        stage as f64 * self.dt
    }
}

/// Nearest grid index, ties rounding up. The small bias absorbs binary
/// representation error so that e.g. `0.25 / 0.1` resolves to 3.
pub fn stage_index(t: f64, dt: f64) -> usize {
    (t / dt + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Maps keyframe times onto grid indices, rejecting collisions.
pub fn keyframe_index_map(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let mut out: Vec<usize> = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Parameter(format!("keyframe {j} has invalid time {t}")));
        }
        let idx = stage_index(t, dt);
        if let Some(&prev) = out.last() {
            if idx <= prev {
                return Err(Error::KeyframeCollision {
                    first: j - 1,
                    second: j,
                    index: idx,
                });
            }
        }
        out.push(idx);
    }
    Ok(out)
}

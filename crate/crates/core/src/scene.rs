//! Scene files: quadrotor, gimbal, weights, keyframes and optional
//! look-at and time-optimization settings in one TOML document.
//!
//! ```toml
//! dt = 0.1
//!
//! [weights]
//! keyframe = 1e4
//!
//! [[keyframes]]
//! time = 0.0
//! position = [0.0, 0.0, 2.0]
//! yaw = 0.0
//! pitch = -0.2
//! ```
//!
//! Omitted tables and fields take their defaults. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::LookAtKeyframe;
use crate::dynamics::{sx, GimbalParams, QuadrotorParams, State, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::keyframes::{Keyframe, KeyframeList};
use crate::planner::{default_initial_state, PlanningContext};
use crate::qp::Weights;
use crate::time_opt::TimeOptConfig;

/// Starting state. Missing entries fall back to rest at the first keyframe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gimbal_yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gimbal_pitch: Option<f64>,
}

impl InitialState {
    pub fn resolve(&self, keyframes: &KeyframeList, gimbal: &GimbalParams) -> State {
        let mut x = default_initial_state(keyframes, gimbal);
        if let Some(p) = self.position {
            for k in 0..3 {
                x[sx::POS + k] = p[k];
            }
        }
        if let Some(v) = self.velocity {
            for k in 0..3 {
                x[sx::VEL + k] = v[k];
            }
        }
        if let Some(v) = self.yaw {
            x[sx::YAW_Q] = v;
        }
        if let Some(v) = self.yaw_rate {
            x[sx::YAW_RATE_Q] = v;
        }
        if let Some(v) = self.gimbal_yaw {
            x[sx::YAW_G] = v;
        }
        if let Some(v) = self.gimbal_pitch {
            x[sx::PITCH_G] = v;
        }
        x
    }

    fn validate(&self, gimbal: &GimbalParams) -> Result<()> {
        let vectors = [("position", self.position), ("velocity", self.velocity)];
        for (name, v) in vectors {
            if v.is_some_and(|v| v.iter().any(|c| !c.is_finite())) {
                return Err(Error::validation(format!("initial_state.{name}"), "must be finite"));
            }
        }
        let scalars = [
            ("yaw", self.yaw),
            ("yaw_rate", self.yaw_rate),
            ("gimbal_yaw", self.gimbal_yaw),
            ("gimbal_pitch", self.gimbal_pitch),
        ];
        for (name, v) in scalars {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(Error::validation(format!("initial_state.{name}"), "must be finite"));
            }
        }
        let ranges = [
            ("gimbal_yaw", self.gimbal_yaw, gimbal.yaw_range),
            ("gimbal_pitch", self.gimbal_pitch, gimbal.pitch_range),
        ];
        for (name, v, [lo, hi]) in ranges {
            if let Some(v) = v {
                if v < lo || v > hi {
                    return Err(Error::validation(
                        format!("initial_state.{name}"),
                        format!("{v} outside gimbal range [{lo}, {hi}]"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// On-disk layout; top-level scalars come before tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default)]
    quadrotor: QuadrotorParams,
    #[serde(default)]
    gimbal: GimbalParams,
    #[serde(default)]
    weights: Weights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_state: Option<InitialState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_opt: Option<TimeOptConfig>,
    keyframes: Vec<Keyframe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lookat_keyframes: Option<Vec<LookAtKeyframe>>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

/// A validated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub quadrotor: QuadrotorParams,
    pub gimbal: GimbalParams,
    pub dt: f64,
    pub weights: Weights,
    pub keyframes: KeyframeList,
    pub lookat_keyframes: Option<Vec<LookAtKeyframe>>,
    pub time_opt: Option<TimeOptConfig>,
    pub initial_state: Option<InitialState>,
}

impl SceneSpec {
    /// Checks every nested invariant; errors carry the offending field path.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", format!("must be positive, got {}", self.dt)));
        }
        self.quadrotor.validate()?;
        self.gimbal.validate()?;
        self.weights.validate()?;
        self.keyframes.validate_for(&self.gimbal, self.dt)?;
        if let Some(init) = &self.initial_state {
            init.validate(&self.gimbal)?;
        }
        if let Some(lookat) = &self.lookat_keyframes {
            validate_lookat(lookat)?;
        }
        if let Some(cfg) = &self.time_opt {
            cfg.validate(self.dt)?;
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Option<State> {
        self.initial_state
            .as_ref()
            .map(|s| s.resolve(&self.keyframes, &self.gimbal))
    }

    pub fn context(&self) -> PlanningContext {
        let mut ctx = PlanningContext::new(
            self.quadrotor.clone(),
            self.gimbal.clone(),
            self.weights.clone(),
            self.dt,
        );
        ctx.initial_state = self.initial_state();
        ctx
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = SceneFile {
            dt: self.dt,
            quadrotor: self.quadrotor.clone(),
            gimbal: self.gimbal.clone(),
            weights: self.weights.clone(),
            initial_state: self.initial_state.clone(),
            time_opt: self.time_opt.clone(),
            keyframes: self.keyframes.as_slice().to_vec(),
            lookat_keyframes: self.lookat_keyframes.clone(),
        };
        toml::to_string(&file).map_err(|e| Error::Parameter(format!("scene serialization: {e}")))
    }
}

fn validate_lookat(lookat: &[LookAtKeyframe]) -> Result<()> {
    if lookat.is_empty() {
        return Err(Error::validation("lookat_keyframes", "must not be empty when present"));
    }
    for (j, k) in lookat.iter().enumerate() {
        if !k.time.is_finite() || k.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("lookat_keyframes[{j}]"), "values must be finite"));
        }
        if j > 0 && !(k.time > lookat[j - 1].time) {
            return Err(Error::validation(
                format!("lookat_keyframes[{j}].time"),
                format!("must be greater than lookat_keyframes[{}].time", j - 1),
            ));
        }
    }
    Ok(())
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let file: SceneFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let scene = SceneSpec {
        quadrotor: file.quadrotor,
        gimbal: file.gimbal,
        dt: file.dt,
        weights: file.weights,
        keyframes: KeyframeList::new(file.keyframes)?,
        lookat_keyframes: file.lookat_keyframes,
        time_opt: file.time_opt,
        initial_state: file.initial_state,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text)
}

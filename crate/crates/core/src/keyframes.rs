use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dynamics::{keyframe_index_map, GimbalParams};
use crate::error::{Error, Result};

/// Timed camera pose: where the quadrotor should be and where the camera
/// should point (world yaw, gimbal pitch) at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub time: f64,
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl Keyframe {
    pub fn new(time: f64, position: [f64; 3], yaw: f64, pitch: f64) -> Self {
        Self {
            time,
            position,
            yaw,
            pitch,
        }
    }
}

/// Ordered keyframes with `t_0 = 0` and strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeList(Vec<Keyframe>);

impl KeyframeList {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.is_empty() {
            return Err(Error::validation("keyframes", "at least one keyframe is required"));
        }
        for (j, kf) in keyframes.iter().enumerate() {
            let finite = kf.time.is_finite()
                && kf.yaw.is_finite()
                && kf.pitch.is_finite()
                && kf.position.iter().all(|p| p.is_finite());
            if !finite {
                return Err(Error::validation(format!("keyframes[{j}]"), "values must be finite"));
            }
        }
        if keyframes[0].time != 0.0 {
            return Err(Error::validation("keyframes[0].time", "first keyframe must be at t = 0"));
        }
        for j in 1..keyframes.len() {
            if !(keyframes[j].time > keyframes[j - 1].time) {
                return Err(Error::validation(
                    format!("keyframes[{j}].time"),
                    format!(
                        "must be greater than keyframes[{}].time = {}",
                        j - 1,
                        keyframes[j - 1].time
                    ),
                ));
            }
        }
        Ok(Self(keyframes))
    }

    /// Additional checks that depend on the gimbal and the grid.
    pub fn validate_for(&self, gimbal: &GimbalParams, dt: f64) -> Result<()> {
        let [lo, hi] = gimbal.pitch_range;
        for (j, kf) in self.0.iter().enumerate() {
            if kf.pitch < lo || kf.pitch > hi {
                return Err(Error::validation(
                    format!("keyframes[{j}].pitch"),
                    format!("{} outside gimbal pitch range [{lo}, {hi}]", kf.pitch),
                ));
            }
        }
        keyframe_index_map(&self.times(), dt)?;
        Ok(())
    }

    pub fn as_slice(&self) -> &[Keyframe] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> &Keyframe {
        self.0.last().expect("keyframe list is never empty")
    }

    pub fn times(&self) -> Vec<f64> {
        self.0.iter().map(|k| k.time).collect()
    }

    /// Same poses at new times; the new times must be valid on their own.
    pub fn with_times(&self, times: &[f64]) -> Result<Self> {
        if times.len() != self.0.len() {
            return Err(Error::Shape {
                what: "keyframe times",
                expected: self.0.len(),
                actual: times.len(),
            });
        }
        let kfs = self
            .0
            .iter()
            .zip(times)
            .map(|(k, &t)| Keyframe { time: t, ..k.clone() })
            .collect();
        Self::new(kfs)
    }

    /// Desired yaws shifted by multiples of 2π so that consecutive values
    /// differ by at most π.
    pub fn unwrapped_yaws(&self) -> Vec<f64> {
        unwrap_angles(self.0.iter().map(|k| k.yaw))
    }
}

impl std::ops::Index<usize> for KeyframeList {
    type Output = Keyframe;

    fn index(&self, index: usize) -> &Keyframe {
        &self.0[index]
    }
}

/// Removes 2π jumps from an angle sequence.
pub fn unwrap_angles(angles: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for a in angles {
        match out.last() {
            None => out.push(a),
            Some(&prev) => out.push(prev + wrap_to_pi(a - prev)),
        }
    }
    out
}

/// Maps an angle into `[-π, π)`.
pub fn wrap_to_pi(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

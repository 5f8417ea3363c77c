//! Smooth tanh-shaped reward components and the three objective
//! compositions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{carried_load, Action};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ObjectiveKind {
    /// Joint throughput under response-time bounds.
    Mo1,
    /// Weighted utility, service 2 prioritized.
    Mo2,
    /// Service 2 throughput with a starvation guard on service 1.
    Mo3,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::Mo1, ObjectiveKind::Mo2, ObjectiveKind::Mo3];

    /// Scenario number used in result tables.
    pub fn scenario(self) -> u32 {
        match self {
            ObjectiveKind::Mo1 => 1,
            ObjectiveKind::Mo2 => 2,
            ObjectiveKind::Mo3 => 3,
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Mo1 => "MO1",
            ObjectiveKind::Mo2 => "MO2",
            ObjectiveKind::Mo3 => "MO3",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MO1" | "1" => Ok(ObjectiveKind::Mo1),
            "MO2" | "2" => Ok(ObjectiveKind::Mo2),
            "MO3" | "3" => Ok(ObjectiveKind::Mo3),
            _ => Err(Error::invalid(format!("unknown objective kind `{s}`"))),
        }
    }
}

impl TryFrom<String> for ObjectiveKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ObjectiveKind> for String {
    fn from(k: ObjectiveKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManagementObjective {
    pub kind: ObjectiveKind,
    #[serde(default = "default_bounds")]
    pub delay_bounds: [f64; 2],
    #[serde(default = "default_weights")]
    pub utility_weights: [f64; 2],
    #[serde(default = "default_l_min")]
    pub starvation_threshold: f64,
    #[serde(default = "default_k_d")]
    pub delay_steepness: f64,
    #[serde(default = "default_k_l")]
    pub load_steepness: f64,
}

fn default_bounds() -> [f64; 2] {
    [0.1, 0.1]
}
fn default_weights() -> [f64; 2] {
    [1.0, 5.0]
}
fn default_l_min() -> f64 {
    5.0
}
fn default_k_d() -> f64 {
    50.0
}
fn default_k_l() -> f64 {
    1.0
}

impl ManagementObjective {
    pub fn new(kind: ObjectiveKind) -> Self {
        ManagementObjective {
            kind,
            delay_bounds: default_bounds(),
            utility_weights: default_weights(),
            starvation_threshold: default_l_min(),
            delay_steepness: default_k_d(),
            load_steepness: default_k_l(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay_bounds.iter().any(|&o| !(o > 0.0)) {
            return Err(Error::invalid("delay bounds must be positive"));
        }
        if self.utility_weights.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::invalid("utility weights must be positive"));
        }
        if !(self.starvation_threshold >= 0.0) {
            return Err(Error::invalid("starvation threshold must be >= 0"));
        }
        if !(self.delay_steepness > 0.0) || !(self.load_steepness > 0.0) {
            return Err(Error::invalid("reward steepness must be positive"));
        }
        Ok(())
    }
}

/// Which side of the threshold is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    PenalizeAbove,
    PenalizeBelow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardShape {
    pub threshold: f64,
    pub steepness: f64,
    pub orientation: Orientation,
}

impl RewardShape {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (self.steepness * (x - self.threshold)).tanh();
        match self.orientation {
            Orientation::PenalizeAbove => 0.5 * (1.0 - z),
            Orientation::PenalizeBelow => 0.5 * (1.0 + z),
        }
    }
}

/// `0.5 (1 - tanh(k (d - O)))`: close to 1 below the bound, 0.5 at it.
pub fn delay_reward(d: f64, bound: f64, k: f64) -> f64 {
    RewardShape {
        threshold: bound,
        steepness: k,
        orientation: Orientation::PenalizeAbove,
    }
    .eval(d)
}

/// `0.5 (1 + tanh(k (lc - l_min)))`: close to 1 above the starvation threshold.
pub fn throughput_reward(lc: f64, l_min: f64, k: f64) -> f64 {
    RewardShape {
        threshold: l_min,
        steepness: k,
        orientation: Orientation::PenalizeBelow,
    }
    .eval(lc)
}

/// Scalar reward of `action` under `objective`, given offered loads and the
/// resulting delays.
pub fn reward(
    objective: &ManagementObjective,
    l1: f64,
    l2: f64,
    action: &Action,
    d1: f64,
    d2: f64,
) -> Result<f64> {
    let lc1 = carried_load(l1, action.b1)?;
    let lc2 = carried_load(l2, action.b2)?;
    Ok(reward_from_carried(objective, lc1, lc2, d1, d2))
}

/// Composition on already-computed carried loads; hot path of the oracle.
pub fn reward_from_carried(objective: &ManagementObjective, lc1: f64, lc2: f64, d1: f64, d2: f64) -> f64 {
    let o = objective;
    let r1 = delay_reward(d1, o.delay_bounds[0], o.delay_steepness);
    let r2 = delay_reward(d2, o.delay_bounds[1], o.delay_steepness);
    match o.kind {
        ObjectiveKind::Mo1 => lc1 * r1 + lc2 * r2,
        ObjectiveKind::Mo2 => o.utility_weights[0] * lc1 * r1 + o.utility_weights[1] * lc2 * r2,
        ObjectiveKind::Mo3 => {
            let r3 = throughput_reward(lc1, o.starvation_threshold, o.load_steepness);
            lc2 * (r3 + r2)
        }
    }
}

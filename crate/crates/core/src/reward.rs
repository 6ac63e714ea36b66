//! Reward schemes: the graded piecewise reward and the single-reward
//! baseline.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Primitive;

pub const DEFAULT_SINGLE_THRESHOLD: f64 = 0.10;

/// Result of one executed primitive. `grasp_success` is set for grasps
/// only, `tau` (pixel-change rate) for pushes only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub primitive: Primitive,
    pub grasp_success: Option<bool>,
    pub tau: Option<f64>,
}

impl Outcome {
    pub fn grasp(success: bool) -> Self {
        Self {
            primitive: Primitive::Grasp,
            grasp_success: Some(success),
            tau: None,
        }
    }

    pub fn push(tau: f64) -> Self {
        Self {
            primitive: Primitive::Push,
            grasp_success: None,
            tau: Some(tau),
        }
    }

    fn checked(&self) -> Result<Checked> {
        match (self.primitive, self.grasp_success, self.tau) {
            (Primitive::Grasp, Some(s), None) => Ok(Checked::Grasp(s)),
            (Primitive::Push, None, Some(t)) if (0.0..=1.0).contains(&t) => Ok(Checked::Push(t)),
            _ => Err(Error::MalformedOutcome(format!("{self:?}"))),
        }
    }
}

enum Checked {
    Grasp(bool),
    Push(f64),
}

/// +1 / -1 for grasp success / failure; pushes earn 0.3, 0.5 or 0.7 for a
/// pixel-change rate in [0.10, 0.24), [0.24, 0.40) or [0.40, 1], and -0.1
/// below 0.10.
pub fn piecewise_reward(outcome: &Outcome) -> Result<f64> {
    Ok(match outcome.checked()? {
        Checked::Grasp(true) => 1.0,
        Checked::Grasp(false) => -1.0,
        Checked::Push(t) if t >= 0.40 => 0.7,
        Checked::Push(t) if t >= 0.24 => 0.5,
        Checked::Push(t) if t >= 0.10 => 0.3,
        Checked::Push(_) => -0.1,
    })
}

/// 1 for a successful grasp, 0.5 for a push changing more than
/// `threshold`, otherwise 0.
pub fn single_reward(outcome: &Outcome, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("single-reward threshold {threshold} outside (0, 1)")));
    }
    Ok(match outcome.checked()? {
        Checked::Grasp(true) => 1.0,
        Checked::Grasp(false) => 0.0,
        Checked::Push(t) if t > threshold => 0.5,
        Checked::Push(_) => 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardScheme {
    Piecewise,
    Single,
}

impl RewardScheme {
    pub fn reward(self, outcome: &Outcome) -> Result<f64> {
        match self {
            RewardScheme::Piecewise => piecewise_reward(outcome),
            RewardScheme::Single => single_reward(outcome, DEFAULT_SINGLE_THRESHOLD),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardScheme::Piecewise => "piecewise",
            RewardScheme::Single => "single",
        }
    }
}

impl FromStr for RewardScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise" => Ok(RewardScheme::Piecewise),
            "single" => Ok(RewardScheme::Single),
            _ => Err(Error::Config(format!("unknown reward scheme `{s}`"))),
        }
    }
}

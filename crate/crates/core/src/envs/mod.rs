//! Desk-scale continuous-control tasks behind one episodic interface.

mod pendulum;
mod pointmass;

use std::fmt;
use std::str::FromStr;

pub use pendulum::Pendulum;
pub use pointmass::PointMass;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.state_dim > 0
            && self.action_dim > 0
            && self.max_episode_steps > 0
            && self.action_low.len() == self.action_dim
            && self.action_high.len() == self.action_dim
            && self
                .action_low
                .iter()
                .zip(&self.action_high)
                .all(|(l, h)| l.is_finite() && h.is_finite() && l < h);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid environment spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The task reached a terminal state; no bootstrapping past it.
    pub done: bool,
    /// The episode hit its step limit.
    pub truncated: bool,
}

pub trait Env: Send {
    fn spec(&self) -> EnvSpec;

    /// Start a new episode; the initial state is a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advance one step. Out-of-bounds actions are clamped and counted.
    fn step(&mut self, action: &[f64]) -> StepResult;

    /// Number of actions clamped since construction.
    fn clamped_actions(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
        }
    }

    pub fn make(self) -> Box<dyn Env> {
        match self {
            EnvKind::Pendulum => Box::new(Pendulum::new()),
            EnvKind::PointMass => Box::new(PointMass::new()),
        }
    }

    pub fn spec(self) -> EnvSpec {
        self.make().spec()
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" | "point-mass" => Ok(EnvKind::PointMass),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

/// Clamp `action` into `[low, high]`; returns whether anything changed.
pub(crate) fn clamp_action(action: &[f64], low: &[f64], high: &[f64]) -> (Vec<f64>, bool) {
    let mut clamped = false;
    let out = action
        .iter()
        .zip(low.iter().zip(high))
        .map(|(&a, (&l, &h))| {
            // NaN maps to the lower bound rather than propagating.
            let c = if a.is_nan() { l } else { a.clamp(l, h) };
            clamped |= c != a;
            c
        })
        .collect();
    (out, clamped)
}

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Env, EnvSpec, StepResult};

/// Torque-limited pendulum swing-up.
///
/// `θ = 0` is upright. Dynamics `θ̈ = (3g/2l)·sin θ + (3/ml²)·u` with
/// g = 10, m = 1, l = 1, integrated by semi-implicit Euler at dt = 0.05;
/// velocity clamped to ±8, angle wrapped to `[−π, π)`. The per-step reward is
/// `−(θ² + 0.1·θ̇² + 0.001·u²)` on the pre-step state and the applied torque.
/// Observation `[cos θ, sin θ, θ̇]`. Resets draw `θ ∈ [−π, π]`, `θ̇ ∈ [−1, 1]`.
/// Episodes never terminate, only truncate after 200 steps.
#[derive(Debug, Clone)]
pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    elapsed: usize,
    clamped: u64,
}

impl Pendulum {
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_STEPS: usize = 200;
    pub const GRAVITY: f64 = 10.0;
    pub const MAX_SPEED: f64 = 8.0;
    const MASS: f64 = 1.0;
    const LENGTH: f64 = 1.0;

    pub fn new() -> Self {
        Self {
            theta: 0.0,
            theta_dot: 0.0,
            elapsed: 0,
            clamped: 0,
        }
    }

    /// Place the pendulum at an exact physical state.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.elapsed = 0;
    }

    pub fn physical_state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
        -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Env for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            action_low: vec![-Self::MAX_TORQUE],
            action_high: vec![Self::MAX_TORQUE],
            max_episode_steps: Self::MAX_STEPS,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.random_range(-PI..=PI);
        let theta_dot = rng.random_range(-1.0..=1.0);
        self.set_state(theta, theta_dot);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let (a, clamped) = clamp_action(action, &[-Self::MAX_TORQUE], &[Self::MAX_TORQUE]);
        self.clamped += u64::from(clamped);
        let u = a[0];
        let reward = Self::reward(wrap_angle(self.theta), self.theta_dot, u);

        let (g, m, l) = (Self::GRAVITY, Self::MASS, Self::LENGTH);
        let accel = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 / (m * l * l) * u;
        self.theta_dot = (self.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.theta_dot * Self::DT);
        self.elapsed += 1;

        StepResult {
            next_state: self.observe(),
            reward,
            done: false,
            truncated: self.elapsed >= Self::MAX_STEPS,
        }
    }

    fn clamped_actions(&self) -> u64 {
        self.clamped
    }
}

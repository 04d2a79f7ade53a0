use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Env, EnvSpec, StepResult};

/// Planar double integrator that must reach the origin.
///
/// State `[x, y, vx, vy]`, action = acceleration in `[−1, 1]²`. Semi-implicit
/// Euler at dt = 0.1 with velocity clamped to ±1 per axis. Reward
/// `−‖p′‖² − 0.01‖u‖²` on the post-step position. The episode terminates once
/// `‖p′‖ ≤ 0.05` and truncates after 100 steps. Resets place the mass
/// uniformly in `[−1, 1]²` at rest.
#[derive(Debug, Clone, Default)]
pub struct PointMass {
    pos: [f64; 2],
    vel: [f64; 2],
    elapsed: usize,
    clamped: u64,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const GOAL_RADIUS: f64 = 0.05;
    pub const MAX_SPEED: f64 = 1.0;
    pub const MAX_STEPS: usize = 100;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.elapsed = 0;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Env for PointMass {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 4,
            action_dim: 2,
            action_low: vec![-1.0; 2],
            action_high: vec![1.0; 2],
            max_episode_steps: Self::MAX_STEPS,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        self.set_state(pos, [0.0, 0.0]);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let (u, clamped) = clamp_action(action, &[-1.0; 2], &[1.0; 2]);
        self.clamped += u64::from(clamped);
        for i in 0..2 {
            self.vel[i] = (self.vel[i] + u[i] * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            self.pos[i] += self.vel[i] * Self::DT;
        }
        self.elapsed += 1;
        let dist2 = self.pos[0].powi(2) + self.pos[1].powi(2);
        let reward = -dist2 - 0.01 * (u[0] * u[0] + u[1] * u[1]);
        StepResult {
            next_state: self.observe(),
            reward,
            done: dist2.sqrt() <= Self::GOAL_RADIUS,
            truncated: self.elapsed >= Self::MAX_STEPS,
        }
    }

    fn clamped_actions(&self) -> u64 {
        self.clamped
    }
}

//! The outer training loop: act, store, update, and evaluate periodically.
//!
//! A run draws from separate streams of its seed (see
//! [`seed_stream`](crate::agent::seed_stream)): network initialization,
//! updates, exploration, environment resets and evaluation. Evaluation has its
//! own stream and environment instance, so it never perturbs training.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{seed_stream, Agent, AgentConfig, Diagnostics};
use crate::envs::{Env, EnvKind};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};

const ACT_STREAM: u64 = 2;
const RESET_STREAM: u64 = 3;
/// Stream of a run's seed that drives evaluation resets.
pub const EVAL_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub total_env_steps: usize,
    pub eval_interval: usize,
    pub eval_rollouts: usize,
    /// Uniform-random actions and no updates for this many steps.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub agent: AgentConfig,
    /// Fill [`EvalRow::wall_seconds`]. Off by default so output is
    /// reproducible byte for byte.
    pub record_wall_time: bool,
    /// Stop after the first evaluation whose mean return reaches this.
    pub stop_at_return: Option<f64>,
}

impl TrainConfig {
    pub fn new(env: EnvKind, agent: AgentConfig) -> Self {
        Self {
            env,
            seed: 0,
            total_env_steps: 50_000,
            eval_interval: 1000,
            eval_rollouts: 10,
            warmup_steps: 1000,
            buffer_capacity: 1_000_000,
            agent,
            record_wall_time: false,
            stop_at_return: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 {
            return Err(Error::InvalidConfig("eval_interval must be >= 1".into()));
        }
        if self.eval_rollouts == 0 {
            return Err(Error::InvalidConfig("eval_rollouts must be >= 1".into()));
        }
        if self.buffer_capacity < self.agent.batch_size {
            return Err(Error::InvalidConfig(format!(
                "buffer capacity {} is smaller than the batch size {}",
                self.buffer_capacity, self.agent.batch_size
            )));
        }
        self.agent.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    /// Population standard deviation; 0 for a single rollout.
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalSummary {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

/// Undiscounted, unscaled returns of deterministic (mean-action) rollouts.
/// Each rollout resets a fresh environment with a seed drawn from `rng`.
pub fn evaluate<R: Rng + ?Sized>(agent: &Agent, env: EnvKind, rollouts: usize, rng: &mut R) -> Result<EvalSummary> {
    if env.spec() != *agent.spec() {
        return Err(Error::InvalidConfig(format!("agent was not built for the {env} environment")));
    }
    let mut returns = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let mut e = env.make();
        let mut state = e.reset(rng.random());
        let mut total = 0.0;
        loop {
            let action = agent.act_deterministic(&state)?;
            let step = e.step(&action);
            total += step.reward;
            state = step.next_state;
            if step.done || step.truncated {
                break;
            }
        }
        returns.push(total);
    }
    Ok(EvalSummary::from_returns(returns))
}

/// Mean loss values over the updates since the previous row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMeans {
    pub v_loss: f64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub pi_mu_loss: f64,
    pub pi_sigma_loss: Option<f64>,
    pub cem_policy_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub env_step: usize,
    pub eval: EvalSummary,
    /// `None` when no update ran since the previous row.
    pub losses: Option<LossMeans>,
    pub wall_seconds: Option<f64>,
}

#[derive(Default)]
struct LossAccumulator {
    n: usize,
    sums: [f64; 6],
    sigma: bool,
    cem: bool,
}

impl LossAccumulator {
    fn add(&mut self, d: &Diagnostics) {
        self.n += 1;
        let vals = [
            d.v_loss,
            d.q1_loss,
            d.q2_loss,
            d.pi_mu_loss,
            d.pi_sigma_loss.unwrap_or(0.0),
            d.cem_policy_error.unwrap_or(0.0),
        ];
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
        self.sigma |= d.pi_sigma_loss.is_some();
        self.cem |= d.cem_policy_error.is_some();
    }

    fn take(&mut self) -> Option<LossMeans> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let m = self.sums.map(|s| s / n);
        let out = LossMeans {
            v_loss: m[0],
            q1_loss: m[1],
            q2_loss: m[2],
            pi_mu_loss: m[3],
            pi_sigma_loss: self.sigma.then_some(m[4]),
            cem_policy_error: self.cem.then_some(m[5]),
        };
        *self = Self::default();
        Some(out)
    }
}

pub struct Trainer {
    config: TrainConfig,
    agent: Agent,
    env: Box<dyn Env>,
    buffer: ReplayBuffer,
    act_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    state: Vec<f64>,
    env_steps: usize,
    losses: LossAccumulator,
}

pub struct RunOutcome {
    pub rows: Vec<EvalRow>,
    /// Set when `stop_at_return` ended the run early.
    pub stopped_early: bool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let agent = Agent::new(config.agent.clone(), config.env.spec(), config.seed)?;
        Self::with_agent(config, agent)
    }

    /// Train an existing agent (for example one loaded from a checkpoint).
    pub fn with_agent(config: TrainConfig, agent: Agent) -> Result<Self> {
        config.validate()?;
        let mut env = config.env.make();
        if env.spec() != *agent.spec() {
            return Err(Error::InvalidConfig(format!("agent was not built for the {} environment", config.env)));
        }
        let mut reset_rng = seed_stream(config.seed, RESET_STREAM);
        let state = env.reset(reset_rng.random());
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            act_rng: seed_stream(config.seed, ACT_STREAM),
            eval_rng: seed_stream(config.seed, EVAL_STREAM),
            reset_rng,
            agent,
            env,
            state,
            env_steps: 0,
            losses: LossAccumulator::default(),
            config,
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One environment step followed by at most one update.
    pub fn step(&mut self) -> Result<Option<Diagnostics>> {
        let spec = self.agent.spec();
        let action = if self.env_steps < self.config.warmup_steps {
            spec.action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&l, &h)| self.act_rng.random_range(l..h))
                .collect()
        } else {
            self.agent.act(&self.state, &mut self.act_rng)?
        };
        let step = self.env.step(&action);
        if !step.reward.is_finite() {
            return Err(Error::NonFinite("environment reward".into()));
        }
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: step.reward * self.config.agent.reward_scale,
            next_state: step.next_state.clone(),
            done: step.done,
        });
        self.state = if step.done || step.truncated {
            self.env.reset(self.reset_rng.random())
        } else {
            step.next_state
        };
        self.env_steps += 1;

        if self.env_steps > self.config.warmup_steps && self.buffer.len() >= self.config.agent.batch_size {
            let d = self.agent.update_step(&self.buffer)?;
            self.losses.add(&d);
            Ok(Some(d))
        } else {
            Ok(None)
        }
    }

    pub fn evaluate(&mut self) -> Result<EvalSummary> {
        evaluate(&self.agent, self.config.env, self.config.eval_rollouts, &mut self.eval_rng)
    }

    /// Train to `total_env_steps`, evaluating after every `eval_interval`
    /// steps and after the last step. `on_row` sees each row as it is
    /// produced, so rows written before a failure are kept.
    pub fn run<F>(&mut self, mut on_row: F) -> Result<RunOutcome>
    where
        F: FnMut(&EvalRow) -> Result<()>,
    {
        let start = Instant::now();
        let total = self.config.total_env_steps;
        let mut rows = Vec::new();
        while self.env_steps < total {
            self.step()?;
            if self.env_steps % self.config.eval_interval == 0 || self.env_steps == total {
                let eval = self.evaluate()?;
                let row = EvalRow {
                    env_step: self.env_steps,
                    eval,
                    losses: self.losses.take(),
                    wall_seconds: self.config.record_wall_time.then(|| start.elapsed().as_secs_f64()),
                };
                on_row(&row)?;
                let reached = self.config.stop_at_return.is_some_and(|t| row.eval.mean >= t);
                rows.push(row);
                if reached {
                    return Ok(RunOutcome {
                        rows,
                        stopped_early: true,
                    });
                }
            }
        }
        Ok(RunOutcome {
            rows,
            stopped_early: false,
        })
    }
}

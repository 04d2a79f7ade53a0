//! Soft actor-critic agents: SAC, SAC-DPN and SAC-CEPO.
//!
//! All three share the twin Q critics, the soft V network with its Polyak
//! target, and reward scaling at buffer insertion. They differ only in how
//! the policy is updated:
//!
//! | algo       | policy      | mean update                    | deviation update |
//! |------------|-------------|--------------------------------|------------------|
//! | `sac`      | one network | reparameterized soft loss      | (same step)      |
//! | `sac-dpn`  | two nets    | reparameterized, mean only     | then deviation   |
//! | `sac-cepo` | two nets    | imitate CEM target `μ*`        | then deviation   |

pub mod cepo;
mod checkpoint;
pub mod critic;
pub mod losses;
pub mod policy;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cem::CemConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, MlpNet};
use crate::replay::{Batch, ReplayBuffer};
use critic::CriticEnsemble;
use policy::{standard_normal, PolicyMode, PolicyNets, SquashedGaussianPolicy};

pub use cepo::{cem_target_objective, cepo_mu_star, CepoTarget};
pub use critic::{SoftCritic, TwinCritic};
pub use losses::LossGrad;
pub use policy::PolicyPart;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Sac,
    SacDpn,
    SacCepo,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Sac, Algo::SacDpn, Algo::SacCepo];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Sac => "sac",
            Algo::SacDpn => "sac-dpn",
            Algo::SacCepo => "sac-cepo",
        }
    }

    pub fn policy_mode(self) -> PolicyMode {
        match self {
            Algo::Sac => PolicyMode::Coupled,
            Algo::SacDpn | Algo::SacCepo => PolicyMode::Decoupled,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algo `{s}` (expected sac, sac-dpn or sac-cepo)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algo: Algo,
    /// Hidden layer widths, shared by every network.
    pub hidden: Vec<usize>,
    /// `γ`
    pub gamma: f64,
    /// `α`
    pub alpha: f64,
    /// Multiplies rewards before they enter the buffer.
    pub reward_scale: f64,
    /// `τ`
    pub tau: f64,
    pub lr_v: f64,
    pub lr_q: f64,
    pub lr_pi_mu: f64,
    pub lr_pi_sigma: f64,
    pub batch_size: usize,
    pub cem: CemConfig,
    /// `ε` rows per state in the CEM target objective.
    pub cem_noise_samples: usize,
}

impl AgentConfig {
    /// Full-size settings: two 256-unit layers, batch 256, lr 3e-4, γ 0.99,
    /// τ 0.005, reward scale 5 and the default CEM column.
    pub fn paper(algo: Algo) -> Self {
        Self {
            algo,
            hidden: vec![256, 256],
            gamma: 0.99,
            alpha: 1.0,
            reward_scale: 5.0,
            tau: 0.005,
            lr_v: 3e-4,
            lr_q: 3e-4,
            lr_pi_mu: 3e-4,
            lr_pi_sigma: 3e-4,
            batch_size: 256,
            cem: CemConfig::default(),
            cem_noise_samples: 1,
        }
    }

    /// Small networks and a cheaper CEM for single-core runs.
    pub fn desk(algo: Algo) -> Self {
        Self {
            hidden: vec![64, 64],
            batch_size: 64,
            lr_v: 1e-3,
            lr_q: 1e-3,
            lr_pi_mu: 1e-3,
            lr_pi_sigma: 1e-3,
            cem: CemConfig {
                sample_count: 40,
                elite_density: 0.1,
                iterations: 4,
                ..CemConfig::default()
            },
            ..Self::paper(algo)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        for (name, lr) in [
            ("lr_v", self.lr_v),
            ("lr_q", self.lr_q),
            ("lr_pi_mu", self.lr_pi_mu),
            ("lr_pi_sigma", self.lr_pi_sigma),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive".into());
        }
        if self.cem_noise_samples == 0 {
            return bad("cem.noise_samples must be positive".into());
        }
        self.cem.validate()
    }
}

/// Loss values from one update step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub v_loss: f64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    /// Coupled policy loss for `sac`, mean loss for `sac-dpn`, imitation
    /// loss for `sac-cepo`.
    pub pi_mu_loss: f64,
    /// Deviation loss; absent for the coupled policy.
    pub pi_sigma_loss: Option<f64>,
    /// Mean `‖μ(s) − μ*(s)‖` over the batch; `sac-cepo` only.
    pub cem_policy_error: Option<f64>,
}

/// `ChaCha8Rng` seeded from `seed` on its own stream. Every consumer of a
/// run's randomness (initialization, updates, acting, evaluation, env
/// resets) takes a distinct stream.
pub fn seed_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const UPDATE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Optimizers {
    q1: AdamState,
    q2: AdamState,
    v: AdamState,
    /// Whole coupled policy, or the mean network.
    pi_mu: AdamState,
    pi_sigma: Option<AdamState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    config: AgentConfig,
    spec: EnvSpec,
    policy: SquashedGaussianPolicy,
    critics: CriticEnsemble,
    opt: Optimizers,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Agent {
    /// Fresh networks: critics first (q1, q2, v), then the policy, all from
    /// the initialization stream of `seed`.
    pub fn new(config: AgentConfig, spec: EnvSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let mut init = seed_stream(seed, INIT_STREAM);
        let critics = CriticEnsemble::new(spec.state_dim, spec.action_dim, &config.hidden, &mut init)?;
        let policy = SquashedGaussianPolicy::new(
            config.algo.policy_mode(),
            spec.state_dim,
            &config.hidden,
            spec.action_low.clone(),
            spec.action_high.clone(),
            &mut init,
        )?;
        Self::from_parts(config, spec, policy, critics, seed_stream(seed, UPDATE_STREAM))
    }

    /// Assemble an agent around existing networks with fresh optimizer state.
    pub fn from_parts(
        config: AgentConfig,
        spec: EnvSpec,
        policy: SquashedGaussianPolicy,
        critics: CriticEnsemble,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if policy.mode() != config.algo.policy_mode() {
            return Err(Error::InvalidConfig(format!(
                "{} needs a {:?} policy",
                config.algo,
                config.algo.policy_mode()
            )));
        }
        if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
            return Err(Error::DimensionMismatch {
                context: "policy vs environment",
                expected: spec.state_dim,
                got: policy.state_dim(),
            });
        }
        let opt = Optimizers::new(&config, &policy, &critics);
        Ok(Self {
            config,
            spec,
            policy,
            critics,
            opt,
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn policy(&self) -> &SquashedGaussianPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut SquashedGaussianPolicy {
        &mut self.policy
    }

    pub fn critics(&self) -> &CriticEnsemble {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut CriticEnsemble {
        &mut self.critics
    }

    /// The stream used for minibatch sampling and update noise.
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Number of completed update steps.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Stochastic action in environment units, drawing from `rng`.
    pub fn act<R: rand::Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.policy.policy_sample(state, rng)?.0)
    }

    /// Mean action, used for evaluation.
    pub fn act_deterministic(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.policy.mean_action(state)
    }

    /// Sample a minibatch and run one update. On error the agent, including
    /// its random stream, is left exactly as it was.
    pub fn update_step(&mut self, buffer: &ReplayBuffer) -> Result<Diagnostics> {
        if buffer.len() < self.config.batch_size {
            return Err(Error::InvalidConfig(format!(
                "buffer holds {} transitions, batch needs {}",
                buffer.len(),
                self.config.batch_size
            )));
        }
        let snapshot = self.clone();
        let result = buffer
            .sample_batch(self.config.batch_size, &mut self.rng)
            .and_then(|batch| self.apply(&batch));
        if result.is_err() {
            *self = snapshot;
        }
        result
    }

    /// One update on a given batch, atomic like [`Agent::update_step`].
    pub fn update_on_batch(&mut self, batch: &Batch) -> Result<Diagnostics> {
        let snapshot = self.clone();
        let result = self.apply(batch);
        if result.is_err() {
            *self = snapshot;
        }
        result
    }

    /// V, then Q1 and Q2, then the policy, then the Polyak step.
    fn apply(&mut self, batch: &Batch) -> Result<Diagnostics> {
        let cfg = &self.config;
        let alpha = cfg.alpha;
        let a = self.spec.action_dim;
        let b = batch.len();

        let noise = standard_normal((b, a), &mut self.rng);
        let v = losses::v_loss(batch, &self.critics.v, &self.critics.twin, &self.policy, alpha, &noise)?;
        adam_step(self.critics.v.params_mut(), &v.grads, &mut self.opt.v)?;

        let [q1, q2] = losses::q_loss(batch, &self.critics.twin, &self.critics.v_target, cfg.gamma)?;
        adam_step(self.critics.twin.q1.params_mut(), &q1.grads, &mut self.opt.q1)?;
        adam_step(self.critics.twin.q2.params_mut(), &q2.grads, &mut self.opt.q2)?;

        let mut cem_policy_error = None;
        let pi_mu = match cfg.algo {
            Algo::Sac | Algo::SacDpn => {
                let noise = standard_normal((b, a), &mut self.rng);
                losses::pi_mu_loss(batch, &self.critics.twin, &self.policy, alpha, &noise)?
            }
            Algo::SacCepo => {
                let target = cepo_mu_star(
                    &batch.states,
                    &self.policy,
                    &self.critics.twin,
                    alpha,
                    &cfg.cem,
                    cfg.cem_noise_samples,
                    &mut self.rng,
                )?;
                cem_policy_error = Some(target.policy_error());
                losses::imitation_loss(&batch.states, &target.mu_star, mean_net(&self.policy))?
            }
        };
        adam_step(mean_net_mut(&mut self.policy).params_mut(), &pi_mu.grads, &mut self.opt.pi_mu)?;

        let pi_sigma_loss = match self.opt.pi_sigma.as_mut() {
            Some(opt) => {
                let noise = standard_normal((b, a), &mut self.rng);
                let l = losses::pi_sigma_loss(batch, &self.critics.twin, &self.policy, alpha, &noise)?;
                let PolicyNets::Decoupled { dev, .. } = self.policy.nets_mut() else {
                    unreachable!("deviation optimizer implies a decoupled policy")
                };
                adam_step(dev.params_mut(), &l.grads, opt)?;
                Some(l.value)
            }
            None => None,
        };

        self.critics.polyak_update(self.config.tau);
        self.updates += 1;
        Ok(Diagnostics {
            v_loss: v.value,
            q1_loss: q1.value,
            q2_loss: q2.value,
            pi_mu_loss: pi_mu.value,
            pi_sigma_loss,
            cem_policy_error,
        })
    }
}

fn mean_net(policy: &SquashedGaussianPolicy) -> &MlpNet {
    match policy.nets() {
        PolicyNets::Coupled(n) => n,
        PolicyNets::Decoupled { mean, .. } => mean,
    }
}

fn mean_net_mut(policy: &mut SquashedGaussianPolicy) -> &mut MlpNet {
    match policy.nets_mut() {
        PolicyNets::Coupled(n) => n,
        PolicyNets::Decoupled { mean, .. } => mean,
    }
}

impl Optimizers {
    fn new(config: &AgentConfig, policy: &SquashedGaussianPolicy, critics: &CriticEnsemble) -> Self {
        let (pi_mu, pi_sigma) = match policy.nets() {
            PolicyNets::Coupled(n) => (AdamState::new(n.params(), config.lr_pi_mu), None),
            PolicyNets::Decoupled { mean, dev } => (
                AdamState::new(mean.params(), config.lr_pi_mu),
                Some(AdamState::new(dev.params(), config.lr_pi_sigma)),
            ),
        };
        Self {
            q1: AdamState::new(critics.twin.q1.params(), config.lr_q),
            q2: AdamState::new(critics.twin.q2.params(), config.lr_q),
            v: AdamState::new(critics.v.params(), config.lr_v),
            pi_mu,
            pi_sigma,
        }
    }
}

#[cfg(test)]
mod tests;

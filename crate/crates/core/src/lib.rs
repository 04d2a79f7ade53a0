//! Maximum-entropy actor-critic agents and the oracles that check them.
//!
//! Three agents share one replay/critic stack:
//!
//! - [`Algo::Sac`]: a single Gaussian policy network trained with the
//!   reparameterized soft policy loss.
//! - [`Algo::SacDpn`]: the policy is split into a mean network and a
//!   deviation network, updated one after the other.
//! - [`Algo::SacCepo`]: like `SacDpn`, but the mean network imitates a
//!   per-state target mean found by the cross-entropy method.
//!
//! The [`oracle`] module holds brute-force checks that are independent of the
//! training path: finite-difference gradients, exact tabular soft policy
//! evaluation, the sequential sub-policy improvement property, and a grid
//! search used to validate CEM.

pub mod agent;
pub mod cem;
pub mod envs;
mod error;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod train;

pub use agent::{seed_stream, Agent, AgentConfig, Algo, Diagnostics};
pub use cem::{CemConfig, CemResult};
pub use envs::{Env, EnvKind, EnvSpec, StepResult};
pub use error::{Error, Result};
pub use nn::{AdamState, MlpNet};
pub use replay::{ReplayBuffer, Transition};
pub use train::{evaluate, EvalRow, EvalSummary, LossMeans, RunOutcome, TrainConfig, Trainer};

//! Loss values and exact parameter gradients for every network update.
//!
//! Each function takes its noise explicitly (standard normal, `B×A`), which
//! keeps the losses deterministic so they can be checked against finite
//! differences. The agent draws the noise from its own stream.

use ndarray::Array2;

use super::critic::{state_action, SoftCritic, TwinCritic};
use super::policy::{PolicyMode, PolicyPart, SquashedGaussianPolicy};
use crate::error::{Error, Result};
use crate::nn::{MlpNet, Tape};
use crate::replay::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// In the parameter order of the network being trained.
    pub grads: Vec<Array2<f64>>,
}

fn check_batch(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        Err(Error::InvalidConfig("loss computed on an empty batch".into()))
    } else {
        Ok(())
    }
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} value")))
    }
}

/// `mean ½(V_ψ(s) − [min Q(s, ã) − α log π(ã|s)])²` with `ã` freshly sampled
/// from the current policy; the bracket is a constant.
pub fn v_loss<C: SoftCritic + ?Sized>(
    batch: &Batch,
    v: &MlpNet,
    critic: &C,
    policy: &SquashedGaussianPolicy,
    alpha: f64,
    noise: &Array2<f64>,
) -> Result<LossGrad> {
    check_batch(batch)?;
    let (actions, logp) = policy.sample_with_noise(batch.states.view(), noise)?;
    let q = critic.min_q(batch.states.view(), actions.view())?;
    let target = q - logp * alpha;
    value_regression(v, &batch.states, target, "V loss")
}

/// `½·mean (net(x) − target)²` over a `B×1` target.
fn value_regression(net: &MlpNet, inputs: &Array2<f64>, target: Array2<f64>, name: &str) -> Result<LossGrad> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let x = tape.constant(inputs.clone());
    let t = tape.constant(target);
    let out = bound.forward(&mut tape, x);
    let diff = tape.sub(out, t);
    let sq = tape.square(diff);
    let m = tape.mean(sq);
    let loss = tape.scale(m, 0.5);
    let value = finite(name, tape.scalar(loss))?;
    let g = tape.backward(loss);
    Ok(LossGrad {
        value,
        grads: bound.grads(&tape, &g),
    })
}

/// Soft Bellman targets `r + γ(1 − done)·V_ψ′(s′)`.
pub fn q_targets(batch: &Batch, v_target: &MlpNet, gamma: f64) -> Result<Array2<f64>> {
    let v_next = v_target.forward_batch(batch.next_states.view())?;
    Ok(&batch.rewards + &(v_next * batch.dones.mapv(|d| gamma * (1.0 - d))))
}

/// `mean ½(Q_θ(s, a) − y)²` for one critic.
pub fn q_loss_single(batch: &Batch, q: &MlpNet, v_target: &MlpNet, gamma: f64) -> Result<LossGrad> {
    check_batch(batch)?;
    let y = q_targets(batch, v_target, gamma)?;
    value_regression(q, &state_action(batch.states.view(), batch.actions.view()), y, "Q loss")
}

/// Losses and gradients for both critics, each against the same targets.
pub fn q_loss(batch: &Batch, twin: &TwinCritic, v_target: &MlpNet, gamma: f64) -> Result<[LossGrad; 2]> {
    Ok([
        q_loss_single(batch, &twin.q1, v_target, gamma)?,
        q_loss_single(batch, &twin.q2, v_target, gamma)?,
    ])
}

/// `mean α log π(f(ε; s)|s) − min Q(s, f(ε; s))`, differentiated with
/// respect to `part` of the policy. Critic parameters are frozen.
pub fn policy_objective<C: SoftCritic + ?Sized>(
    batch: &Batch,
    critic: &C,
    policy: &SquashedGaussianPolicy,
    alpha: f64,
    noise: &Array2<f64>,
    part: PolicyPart,
) -> Result<LossGrad> {
    check_batch(batch)?;
    let mut tape = Tape::new();
    let s = tape.constant(batch.states.clone());
    let (bound, mu, ls) = policy.heads_on_tape(&mut tape, s, part);
    let (action, logp) = policy.sample_on_tape(&mut tape, mu, ls, noise);
    let q = critic.min_q_on_tape(&mut tape, s, action);
    let ent = tape.scale(logp, alpha);
    let per = tape.sub(ent, q);
    let loss = tape.mean(per);
    let value = finite("policy loss", tape.scalar(loss))?;
    let g = tape.backward(loss);
    let grads = match part {
        PolicyPart::Deviation => bound.dev().grads(&tape, &g),
        _ => bound.mean().grads(&tape, &g),
    };
    Ok(LossGrad { value, grads })
}

/// Policy loss for the mean parameters. For a coupled policy this is the
/// ordinary reparameterized loss over every policy parameter.
pub fn pi_mu_loss<C: SoftCritic + ?Sized>(
    batch: &Batch,
    critic: &C,
    policy: &SquashedGaussianPolicy,
    alpha: f64,
    noise: &Array2<f64>,
) -> Result<LossGrad> {
    let part = match policy.mode() {
        PolicyMode::Coupled => PolicyPart::All,
        PolicyMode::Decoupled => PolicyPart::Mean,
    };
    policy_objective(batch, critic, policy, alpha, noise, part)
}

/// Same objective, differentiated only with respect to the deviation
/// network. Call after the mean network has been updated for this step.
pub fn pi_sigma_loss<C: SoftCritic + ?Sized>(
    batch: &Batch,
    critic: &C,
    policy: &SquashedGaussianPolicy,
    alpha: f64,
    noise: &Array2<f64>,
) -> Result<LossGrad> {
    if policy.mode() != PolicyMode::Decoupled {
        return Err(Error::InvalidConfig("deviation loss needs a decoupled policy".into()));
    }
    policy_objective(batch, critic, policy, alpha, noise, PolicyPart::Deviation)
}

/// `mean_s ½‖μ_φ(s) − μ*(s)‖²` with `μ*` constant.
pub fn imitation_loss(states: &Array2<f64>, mu_star: &Array2<f64>, mean_net: &MlpNet) -> Result<LossGrad> {
    if states.nrows() == 0 {
        return Err(Error::InvalidConfig("imitation loss on an empty batch".into()));
    }
    if mu_star.dim() != (states.nrows(), mean_net.output_dim()) {
        return Err(Error::DimensionMismatch {
            context: "imitation target shape",
            expected: states.nrows() * mean_net.output_dim(),
            got: mu_star.len(),
        });
    }
    let mut tape = Tape::new();
    let bound = mean_net.bind(&mut tape, true);
    let x = tape.constant(states.clone());
    let t = tape.constant(mu_star.clone());
    let out = bound.forward(&mut tape, x);
    let diff = tape.sub(out, t);
    let sq = tape.square(diff);
    let per_state = tape.sum_cols(sq);
    let m = tape.mean(per_state);
    let loss = tape.scale(m, 0.5);
    let value = finite("imitation loss", tape.scalar(loss))?;
    let g = tape.backward(loss);
    Ok(LossGrad {
        value,
        grads: bound.grads(&tape, &g),
    })
}

//! Exact soft policy evaluation and sub-policy improvement on finite MDPs
//! whose actions are a uniform grid on `[−1, 1]`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftMdp {
    pub n_states: usize,
    /// Action grid, ascending.
    pub actions: Vec<f64>,
    /// `p[s][a][s′]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `r[s][a][s′]`
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub alpha: f64,
}

/// `n` evenly spaced points covering `[−1, 1]`.
pub fn action_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

impl TabularSoftMdp {
    /// Random transition rows (normalized uniform weights) and rewards
    /// uniform in `[−1, 1]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, alpha: f64, rng: &mut R) -> Self {
        let mut transitions = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        let mut rewards = transitions.clone();
        for s in 0..n_states {
            for a in 0..n_actions {
                let w: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = w.iter().sum();
                for (t, x) in w.iter().enumerate() {
                    transitions[s][a][t] = x / total;
                    rewards[s][a][t] = rng.random_range(-1.0..1.0);
                }
            }
        }
        Self {
            n_states,
            actions: action_grid(n_actions),
            transitions,
            rewards,
            gamma,
            alpha,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_states == 0 || self.actions.is_empty() {
            return bad("tabular MDP needs at least one state and one action");
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("tabular MDP needs 0 <= gamma < 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("tabular MDP needs a finite alpha >= 0");
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions() {
                let row = &self.transitions[s][a];
                if row.len() != self.n_states || row.iter().any(|&p| !(p >= 0.0)) {
                    return bad("transition rows must be non-negative with one entry per state");
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("transition rows must sum to 1");
                }
                if self.rewards[s][a].iter().any(|r| !r.is_finite()) {
                    return bad("rewards must be finite");
                }
            }
        }
        Ok(())
    }

    /// Expected immediate reward and successor distribution per `(s, a)`.
    fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transitions[s][a]
            .iter()
            .zip(&self.rewards[s][a])
            .map(|(p, r)| p * r)
            .sum()
    }
}

/// Per-state Gaussian `(μ, σ)` restricted to the action grid and
/// renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedGaussianPolicy {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Log-masses of a grid-restricted Gaussian, normalized by log-sum-exp.
pub fn grid_gaussian_log_probs(grid: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    let logits: Vec<f64> = grid.iter().map(|a| -0.5 * ((a - mu) / sigma).powi(2)).collect();
    let log_z = log_sum_exp(&logits);
    logits.iter().map(|l| l - log_z).collect()
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl DiscretizedGaussianPolicy {
    pub fn log_probs(&self, grid: &[f64]) -> Vec<Vec<f64>> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| grid_gaussian_log_probs(grid, m, s))
            .collect()
    }

    pub fn random<R: Rng + ?Sized>(n_states: usize, candidates: &SubpolicyCandidates, rng: &mut R) -> Self {
        let pick = |v: &[f64], rng: &mut R| v[rng.random_range(0..v.len())];
        Self {
            mu: (0..n_states).map(|_| pick(&candidates.mu, rng)).collect(),
            sigma: (0..n_states).map(|_| pick(&candidates.sigma, rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftValues {
    /// `Q[s][a]`
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub sweeps: usize,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
}

pub const EVAL_TOLERANCE: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100_000;

/// Fixed point of `Q(s,a) = Σ p(s′|s,a)[r + γV(s′)]`,
/// `V(s) = Σ_a π(a|s)[Q(s,a) − α log π(a|s)]`, starting from `V = 0`.
pub fn soft_policy_eval(mdp: &TabularSoftMdp, log_pi: &[Vec<f64>]) -> Result<SoftValues> {
    soft_policy_eval_from(mdp, log_pi, &vec![0.0; mdp.n_states])
}

pub fn soft_policy_eval_from(mdp: &TabularSoftMdp, log_pi: &[Vec<f64>], v0: &[f64]) -> Result<SoftValues> {
    mdp.validate()?;
    if log_pi.len() != mdp.n_states || log_pi.iter().any(|r| r.len() != mdp.n_actions()) || v0.len() != mdp.n_states
    {
        return Err(Error::InvalidConfig("policy table shape does not match the MDP".into()));
    }
    let na = mdp.n_actions();
    let reward: Vec<Vec<f64>> = (0..mdp.n_states)
        .map(|s| (0..na).map(|a| mdp.expected_reward(s, a)).collect())
        .collect();
    let entropy_bonus: Vec<f64> = log_pi
        .iter()
        .map(|row| {
            -mdp.alpha
                * row
                    .iter()
                    .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp })
                    .sum::<f64>()
        })
        .collect();
    let q_of = |v: &[f64]| -> Vec<Vec<f64>> {
        (0..mdp.n_states)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        reward[s][a]
                            + mdp.gamma
                                * mdp.transitions[s][a].iter().zip(v).map(|(p, v)| p * v).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    };
    let v_of = |q: &[Vec<f64>]| -> Vec<f64> {
        (0..mdp.n_states)
            .map(|s| {
                log_pi[s].iter().zip(&q[s]).map(|(lp, q)| lp.exp() * q).sum::<f64>() + entropy_bonus[s]
            })
            .collect()
    };

    let mut v = v0.to_vec();
    let mut residual = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let next = v_of(&q_of(&v));
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= EVAL_TOLERANCE {
            return Ok(SoftValues {
                q: q_of(&v),
                v,
                sweeps: sweep,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        sweeps: MAX_SWEEPS,
        residual,
    })
}

/// Candidate sets standing in for the feasible sub-policy families. The
/// current value of each coordinate is always tried first, so an improvement
/// step can always keep it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpolicyCandidates {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Default for SubpolicyCandidates {
    /// μ on 41 points in `[−1, 1]`, σ on 20 points in `[0.1, 2]`.
    fn default() -> Self {
        Self {
            mu: (0..41).map(|i| -1.0 + 0.05 * i as f64).collect(),
            sigma: (1..=20).map(|i| 0.1 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    /// New means, old deviations.
    pub policy_mid: DiscretizedGaussianPolicy,
    /// New means and new deviations.
    pub policy_new: DiscretizedGaussianPolicy,
    pub q_old: Vec<Vec<f64>>,
    pub q_mid: Vec<Vec<f64>>,
    pub q_new: Vec<Vec<f64>>,
}

/// `KL(π ‖ exp(Q/α)/Z)` over the grid, with `Z` the exact partition sum.
pub fn kl_to_boltzmann(log_pi: &[f64], q: &[f64], alpha: f64) -> f64 {
    let logits: Vec<f64> = q.iter().map(|v| v / alpha).collect();
    let log_z = log_sum_exp(&logits);
    log_pi
        .iter()
        .zip(&logits)
        .map(|(&lp, &l)| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * (lp - (l - log_z)) })
        .sum()
}

fn best_candidate(current: f64, candidates: &[f64], kl: impl Fn(f64) -> f64) -> f64 {
    let mut best = (current, kl(current));
    for &c in candidates {
        let k = kl(c);
        if k < best.1 {
            best = (c, k);
        }
    }
    best.0
}

/// Improve the means against `Q_old` with deviations fixed, then the
/// deviations against `Q_mid` with the new means fixed. Each coordinate is
/// chosen per state by exact grid search over KL to the Boltzmann policy.
pub fn sequential_subpolicy_improve(
    mdp: &TabularSoftMdp,
    policy: &DiscretizedGaussianPolicy,
    candidates: &SubpolicyCandidates,
) -> Result<Improvement> {
    if !(mdp.alpha > 0.0) {
        return Err(Error::InvalidConfig("sub-policy improvement needs alpha > 0".into()));
    }
    if policy.mu.len() != mdp.n_states || policy.sigma.len() != mdp.n_states {
        return Err(Error::InvalidConfig("policy table shape does not match the MDP".into()));
    }
    let grid = &mdp.actions;
    let q_old = soft_policy_eval(mdp, &policy.log_probs(grid))?.q;

    let mut mid = policy.clone();
    for s in 0..mdp.n_states {
        let sigma = policy.sigma[s];
        mid.mu[s] = best_candidate(policy.mu[s], &candidates.mu, |m| {
            kl_to_boltzmann(&grid_gaussian_log_probs(grid, m, sigma), &q_old[s], mdp.alpha)
        });
    }
    let q_mid = soft_policy_eval(mdp, &mid.log_probs(grid))?.q;

    let mut new = mid.clone();
    for s in 0..mdp.n_states {
        let mu = mid.mu[s];
        new.sigma[s] = best_candidate(mid.sigma[s], &candidates.sigma, |sd| {
            kl_to_boltzmann(&grid_gaussian_log_probs(grid, mu, sd), &q_mid[s], mdp.alpha)
        });
    }
    let q_new = soft_policy_eval(mdp, &new.log_probs(grid))?.q;

    Ok(Improvement {
        policy_mid: mid,
        policy_new: new,
        q_old,
        q_mid,
        q_new,
    })
}

/// Largest violation of `lower ≤ upper` over all entries (≤ 0 when it holds).
pub fn max_violation(lower: &[Vec<f64>], upper: &[Vec<f64>]) -> f64 {
    lower
        .iter()
        .flatten()
        .zip(upper.iter().flatten())
        .map(|(l, u)| l - u)
        .fold(f64::NEG_INFINITY, f64::max)
}

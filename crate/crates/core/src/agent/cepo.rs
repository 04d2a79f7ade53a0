//! Per-state target means for the CEPO mean update.
//!
//! For a state `s` the target objective of a candidate mean `μ` is
//! `F(μ) = mean_k [α log π(a_k|s) − min Q(s, a_k)]` with
//! `a_k = tanh(μ + σ(s)·ε_k)` mapped to the action bounds. `σ(s)` comes from
//! the current deviation network and the `ε_k` are drawn once per state and
//! held fixed for the whole CEM run, which makes `F` deterministic.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::critic::SoftCritic;
use super::policy::{squashed_log_density, standard_normal, SquashedGaussianPolicy};
use crate::cem::{cem_optimize_batch_vectorized, CemConfig, CemResult};
use crate::error::{ensure_dim, Error, Result};

/// Inputs shared by every candidate of one state.
struct StateContext<'a> {
    state: ArrayView2<'a, f64>,
    log_std: ArrayView2<'a, f64>,
    noise: ArrayView2<'a, f64>,
}

/// Objective values for every candidate of every block, in one critic call.
fn score<C: SoftCritic + ?Sized>(
    contexts: &[StateContext<'_>],
    blocks: &[(usize, ArrayView2<f64>)],
    policy: &SquashedGaussianPolicy,
    critic: &C,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    let a = policy.action_dim();
    let sd = policy.state_dim();
    let rows: usize = blocks
        .iter()
        .map(|(i, c)| c.nrows() * contexts[*i].noise.nrows())
        .sum();
    let mut states = Array2::zeros((rows, sd));
    let mut squashed = Array2::zeros((rows, a));
    let mut logp = vec![0.0; rows];
    let mut r = 0;
    for (i, cands) in blocks {
        let ctx = &contexts[*i];
        for cand in cands.axis_iter(Axis(0)) {
            for eps in ctx.noise.axis_iter(Axis(0)) {
                states.row_mut(r).assign(&ctx.state.row(0));
                for j in 0..a {
                    let ls = ctx.log_std[[0, j]];
                    let u = cand[j] + ls.exp() * eps[j];
                    squashed[[r, j]] = u.tanh();
                    logp[r] += squashed_log_density(u, cand[j], ls);
                }
                r += 1;
            }
        }
    }
    let q = critic.min_q(states.view(), policy.to_env(&squashed).view())?;
    let mut out = Vec::with_capacity(blocks.len());
    let mut r = 0;
    for (i, cands) in blocks {
        let k = contexts[*i].noise.nrows();
        let mut vals = Vec::with_capacity(cands.nrows());
        for _ in 0..cands.nrows() {
            let total: f64 = (r..r + k).map(|t| alpha * logp[t] - q[[t, 0]]).sum();
            vals.push(total / k as f64);
            r += k;
        }
        out.push(vals);
    }
    Ok(out)
}

/// `F(μ)` for one state and one candidate pre-squash mean, with the
/// deviation taken from the policy at `state` and fixed noise rows `K×A`.
pub fn cem_target_objective<C: SoftCritic + ?Sized>(
    state: &[f64],
    candidate_mu: &[f64],
    policy: &SquashedGaussianPolicy,
    critic: &C,
    alpha: f64,
    noise: ArrayView2<f64>,
) -> Result<f64> {
    ensure_dim("CEPO state", policy.state_dim(), state.len())?;
    ensure_dim("CEPO candidate", policy.action_dim(), candidate_mu.len())?;
    ensure_dim("CEPO noise width", policy.action_dim(), noise.ncols())?;
    if noise.nrows() == 0 {
        return Err(Error::InvalidConfig("CEPO objective needs at least one noise row".into()));
    }
    let s = ArrayView2::from_shape((1, state.len()), state).unwrap();
    let (_, log_std) = policy.heads(s)?;
    let ctx = [StateContext {
        state: s,
        log_std: log_std.view(),
        noise,
    }];
    let cand = ArrayView2::from_shape((1, candidate_mu.len()), candidate_mu).unwrap();
    Ok(score(&ctx, &[(0, cand)], policy, critic, alpha)?[0][0])
}

#[derive(Debug, Clone)]
pub struct CepoTarget {
    /// `B×A` target pre-squash means.
    pub mu_star: Array2<f64>,
    /// `B×A` means predicted by the policy (the CEM starting points).
    pub initial_mu: Array2<f64>,
    /// Noise used for each state, `K×A`.
    pub noise: Vec<Array2<f64>>,
    pub runs: Vec<CemResult>,
}

impl CepoTarget {
    /// Mean over states of `‖μ(s) − μ*(s)‖`.
    pub fn policy_error(&self) -> f64 {
        let diff = &self.mu_star - &self.initial_mu;
        let total: f64 = diff
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum();
        total / diff.nrows() as f64
    }
}

/// One independent CEM run per state, started at the policy's own mean and
/// minimizing `F`. `noise_samples` is the number of `ε` rows per state.
pub fn cepo_mu_star<C: SoftCritic + ?Sized, R: Rng + ?Sized>(
    states: &Array2<f64>,
    policy: &SquashedGaussianPolicy,
    critic: &C,
    alpha: f64,
    config: &CemConfig,
    noise_samples: usize,
    rng: &mut R,
) -> Result<CepoTarget> {
    if states.nrows() == 0 {
        return Err(Error::InvalidConfig("CEPO target needs at least one state".into()));
    }
    if noise_samples == 0 {
        return Err(Error::InvalidConfig("cem.noise_samples must be positive".into()));
    }
    let a = policy.action_dim();
    let (initial_mu, log_std) = policy.heads(states.view())?;
    let noise: Vec<Array2<f64>> = (0..states.nrows())
        .map(|_| standard_normal((noise_samples, a), rng))
        .collect();
    let contexts: Vec<StateContext> = (0..states.nrows())
        .map(|i| StateContext {
            state: states.slice(s![i..i + 1, ..]),
            log_std: log_std.slice(s![i..i + 1, ..]),
            noise: noise[i].view(),
        })
        .collect();
    let initial: Vec<Vec<f64>> = initial_mu.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let config = CemConfig {
        minimize: true,
        ..config.clone()
    };
    let mut failure = None;
    let runs = cem_optimize_batch_vectorized(
        |blocks| match score(&contexts, blocks, policy, critic, alpha) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                blocks.iter().map(|(_, c)| vec![f64::NAN; c.nrows()]).collect()
            }
        },
        &initial,
        &config,
        rng,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let runs = runs?;
    let mut mu_star = Array2::zeros((states.nrows(), a));
    for (mut row, run) in mu_star.axis_iter_mut(Axis(0)).zip(&runs) {
        row.iter_mut().zip(&run.best_mean).for_each(|(x, &m)| *x = m);
    }
    Ok(CepoTarget {
        mu_star,
        initial_mu,
        noise,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::critic::TwinCritic;
    use crate::agent::policy::PolicyMode;
    use crate::nn::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic {
        target: f64,
    }

    impl SoftCritic for Quadratic {
        fn min_q(&self, _: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
            Ok(actions.mapv(|a| -(a - self.target).powi(2)).sum_axis(Axis(1)).insert_axis(Axis(1)))
        }

        fn min_q_on_tape(&self, tape: &mut Tape, _: crate::nn::Var, actions: crate::nn::Var) -> crate::nn::Var {
            let d = tape.offset(actions, -self.target);
            let sq = tape.square(d);
            let s = tape.sum_cols(sq);
            tape.neg(s)
        }
    }

    fn setup(seed: u64) -> (SquashedGaussianPolicy, TwinCritic, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SquashedGaussianPolicy::new(PolicyMode::Decoupled, 3, &[8, 8], vec![-2.0], vec![2.0], &mut rng).unwrap();
        let c = TwinCritic::new(3, 1, &[8, 8], &mut rng).unwrap();
        let states = standard_normal((6, 3), &mut rng);
        (p, c, states)
    }

    #[test]
    fn zero_iterations_return_the_policy_mean() {
        let (p, c, states) = setup(0);
        let cfg = CemConfig {
            iterations: 0,
            ..CemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = cepo_mu_star(&states, &p, &c, 1.0, &cfg, 1, &mut rng).unwrap();
        assert_eq!(t.mu_star, p.heads(states.view()).unwrap().0);
        assert_eq!(t.policy_error(), 0.0);
    }

    #[test]
    fn seeded_targets_repeat() {
        let (p, c, states) = setup(2);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            cepo_mu_star(&states, &p, &c, 0.2, &CemConfig::default(), 2, &mut rng)
                .unwrap()
                .mu_star
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batched_scoring_matches_single_objective() {
        let (p, c, states) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = CemConfig {
            iterations: 3,
            ..CemConfig::default()
        };
        let t = cepo_mu_star(&states, &p, &c, 0.5, &cfg, 3, &mut rng).unwrap();
        for i in 0..states.nrows() {
            let state = states.row(i).to_vec();
            let f = |mu: &[f64]| cem_target_objective(&state, mu, &p, &c, 0.5, t.noise[i].view()).unwrap();
            let at_star = f(t.mu_star.row(i).as_slice().unwrap());
            assert!(at_star.is_finite());
            // The objective is a pure function of its inputs.
            assert_eq!(at_star, f(t.mu_star.row(i).as_slice().unwrap()));
        }
    }

    #[test]
    fn equal_candidates_score_equal() {
        let (p, c, states) = setup(4);
        let noise = Array2::from_elem((2, 1), 0.3);
        let st = states.row(0).to_vec();
        let f1 = cem_target_objective(&st, &[0.25], &p, &c, 1.0, noise.view()).unwrap();
        let f2 = cem_target_objective(&st, &[0.25], &p, &c, 1.0, noise.view()).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn quadratic_critic_pulls_target_toward_preimage() {
        let (p, _, states) = setup(6);
        let critic = Quadratic { target: 1.0 };
        let cfg = CemConfig {
            initial_deviation: 2.0,
            sample_count: 1000,
            ..CemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = cepo_mu_star(&states, &p, &critic, 0.0, &cfg, 1, &mut rng).unwrap();
        // The realised action 2·tanh(μ* + σε) should land on the critic's peak.
        for i in 0..states.nrows() {
            let sigma = p.heads(states.slice(s![i..i + 1, ..])).unwrap().1[[0, 0]].exp();
            let action = 2.0 * (t.mu_star[[i, 0]] + sigma * t.noise[i][[0, 0]]).tanh();
            assert!((action - 1.0).abs() < 0.02, "state {i}: action {action}");
        }
    }
}

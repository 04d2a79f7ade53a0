//! The oracle checks run by `cepo verify`, grouped into families.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_loss_gradient, Fault, GradCheckSetup, LossKind};
use super::tabular::{max_violation, sequential_subpolicy_improve, DiscretizedGaussianPolicy, SubpolicyCandidates, TabularSoftMdp};
use super::{brute_force_policy_target, squashed_density_integral};
use crate::agent::cepo::{cem_target_objective, cepo_mu_star};
use crate::agent::critic::{SoftCritic, TwinCritic};
use crate::agent::policy::{standard_normal, PolicyMode, SquashedGaussianPolicy};
use crate::cem::CemConfig;
use crate::envs::EnvKind;
use crate::error::Result;
use crate::nn::{Tape, Var};

pub const FAMILY_GRADIENTS: &str = "gradients";
pub const FAMILY_NORMALIZATION: &str = "normalization";
pub const FAMILY_IMPROVEMENT: &str = "sequential-improvement";
pub const FAMILY_CEM_GRID: &str = "cem-vs-grid";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub family: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn families(&self) -> Vec<&'static str> {
        let mut f: Vec<&'static str> = Vec::new();
        for c in &self.checks {
            if !f.contains(&c.family) {
                f.push(c.family);
            }
        }
        f
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Tab-separated `family name PASS|FAIL detail`, one check per line, then a
/// summary line.
impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{}\t{}\t{}\t{}", c.family, c.name, status, c.detail)?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "summary\tall\t{}\t{} checks, {} failed",
            if failed == 0 { "PASS" } else { "FAIL" },
            self.checks.len(),
            failed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random (network, batch) draws per loss.
    pub gradient_draws: usize,
    pub normalization_pairs: usize,
    pub mdps: usize,
    pub cem_states: usize,
    pub fault: Fault,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_draws: 10,
            normalization_pairs: 20,
            mdps: 20,
            cem_states: 50,
            fault: Fault::None,
        }
    }
}

pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    report.checks.extend(gradient_checks(opts)?);
    report.checks.push(normalization_check(opts));
    report.checks.extend(improvement_checks(opts)?);
    report.checks.push(cem_grid_check(opts)?);
    Ok(report)
}

pub fn gradient_checks(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let setup = GradCheckSetup::default();
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut worst: f64 = 0.0;
            let mut failed = Vec::new();
            for draw in 0..opts.gradient_draws {
                let seed = opts.seed.wrapping_mul(1000).wrapping_add(draw as u64);
                let c = check_loss_gradient(kind, seed, &setup, opts.fault)?;
                worst = worst.max(c.max_rel_error);
                if !c.passed {
                    failed.push(draw);
                }
            }
            Ok(CheckResult {
                family: FAMILY_GRADIENTS,
                name: kind.name().to_string(),
                passed: failed.is_empty() && opts.gradient_draws > 0,
                detail: format!(
                    "{} draws, max relative error {worst:.2e}, failing draws {failed:?}",
                    opts.gradient_draws
                ),
            })
        })
        .collect()
}

pub const NORMALIZATION_POINTS: usize = 10_001;
pub const NORMALIZATION_TOL: f64 = 1e-3;

/// Random `(μ, log σ)` with `μ ∈ [−1, 1]`, `log σ ∈ [−2, 0]`.
pub fn normalization_pairs(seed: u64, n: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-2.0..0.0)))
        .collect()
}

pub fn normalization_check(opts: &VerifyOptions) -> CheckResult {
    let pairs = normalization_pairs(opts.seed, opts.normalization_pairs);
    let worst = pairs
        .iter()
        .map(|&(m, ls)| (squashed_density_integral(m, ls, NORMALIZATION_POINTS) - 1.0).abs())
        .fold(0.0, f64::max);
    CheckResult {
        family: FAMILY_NORMALIZATION,
        name: "squashed_density".into(),
        passed: worst <= NORMALIZATION_TOL && !pairs.is_empty(),
        detail: format!("{} (mu, sigma) pairs, max |integral - 1| {worst:.2e}", pairs.len()),
    }
}

pub const IMPROVEMENT_TOL: f64 = 1e-8;

/// One random 3-state, 21-action MDP with a random policy, improved once.
/// Returns the worst violations of `Q_old ≤ Q_mid` and `Q_mid ≤ Q_new`.
pub fn improvement_instance(seed: u64) -> Result<(f64, f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = rng.random_range(0.5..0.95);
    let alpha = rng.random_range(0.1..2.0);
    let mdp = TabularSoftMdp::random(3, 21, gamma, alpha, &mut rng);
    let cands = SubpolicyCandidates::default();
    let policy = DiscretizedGaussianPolicy::random(3, &cands, &mut rng);
    let imp = sequential_subpolicy_improve(&mdp, &policy, &cands)?;
    let moved = imp.policy_new != policy;
    Ok((max_violation(&imp.q_old, &imp.q_mid), max_violation(&imp.q_mid, &imp.q_new), moved))
}

pub fn improvement_checks(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut worst: (f64, f64) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut failed = Vec::new();
    let mut moved = 0;
    for i in 0..opts.mdps {
        let (a, b, m) = improvement_instance(opts.seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        worst = (worst.0.max(a), worst.1.max(b));
        if a > IMPROVEMENT_TOL || b > IMPROVEMENT_TOL {
            failed.push(i);
        }
        moved += usize::from(m);
    }
    Ok(vec![CheckResult {
        family: FAMILY_IMPROVEMENT,
        name: "q_old<=q_mid<=q_new".into(),
        passed: failed.is_empty() && opts.mdps > 0,
        detail: format!(
            "{} MDPs ({moved} changed), worst violation mean step {:.2e}, deviation step {:.2e}, failing {failed:?}",
            opts.mdps, worst.0, worst.1
        ),
    }])
}

/// `Q(s, a) = −‖a − a*(s)‖²` with `a*(s) = 1.5·tanh(Σ s)` in every dimension.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticCritic;

impl QuadraticCritic {
    pub fn target(state: ArrayView2<f64>) -> Array2<f64> {
        state.sum_axis(Axis(1)).mapv(|x| 1.5 * x.tanh()).insert_axis(Axis(1))
    }
}

impl SoftCritic for QuadraticCritic {
    fn min_q(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let t = Self::target(states);
        let d = &actions - &t;
        Ok(d.mapv(|x| -x * x).sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    fn min_q_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Var {
        let t = tape.constant(Self::target(tape.value(states).view()));
        let d = tape.sub(actions, t);
        let sq = tape.square(d);
        let s = tape.sum_cols(sq);
        tape.neg(s)
    }
}

pub const GRID_LOW: f64 = -6.0;
pub const GRID_HIGH: f64 = 6.0;
pub const GRID_POINTS: usize = 401;
pub const GRID_CELLS: f64 = 2.0;

/// Per-state `|μ*_CEM − μ_grid|` in grid cells on the quadratic critic with
/// `α = 0`, one action dimension, and CEM at `N = 100, ρ = 0.05, T = 10` with
/// `s = 2`.
pub fn cem_grid_distances(seed: u64, states: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = SquashedGaussianPolicy::new(PolicyMode::Decoupled, 3, &[8, 8], vec![-2.0], vec![2.0], &mut rng)?;
    let s = standard_normal((states, 3), &mut rng);
    let cfg = CemConfig {
        initial_deviation: 2.0,
        ..CemConfig::default()
    };
    let target = cepo_mu_star(&s, &policy, &QuadraticCritic, 0.0, &cfg, 1, &mut rng)?;
    let cell = (GRID_HIGH - GRID_LOW) / (GRID_POINTS - 1) as f64;
    (0..states)
        .map(|i| {
            let st = s.row(i).to_vec();
            let noise = target.noise[i].view();
            let g = brute_force_policy_target(
                |mu| cem_target_objective(&st, mu, &policy, &QuadraticCritic, 0.0, noise).unwrap_or(f64::NAN),
                &[GRID_LOW],
                &[GRID_HIGH],
                GRID_POINTS,
            )?;
            Ok((target.mu_star[[i, 0]] - g.point[0]).abs() / cell)
        })
        .collect()
}

pub fn cem_grid_check(opts: &VerifyOptions) -> Result<CheckResult> {
    let d = cem_grid_distances(opts.seed, opts.cem_states)?;
    let within = d.iter().filter(|&&x| x <= GRID_CELLS).count();
    let need = (opts.cem_states * 9).div_ceil(10);
    Ok(CheckResult {
        family: FAMILY_CEM_GRID,
        name: "quadratic_critic".into(),
        passed: within >= need && opts.cem_states > 0,
        detail: format!(
            "{within}/{} states within {GRID_CELLS} grid cells (need {need}), max {:.2} cells",
            opts.cem_states,
            d.iter().copied().fold(0.0, f64::max)
        ),
    })
}

/// Per-state `(F(μ*), F(μ(s)))` for frozen random desk-size networks on
/// `env`: CEM targets for `states` random states, each compared with the
/// policy's own mean under the same noise.
pub fn cepo_improvement_pairs(seed: u64, env: EnvKind, states: usize, cem: &CemConfig) -> Result<Vec<(f64, f64)>> {
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = SquashedGaussianPolicy::new(
        PolicyMode::Decoupled,
        spec.state_dim,
        &[64, 64],
        spec.action_low.clone(),
        spec.action_high.clone(),
        &mut rng,
    )?;
    let critic = TwinCritic::new(spec.state_dim, spec.action_dim, &[64, 64], &mut rng)?;
    let s = standard_normal((states, spec.state_dim), &mut rng);
    let target = cepo_mu_star(&s, &policy, &critic, 1.0, cem, 1, &mut rng)?;
    (0..states)
        .map(|i| {
            let st = s.row(i).to_vec();
            let noise = target.noise[i].view();
            let own = target.initial_mu.row(i).to_vec();
            let star = target.mu_star.row(i).to_vec();
            Ok((
                cem_target_objective(&st, &star, &policy, &critic, 1.0, noise)?,
                cem_target_objective(&st, &own, &policy, &critic, 1.0, noise)?,
            ))
        })
        .collect()
}

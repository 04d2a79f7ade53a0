//! Finite-difference checks of every agent loss gradient.
//!
//! Loss values on the numeric side are recomputed with the plain (tape-free)
//! forward passes, so the only shared code is the network evaluation itself.
//! Draws whose ReLU pre-activations, twin-critic gap or log-std clamp come
//! within [`KINK_MARGIN`] of a non-differentiable point are rejected and
//! redrawn, since central differences are meaningless across a kink.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::finite_diff_grad;
use crate::agent::critic::{state_action, SoftCritic, TwinCritic};
use crate::agent::losses::{self, LossGrad};
use crate::agent::policy::{standard_normal, PolicyMode, PolicyNets, SquashedGaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::nn::MlpNet;
use crate::replay::Batch;

pub const KINK_MARGIN: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Entries whose analytic and numeric values are both this small are
/// compared absolutely instead.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    V,
    Q1,
    Q2,
    /// Coupled policy, all parameters.
    PiCoupled,
    PiMu,
    PiSigma,
    Imitation,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::V,
        LossKind::Q1,
        LossKind::Q2,
        LossKind::PiCoupled,
        LossKind::PiMu,
        LossKind::PiSigma,
        LossKind::Imitation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::V => "v_loss",
            LossKind::Q1 => "q1_loss",
            LossKind::Q2 => "q2_loss",
            LossKind::PiCoupled => "pi_loss_coupled",
            LossKind::PiMu => "pi_mu_loss",
            LossKind::PiSigma => "pi_sigma_loss",
            LossKind::Imitation => "imitation_loss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSetup {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: [usize; 2],
    pub batch: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            state_dim: 3,
            action_dim: 2,
            hidden: [8, 8],
            batch: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub kind: LossKind,
    pub seed: u64,
    pub n_params: usize,
    /// Largest `|a − n| / max(|a|, |n|)` over entries above the floor.
    pub max_rel_error: f64,
    /// Largest `|a − n|` over entries below the floor.
    pub max_abs_error_small: f64,
    pub passed: bool,
    /// Redraws needed to stay clear of kinks.
    pub redraws: usize,
}

/// Entry-wise comparison under the module tolerances.
pub fn compare(kind: LossKind, seed: u64, analytic: &[f64], numeric: &[f64], redraws: usize) -> GradCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut passed = analytic.len() == numeric.len();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = (a - n).abs();
        if scale * REL_TOL > ABS_FLOOR {
            max_rel = max_rel.max(err / scale);
            passed &= err <= REL_TOL * scale;
        } else {
            max_abs = max_abs.max(err);
            passed &= err <= ABS_FLOOR;
        }
    }
    GradCheck {
        kind,
        seed,
        n_params: analytic.len(),
        max_rel_error: max_rel,
        max_abs_error_small: max_abs,
        passed,
        redraws,
    }
}

struct Draw {
    policy: SquashedGaussianPolicy,
    twin: TwinCritic,
    v: MlpNet,
    v_target: MlpNet,
    batch: Batch,
    noise: Array2<f64>,
    mu_star: Array2<f64>,
    alpha: f64,
    gamma: f64,
}

fn net_sizes(input: usize, hidden: [usize; 2], output: usize) -> Vec<usize> {
    vec![input, hidden[0], hidden[1], output]
}

fn draw(kind: LossKind, setup: &GradCheckSetup, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let (sd, ad, h, b) = (setup.state_dim, setup.action_dim, setup.hidden, setup.batch);
    let mode = if kind == LossKind::PiCoupled {
        PolicyMode::Coupled
    } else {
        PolicyMode::Decoupled
    };
    let low: Vec<f64> = (0..ad).map(|j| -1.0 - 0.5 * j as f64).collect();
    let high: Vec<f64> = (0..ad).map(|j| 1.0 + 0.25 * j as f64).collect();
    let policy = SquashedGaussianPolicy::new(mode, sd, &h, low.clone(), high.clone(), rng)?;
    let twin = TwinCritic::new(sd, ad, &h, rng)?;
    let v = MlpNet::new(&net_sizes(sd, h, 1), rng)?;
    let v_target = MlpNet::new(&net_sizes(sd, h, 1), rng)?;
    let states = standard_normal((b, sd), rng);
    let actions = Array2::from_shape_fn((b, ad), |(_, j)| rng.random_range(low[j]..high[j]));
    let rewards = Array2::from_shape_fn((b, 1), |_| rng.random_range(-2.0..2.0));
    let next_states = standard_normal((b, sd), rng);
    let dones = Array2::from_shape_fn((b, 1), |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let noise = standard_normal((b, ad), rng);
    let mu_star = standard_normal((b, ad), rng);
    Ok(Draw {
        policy,
        twin,
        v,
        v_target,
        batch: Batch {
            states,
            actions,
            rewards,
            next_states,
            dones,
        },
        noise,
        mu_star,
        alpha: rng.random_range(0.05..1.0),
        gamma: 0.99,
    })
}

fn policy_nets(p: &SquashedGaussianPolicy) -> Vec<&MlpNet> {
    match p.nets() {
        PolicyNets::Coupled(n) => vec![n],
        PolicyNets::Decoupled { mean, dev } => vec![mean, dev],
    }
}

/// True when every non-differentiable point is at least `KINK_MARGIN` away.
fn clear_of_kinks(kind: LossKind, d: &Draw) -> Result<bool> {
    let s = d.batch.states.view();
    let ok = |m: f64| m >= KINK_MARGIN;
    Ok(match kind {
        LossKind::V => ok(d.v.relu_margin(s)),
        LossKind::Q1 | LossKind::Q2 => {
            let x = state_action(s, d.batch.actions.view());
            let q = if kind == LossKind::Q1 { &d.twin.q1 } else { &d.twin.q2 };
            ok(q.relu_margin(x.view()))
        }
        LossKind::Imitation => match d.policy.nets() {
            PolicyNets::Decoupled { mean, .. } => ok(mean.relu_margin(s)),
            PolicyNets::Coupled(_) => false,
        },
        LossKind::PiCoupled | LossKind::PiMu | LossKind::PiSigma => {
            if !policy_nets(&d.policy).iter().all(|n| ok(n.relu_margin(s))) {
                return Ok(false);
            }
            let (actions, _) = d.policy.sample_with_noise(s, &d.noise)?;
            let x = state_action(s, actions.view());
            let q1 = d.twin.q1.forward_batch(x.view())?;
            let q2 = d.twin.q2.forward_batch(x.view())?;
            let gap = q1.iter().zip(q2.iter()).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min);
            let raw_log_std = match d.policy.nets() {
                PolicyNets::Coupled(n) => {
                    let out = n.forward_batch(s)?;
                    out.slice_axis(Axis(1), (d.policy.action_dim()..).into()).to_owned()
                }
                PolicyNets::Decoupled { dev, .. } => dev.forward_batch(s)?,
            };
            let clamp_gap = raw_log_std
                .iter()
                .map(|v| (v - LOG_STD_MIN).abs().min((v - LOG_STD_MAX).abs()))
                .fold(f64::INFINITY, f64::min);
            ok(d.twin.q1.relu_margin(x.view())) && ok(d.twin.q2.relu_margin(x.view())) && ok(gap) && ok(clamp_gap)
        }
    })
}

fn half_mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    0.5 * (pred - target).mapv(|e| e * e).sum() / pred.nrows() as f64
}

/// Loss value recomputed without the tape, with the trained network's
/// parameters replaced by `flat`.
fn plain_loss(kind: LossKind, d: &Draw, flat: &[f64]) -> f64 {
    let s = d.batch.states.view();
    let eval = || -> Result<f64> {
        match kind {
            LossKind::V => {
                let (a, logp) = d.policy.sample_with_noise(s, &d.noise)?;
                let target = d.twin.min_q(s, a.view())? - logp * d.alpha;
                let mut v = d.v.clone();
                v.set_flat_params(flat)?;
                Ok(half_mse(&v.forward_batch(s)?, &target))
            }
            LossKind::Q1 | LossKind::Q2 => {
                let v_next = d.v_target.forward_batch(d.batch.next_states.view())?;
                let y = &d.batch.rewards + &(v_next * d.batch.dones.mapv(|x| d.gamma * (1.0 - x)));
                let mut q = if kind == LossKind::Q1 { d.twin.q1.clone() } else { d.twin.q2.clone() };
                q.set_flat_params(flat)?;
                let x = state_action(s, d.batch.actions.view());
                Ok(half_mse(&q.forward_batch(x.view())?, &y))
            }
            LossKind::PiCoupled | LossKind::PiMu | LossKind::PiSigma => {
                let mut p = d.policy.clone();
                match (p.nets_mut(), kind) {
                    (PolicyNets::Coupled(n), _) => n.set_flat_params(flat)?,
                    (PolicyNets::Decoupled { dev, .. }, LossKind::PiSigma) => dev.set_flat_params(flat)?,
                    (PolicyNets::Decoupled { mean, .. }, _) => mean.set_flat_params(flat)?,
                }
                let (a, logp) = p.sample_with_noise(s, &d.noise)?;
                let q = d.twin.min_q(s, a.view())?;
                Ok((logp * d.alpha - q).mean().unwrap())
            }
            LossKind::Imitation => {
                let PolicyNets::Decoupled { mean, .. } = d.policy.nets() else {
                    return Err(Error::InvalidConfig("imitation check needs a decoupled policy".into()));
                };
                let mut m = mean.clone();
                m.set_flat_params(flat)?;
                let out = m.forward_batch(s)?;
                Ok(half_mse(&out, &d.mu_star))
            }
        }
    };
    eval().unwrap_or(f64::NAN)
}

fn trained_params(kind: LossKind, d: &Draw) -> Vec<f64> {
    match (kind, d.policy.nets()) {
        (LossKind::V, _) => d.v.flat_params(),
        (LossKind::Q1, _) => d.twin.q1.flat_params(),
        (LossKind::Q2, _) => d.twin.q2.flat_params(),
        (_, PolicyNets::Coupled(n)) => n.flat_params(),
        (LossKind::PiSigma, PolicyNets::Decoupled { dev, .. }) => dev.flat_params(),
        (_, PolicyNets::Decoupled { mean, .. }) => mean.flat_params(),
    }
}

fn analytic(kind: LossKind, d: &Draw) -> Result<LossGrad> {
    let b = &d.batch;
    match kind {
        LossKind::V => losses::v_loss(b, &d.v, &d.twin, &d.policy, d.alpha, &d.noise),
        LossKind::Q1 => losses::q_loss_single(b, &d.twin.q1, &d.v_target, d.gamma),
        LossKind::Q2 => losses::q_loss_single(b, &d.twin.q2, &d.v_target, d.gamma),
        LossKind::PiCoupled | LossKind::PiMu => losses::pi_mu_loss(b, &d.twin, &d.policy, d.alpha, &d.noise),
        LossKind::PiSigma => losses::pi_sigma_loss(b, &d.twin, &d.policy, d.alpha, &d.noise),
        LossKind::Imitation => match d.policy.nets() {
            PolicyNets::Decoupled { mean, .. } => losses::imitation_loss(&b.states, &d.mu_star, mean),
            PolicyNets::Coupled(_) => Err(Error::InvalidConfig("imitation check needs a decoupled policy".into())),
        },
    }
}

/// How a check's analytic gradient is tampered with before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Perturb one gradient entry of the named loss by 1%, plus 1e-3.
    Corrupt(LossKind),
}

/// One seeded draw of networks and batch for `kind`, checked against
/// central differences.
pub fn check_loss_gradient(kind: LossKind, seed: u64, setup: &GradCheckSetup, fault: Fault) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut redraws = 0;
    let d = loop {
        let d = draw(kind, setup, &mut rng)?;
        if clear_of_kinks(kind, &d)? {
            break d;
        }
        redraws += 1;
        if redraws > 1000 {
            return Err(Error::InvalidConfig(format!("no kink-free draw for {} (seed {seed})", kind.name())));
        }
    };
    let lg = analytic(kind, &d)?;
    let mut a: Vec<f64> = lg.grads.iter().flat_map(|g| g.iter().copied()).collect();
    if fault == Fault::Corrupt(kind) {
        let i = a.len() / 2;
        a[i] = a[i] * 1.01 + 1e-3;
    }
    let p0 = trained_params(kind, &d);
    let n = finite_diff_grad(|p| plain_loss(kind, &d, p), &p0, FD_STEP)?;
    let value = plain_loss(kind, &d, &p0);
    if (value - lg.value).abs() > 1e-10 * value.abs().max(1.0) {
        return Ok(GradCheck {
            passed: false,
            ..compare(kind, seed, &a, &n, redraws)
        });
    }
    Ok(compare(kind, seed, &a, &n, redraws))
}

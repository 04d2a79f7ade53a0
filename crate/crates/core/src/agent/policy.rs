//! Tanh-squashed Gaussian policies in coupled (one trunk, two heads) and
//! decoupled (mean network + deviation network) form.


use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, Error, Result};
use crate::nn::{BoundMlp, MlpNet, Tape, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 − tanh²u + ε)` so saturated actions stay finite.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    Coupled,
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyNets {
    /// Output columns `[μ_1..μ_A, log σ_1..log σ_A]`.
    Coupled(MlpNet),
    Decoupled { mean: MlpNet, dev: MlpNet },
}

/// Which policy parameters a tape binding should differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyPart {
    /// Every policy parameter. Only meaningful for the coupled net.
    All,
    Mean,
    Deviation,
    Frozen,
}

#[derive(Debug, Clone)]
pub enum BoundPolicy {
    Coupled(BoundMlp),
    Decoupled { mean: BoundMlp, dev: BoundMlp },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    nets: PolicyNets,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

/// Log-density of the squashed action `tanh(u)` for one dimension, where
/// `u ~ N(mu, exp(log_std))`.
pub fn squashed_log_density(u: f64, mu: f64, log_std: f64) -> f64 {
    let z = (u - mu) * (-log_std).exp();
    let t = u.tanh();
    -0.5 * z * z - log_std - HALF_LOG_2PI - (-(t * t) + (1.0 + SQUASH_EPS)).ln()
}

fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

impl SquashedGaussianPolicy {
    pub fn from_nets(nets: PolicyNets, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        let a = action_low.len();
        ensure_dim("policy action bounds", a, action_high.len())?;
        match &nets {
            PolicyNets::Coupled(n) => ensure_dim("coupled policy output", 2 * a, n.output_dim())?,
            PolicyNets::Decoupled { mean, dev } => {
                ensure_dim("mean network output", a, mean.output_dim())?;
                ensure_dim("deviation network output", a, dev.output_dim())?;
                ensure_dim("deviation network input", mean.input_dim(), dev.input_dim())?;
            }
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::InvalidConfig("policy needs finite bounds with low < high".into()));
        }
        Ok(Self {
            nets,
            action_low,
            action_high,
        })
    }

    pub fn new<R: Rng + ?Sized>(
        mode: PolicyMode,
        state_dim: usize,
        hidden: &[usize],
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let a = action_low.len();
        let sizes = |out: usize| {
            let mut s = vec![state_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let nets = match mode {
            PolicyMode::Coupled => PolicyNets::Coupled(MlpNet::new(&sizes(2 * a), rng)?),
            PolicyMode::Decoupled => PolicyNets::Decoupled {
                mean: MlpNet::new(&sizes(a), rng)?,
                dev: MlpNet::new(&sizes(a), rng)?,
            },
        };
        Self::from_nets(nets, action_low, action_high)
    }

    pub fn mode(&self) -> PolicyMode {
        match self.nets {
            PolicyNets::Coupled(_) => PolicyMode::Coupled,
            PolicyNets::Decoupled { .. } => PolicyMode::Decoupled,
        }
    }

    pub fn nets(&self) -> &PolicyNets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut PolicyNets {
        &mut self.nets
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn state_dim(&self) -> usize {
        match &self.nets {
            PolicyNets::Coupled(n) => n.input_dim(),
            PolicyNets::Decoupled { mean, .. } => mean.input_dim(),
        }
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    /// `(center, half_range)` rows mapping `(−1, 1)` onto the action bounds.
    pub fn action_affine(&self) -> (Array2<f64>, Array2<f64>) {
        let a = self.action_dim();
        let center = Array2::from_shape_fn((1, a), |(_, j)| 0.5 * (self.action_low[j] + self.action_high[j]));
        let half = Array2::from_shape_fn((1, a), |(_, j)| 0.5 * (self.action_high[j] - self.action_low[j]));
        (center, half)
    }

    /// Map squashed actions in `(−1, 1)` to environment units.
    pub fn to_env(&self, squashed: &Array2<f64>) -> Array2<f64> {
        let (center, half) = self.action_affine();
        squashed * &half + &center
    }

    /// Pre-squash mean and clamped log standard deviation for each row.
    pub fn heads(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let a = self.action_dim();
        let (mu, mut log_std) = match &self.nets {
            PolicyNets::Coupled(n) => {
                let out = n.forward_batch(states)?;
                let (mu, ls) = out.view().split_at(Axis(1), a);
                (mu.to_owned(), ls.to_owned())
            }
            PolicyNets::Decoupled { mean, dev } => (mean.forward_batch(states)?, dev.forward_batch(states)?),
        };
        log_std.mapv_inplace(clamp_log_std);
        if mu.iter().chain(log_std.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "policy network output for {} state(s)",
                states.nrows()
            )));
        }
        Ok((mu, log_std))
    }

    /// Reparameterized samples for fixed standard-normal `noise` (`B×A`):
    /// environment-scale actions and `B×1` log-densities.
    pub fn sample_with_noise(
        &self,
        states: ArrayView2<f64>,
        noise: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (mu, log_std) = self.heads(states)?;
        let u = &mu + &(log_std.mapv(f64::exp) * noise);
        let mut logp = Array2::zeros((u.nrows(), 1));
        for i in 0..u.nrows() {
            logp[[i, 0]] = (0..u.ncols())
                .map(|j| squashed_log_density(u[[i, j]], mu[[i, j]], log_std[[i, j]]))
                .sum();
        }
        Ok((self.to_env(&u.mapv(f64::tanh)), logp))
    }

    /// `a = tanh(μ + σ·ε)` mapped to the action bounds, with its log-density.
    pub fn policy_sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        ensure_dim("policy_sample state", self.state_dim(), state.len())?;
        let noise = standard_normal((1, self.action_dim()), rng);
        let s = ArrayView2::from_shape((1, state.len()), state).unwrap();
        let (a, logp) = self.sample_with_noise(s, &noise)?;
        Ok((a.row(0).to_vec(), logp[[0, 0]]))
    }

    /// Deterministic action `tanh(μ(s))` in environment units.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("policy_mean_action state", self.state_dim(), state.len())?;
        let s = ArrayView2::from_shape((1, state.len()), state).unwrap();
        let (mu, _) = self.heads(s)?;
        Ok(self.to_env(&mu.mapv(f64::tanh)).row(0).to_vec())
    }

    /// Bind the policy to `tape` and produce `(μ, clamped log σ)` nodes.
    pub fn heads_on_tape(&self, tape: &mut Tape, states: Var, part: PolicyPart) -> (BoundPolicy, Var, Var) {
        let a = self.action_dim();
        match &self.nets {
            PolicyNets::Coupled(n) => {
                let bound = n.bind(tape, part != PolicyPart::Frozen);
                let out = bound.forward(tape, states);
                let mu = tape.slice_cols(out, 0, a);
                let raw = tape.slice_cols(out, a, 2 * a);
                let ls = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
                (BoundPolicy::Coupled(bound), mu, ls)
            }
            PolicyNets::Decoupled { mean, dev } => {
                let train_mean = matches!(part, PolicyPart::All | PolicyPart::Mean);
                let train_dev = matches!(part, PolicyPart::All | PolicyPart::Deviation);
                let bm = mean.bind(tape, train_mean);
                let bd = dev.bind(tape, train_dev);
                let mu = bm.forward(tape, states);
                let raw = bd.forward(tape, states);
                let ls = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
                (BoundPolicy::Decoupled { mean: bm, dev: bd }, mu, ls)
            }
        }
    }

    /// Reparameterized sample on the tape: environment-scale action `B×A` and
    /// log-density `B×1`, differentiable in `mu` and `log_std`.
    pub fn sample_on_tape(&self, tape: &mut Tape, mu: Var, log_std: Var, noise: &Array2<f64>) -> (Var, Var) {
        let eps = tape.constant(noise.clone());
        let std = tape.exp(log_std);
        let step = tape.mul(std, eps);
        let u = tape.add(mu, step);

        let diff = tape.sub(u, mu);
        let neg_ls = tape.neg(log_std);
        let inv_std = tape.exp(neg_ls);
        let z = tape.mul(diff, inv_std);
        let z2 = tape.square(z);
        let half_z2 = tape.scale(z2, -0.5);
        let gauss = tape.sub(half_z2, log_std);
        let gauss = tape.offset(gauss, -HALF_LOG_2PI);

        let t = tape.tanh(u);
        let t2 = tape.square(t);
        let neg_t2 = tape.neg(t2);
        let inner = tape.offset(neg_t2, 1.0 + SQUASH_EPS);
        let corr = tape.log(inner);
        let per_dim = tape.sub(gauss, corr);
        let logp = tape.sum_cols(per_dim);

        let (center, half) = self.action_affine();
        let half = tape.constant(half);
        let center = tape.constant(center);
        let scaled = tape.mul(t, half);
        let action = tape.add(scaled, center);
        (action, logp)
    }
}

impl BoundPolicy {
    pub fn mean(&self) -> &BoundMlp {
        match self {
            BoundPolicy::Coupled(b) => b,
            BoundPolicy::Decoupled { mean, .. } => mean,
        }
    }

    pub fn dev(&self) -> &BoundMlp {
        match self {
            BoundPolicy::Coupled(b) => b,
            BoundPolicy::Decoupled { dev, .. } => dev,
        }
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn constant_policy(mu: f64, log_std: f64, low: f64, high: f64) -> SquashedGaussianPolicy {
        let mut mean = MlpNet::zeros(&[2, 4, 1]).unwrap();
        let mut dev = MlpNet::zeros(&[2, 4, 1]).unwrap();
        mean.bias_mut(1).fill(mu);
        dev.bias_mut(1).fill(log_std);
        SquashedGaussianPolicy::from_nets(PolicyNets::Decoupled { mean, dev }, vec![low], vec![high]).unwrap()
    }

    #[test]
    fn zero_noise_standard_gaussian() {
        let p = constant_policy(0.0, 0.0, -1.0, 1.0);
        let s = Array2::zeros((1, 2));
        let (a, logp) = p.sample_with_noise(s.view(), &Array2::zeros((1, 1))).unwrap();
        assert_eq!(a[[0, 0]], 0.0);
        // −½ log 2π, correction log(1 − 0 + 1e-6) ≈ 1e-6
        assert!((logp[[0, 0]] + 0.918_938_533_204_672_7).abs() < 1.1e-6);
    }

    #[test]
    fn large_mean_saturates_to_upper_bound() {
        let p = constant_policy(10.0, -5.0, -2.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (a, logp) = p.policy_sample(&[0.3, -0.1], &mut rng).unwrap();
            assert!((a[0] - 2.0).abs() < 1e-6 * 2.0);
            assert!(a[0] <= 2.0);
            assert!(logp.is_finite());
        }
    }

    #[test]
    fn log_std_clamped() {
        let p = constant_policy(0.0, 50.0, -1.0, 1.0);
        let (_, ls) = p.heads(Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(ls[[0, 0]], LOG_STD_MAX);
        let p = constant_policy(0.0, -50.0, -1.0, 1.0);
        let (_, ls) = p.heads(Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(ls[[0, 0]], LOG_STD_MIN);
    }

    #[test]
    fn sampled_actions_strictly_inside_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SquashedGaussianPolicy::new(PolicyMode::Coupled, 3, &[8], vec![-2.0], vec![2.0], &mut rng).unwrap();
        for _ in 0..500 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (a, logp) = p.policy_sample(&s, &mut rng).unwrap();
            assert!(a[0] > -2.0 - 1e-12 && a[0] < 2.0 + 1e-12);
            assert!(logp.is_finite());
        }
    }

    #[test]
    fn mean_action_is_zero_noise_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SquashedGaussianPolicy::new(PolicyMode::Decoupled, 2, &[8], vec![-1.0, 0.0], vec![1.0, 4.0], &mut rng)
            .unwrap();
        let state = [0.4, -0.9];
        let det = p.mean_action(&state).unwrap();
        assert_eq!(det, p.mean_action(&state).unwrap());
        // σ → 1e-8 limit: shrink the deviation head by forcing log σ = ln 1e-8.
        let mut tiny = p.clone();
        if let PolicyNets::Decoupled { dev, .. } = tiny.nets_mut() {
            for l in 0..dev.num_layers() {
                dev.weight_mut(l).fill(0.0);
                dev.bias_mut(l).fill(0.0);
            }
            dev.bias_mut(dev.num_layers() - 1).fill(1e-8_f64.ln());
        }
        let (a, _) = tiny.policy_sample(&state, &mut rng).unwrap();
        for (x, y) in a.iter().zip(&det) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_mean_net_acts_at_midpoint() {
        let p = constant_policy(0.0, 0.0, -3.0, 1.0);
        assert_eq!(p.mean_action(&[5.0, 5.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn tape_sample_matches_plain_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [PolicyMode::Coupled, PolicyMode::Decoupled] {
            let p = SquashedGaussianPolicy::new(mode, 3, &[8, 8], vec![-2.0, -1.0], vec![2.0, 1.0], &mut rng).unwrap();
            let states = standard_normal((5, 3), &mut rng);
            let noise = standard_normal((5, 2), &mut rng);
            let (a, logp) = p.sample_with_noise(states.view(), &noise).unwrap();
            let mut tape = Tape::new();
            let sv = tape.constant(states.clone());
            let (_, mu, ls) = p.heads_on_tape(&mut tape, sv, PolicyPart::Frozen);
            let (ta, tl) = p.sample_on_tape(&mut tape, mu, ls, &noise);
            for (x, y) in tape.value(ta).iter().zip(a.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in tape.value(tl).iter().zip(logp.iter()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_nets_rejected() {
        let mean = MlpNet::zeros(&[2, 1]).unwrap();
        let dev = MlpNet::zeros(&[3, 1]).unwrap();
        assert!(SquashedGaussianPolicy::from_nets(PolicyNets::Decoupled { mean, dev }, vec![-1.0], vec![1.0]).is_err());
        let net = MlpNet::zeros(&[2, 1]).unwrap();
        assert!(SquashedGaussianPolicy::from_nets(PolicyNets::Coupled(net), vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let p = constant_policy(f64::NAN, 0.0, -1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(p.policy_sample(&[0.0, 0.0], &mut rng), Err(Error::NonFinite(_))));
    }
}

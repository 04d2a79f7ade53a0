use ndarray::{concatenate, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::Result;
use crate::nn::{MlpNet, Tape, Var};

/// The soft Q estimate the policy is improved against.
///
/// Agents use [`TwinCritic`] (minimum of two learned Q networks); tests can
/// install analytic critics.
pub trait SoftCritic {
    /// `B×1` Q values for row-aligned states and environment-scale actions.
    fn min_q(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Same quantity on a tape with the critic parameters frozen; gradients
    /// flow into `actions`.
    fn min_q_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Var;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub q1: MlpNet,
    pub q2: MlpNet,
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let sizes = q_sizes(state_dim, action_dim, hidden);
        Ok(Self {
            q1: MlpNet::new(&sizes, rng)?,
            q2: MlpNet::new(&sizes, rng)?,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            q1: self.q2.clone(),
            q2: self.q1.clone(),
        }
    }
}

pub(crate) fn q_sizes(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![state_dim + action_dim];
    s.extend_from_slice(hidden);
    s.push(1);
    s
}

pub(crate) fn state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("state/action row counts")
}

impl SoftCritic for TwinCritic {
    fn min_q(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = state_action(states, actions);
        let mut a = self.q1.forward_batch(x.view())?;
        let b = self.q2.forward_batch(x.view())?;
        Zip::from(&mut a).and(&b).for_each(|a, &b| *a = a.min(b));
        Ok(a)
    }

    fn min_q_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Var {
        let x = tape.concat_cols(states, actions);
        let b1 = self.q1.bind(tape, false);
        let b2 = self.q2.bind(tape, false);
        let y1 = b1.forward(tape, x);
        let y2 = b2.forward(tape, x);
        tape.min(y1, y2)
    }
}

/// Twin soft Q networks, the soft V network and its Polyak-averaged copy.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    pub twin: TwinCritic,
    pub v: MlpNet,
    pub v_target: MlpNet,
}

impl CriticEnsemble {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let twin = TwinCritic::new(state_dim, action_dim, hidden, rng)?;
        let mut v_sizes = vec![state_dim];
        v_sizes.extend_from_slice(hidden);
        v_sizes.push(1);
        let v = MlpNet::new(&v_sizes, rng)?;
        Ok(Self {
            twin,
            v_target: v.clone(),
            v,
        })
    }

    /// `ψ′ ← τψ + (1 − τ)ψ′`
    pub fn polyak_update(&mut self, tau: f64) {
        self.v_target.polyak_from(&self.v, tau);
    }
}

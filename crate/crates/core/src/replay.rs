//! Fixed-capacity FIFO experience buffer with uniform sampling.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::stack_rows;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Executed action in environment units.
    pub action: Vec<f64>,
    /// Reward after scaling.
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal transition. Time-limit truncations are stored as `false`.
    pub done: bool,
}

/// Ring buffer; once full, each push overwrites the oldest transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_index: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            write_index: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.write_index
        };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// Uniform with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
            .collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        Ok(Batch::from_transitions(&self.sample(batch_size, rng)?))
    }

    /// Debug dump: one CSV line per transition, oldest first, columns
    /// `s0..s{n-1}, a0..a{m-1}, reward, s'0..s'{n-1}, done` with `done` as 0/1.
    /// No header row.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<()> {
        for t in self.iter() {
            let mut fields: Vec<String> = Vec::new();
            fields.extend(t.state.iter().map(f64::to_string));
            fields.extend(t.action.iter().map(f64::to_string));
            fields.push(t.reward.to_string());
            fields.extend(t.next_state.iter().map(f64::to_string));
            fields.push(u8::from(t.done).to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// A minibatch laid out as row-per-transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    /// `B×1`
    pub rewards: Array2<f64>,
    pub next_states: Array2<f64>,
    /// `B×1`, 1.0 for terminal transitions.
    pub dones: Array2<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let col = |f: &dyn Fn(&Transition) -> f64| {
            Array2::from_shape_fn((ts.len(), 1), |(i, _)| f(ts[i]))
        };
        Self {
            states: stack_rows(&ts.iter().map(|t| t.state.clone()).collect::<Vec<_>>()),
            actions: stack_rows(&ts.iter().map(|t| t.action.clone()).collect::<Vec<_>>()),
            rewards: col(&|t| t.reward),
            next_states: stack_rows(&ts.iter().map(|t| t.next_state.clone()).collect::<Vec<_>>()),
            dones: col(&|t| if t.done { 1.0 } else { 0.0 }),
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

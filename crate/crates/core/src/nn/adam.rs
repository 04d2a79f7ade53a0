use std::io::{Read, Write};

use ndarray::{Array2, Zip};

use super::mlp::{read_f64, read_u32};
use crate::error::{Error, Result};

/// Adam moments for one parameter list, with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Array2<f64>>,
    pub second_moment: Vec<Array2<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero moments shaped like `params`; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Array2<f64>], learning_rate: f64) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub(crate) fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.step_count.to_le_bytes())?;
        for v in [self.learning_rate, self.beta1, self.beta2, self.epsilon] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.first_moment.len() as u32).to_le_bytes())?;
        for m in self.first_moment.iter().chain(&self.second_moment) {
            for v in m.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a state written by `write_to`; `params` supplies the shapes.
    pub(crate) fn read_from<R: Read + ?Sized>(r: &mut R, params: &[Array2<f64>]) -> Result<Self> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let mut state = Self::new(params, 0.0);
        state.step_count = u64::from_le_bytes(b);
        state.learning_rate = read_f64(r)?;
        state.beta1 = read_f64(r)?;
        state.beta2 = read_f64(r)?;
        state.epsilon = read_f64(r)?;
        if read_u32(r)? as usize != params.len() {
            return Err(Error::Checkpoint("optimizer/parameter count mismatch".into()));
        }
        for m in state
            .first_moment
            .iter_mut()
            .chain(state.second_moment.iter_mut())
        {
            for v in m.iter_mut() {
                *v = read_f64(r)?;
            }
        }
        Ok(state)
    }
}

/// One Adam update. A non-finite gradient rejects the whole update and
/// leaves both `params` and `state` untouched.
pub fn adam_step(params: &mut [Array2<f64>], grads: &[Array2<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step parameter lists",
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() {
            return Err(Error::DimensionMismatch {
                context: "adam_step parameter shape",
                expected: p.len(),
                got: g.len(),
            });
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {i} ({bad})")));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

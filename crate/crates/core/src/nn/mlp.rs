use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use crate::error::{ensure_dim, Error, Result};

/// Feedforward network: affine layers with ReLU between them and a linear
/// output layer.
///
/// Parameters are kept as a flat list `[W0, b0, W1, b1, ...]` where `Wl` is
/// `out×in` and `bl` is `1×out`. Optimizer state, Polyak averaging and the
/// checkpoint format all walk this list in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    sizes: Vec<usize>,
    params: Vec<Array2<f64>>,
}

const MAGIC: &[u8; 4] = b"MLP1";

impl MlpNet {
    /// Weights and biases drawn uniformly from `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for l in 0..net.num_layers() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            for p in [2 * l, 2 * l + 1] {
                net.params[p].mapv_inplace(|_| rng.random_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must list at least input and output dims, all positive; got {sizes:?}"
            )));
        }
        let params = sizes
            .windows(2)
            .flat_map(|w| [Array2::zeros((w[1], w[0])), Array2::zeros((1, w[1]))])
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of affine layers.
    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.params[2 * layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Array2<f64> {
        &self.params[2 * layer + 1]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.params[2 * layer + 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dim("MlpNet::set_flat_params", self.num_params(), flat.len())?;
        let mut it = flat.iter();
        for p in &mut self.params {
            p.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("MlpNet::forward", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-batched forward pass: `B×in → B×out`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure_dim("MlpNet::forward_batch", self.input_dim(), x.ncols())?;
        let last = self.num_layers() - 1;
        let mut h = x.to_owned();
        for l in 0..=last {
            h = h.dot(&self.weight(l).t()) + self.bias(l);
            if l < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Smallest |pre-activation| over all hidden units for the given inputs.
    /// Finite-difference checks use this to avoid straddling a ReLU kink.
    pub fn relu_margin(&self, x: ArrayView2<f64>) -> f64 {
        let last = self.num_layers() - 1;
        let mut h = x.to_owned();
        let mut margin = f64::INFINITY;
        for l in 0..last {
            h = h.dot(&self.weight(l).t()) + self.bias(l);
            margin = h.iter().fold(margin, |m, v| m.min(v.abs()));
            h.mapv_inplace(|v| v.max(0.0));
        }
        margin
    }

    /// Record the parameters on `tape`. Frozen bindings are constants, so no
    /// gradient is accumulated for them but gradients still flow through to
    /// the inputs.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let params = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        BoundMlp { params }
    }

    /// `self ← τ·source + (1 − τ)·self`
    pub fn polyak_from(&mut self, source: &MlpNet, tau: f64) {
        assert_eq!(self.sizes, source.sizes, "polyak_from: architecture mismatch");
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            ndarray::Zip::from(t)
                .and(s)
                .for_each(|t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
    }

    /// Binary layout (all integers and floats little-endian):
    ///
    /// ```text
    /// b"MLP1"
    /// u32 n                      number of layer sizes
    /// u32 × n                    layer sizes (input, hidden..., output)
    /// per layer l:
    ///   f64 × out·in             weight, row-major (row = output unit)
    ///   f64 × out                bias
    /// ```
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in &self.params {
            for v in p.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad network magic".into()));
        }
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let sizes = (0..n)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for p in &mut net.params {
            for v in p.iter_mut() {
                *v = read_f64(r)?;
            }
        }
        Ok(net)
    }
}

pub(crate) fn read_u32<R: Read + ?Sized>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read + ?Sized>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// An [`MlpNet`] whose parameters live on a [`Tape`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    params: Vec<Var>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let layers = self.params.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul_t(h, self.params[2 * l]);
            h = tape.add(z, self.params[2 * l + 1]);
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        h
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    /// Parameter gradients in [`MlpNet::params`] order; zero where the loss
    /// does not depend on a parameter.
    pub fn grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Array2<f64>> {
        self.params
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
            })
            .collect()
    }
}

/// Stack row vectors into a `B×d` matrix.
pub fn stack_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
    }
    out
}

//! Reverse-mode differentiation over matrix values.
//!
//! Every value on the tape is a 2-D `f64` array. Batches are rows, features
//! are columns, scalars are `1×1`. The operation set is deliberately small:
//! just what the actor-critic losses need.

use ndarray::{s, Array2, Axis, Zip};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// `x · wᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Concat(Var, Var),
    Slice(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]. Only leaves keep their gradient; a leaf the
/// loss does not depend on has none.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn broadcast_dim(a: usize, b: usize) -> usize {
    match (a, b) {
        _ if a == b => a,
        (1, n) | (n, 1) => n,
        _ => panic!("incompatible broadcast dimensions {a} and {b}"),
    }
}

/// Sum `grad` down to `shape`, undoing row/column broadcasting.
fn reduce_to(grad: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn binary(a: &Array2<f64>, b: &Array2<f64>, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
    let shape = (
        broadcast_dim(a.nrows(), b.nrows()),
        broadcast_dim(a.ncols(), b.ncols()),
    );
    let av = a.broadcast(shape).expect("lhs broadcast");
    let bv = b.broadcast(shape).expect("rhs broadcast");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value no gradient flows into.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `var` cut off from the graph (stop-gradient).
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).mapv(f);
        let rg = self.needs(&[x]);
        self.push(value, op, rg)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let value = self.value(x).dot(&self.value(w).t());
        let rg = self.needs(&[x, w]);
        self.push(value, Op::MatMulT(x, w), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = binary(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = binary(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = binary(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "min() shapes");
        let value = binary(self.value(a), self.value(b), f64::min);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Min(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x), |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Row-wise sum: `B×k → B×1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let value = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.needs(&[x]);
        self.push(value, Op::SumCols(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.needs(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols row counts");
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Concat(a, b), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![.., start..end]).to_owned();
        let rg = self.needs(&[x]);
        self.push(value, Op::Slice(x, start, end), rg)
    }

    /// Gradients of the `1×1` node `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut emit = |var: Var, grad: Array2<f64>| {
                if !self.nodes[var.0].requires_grad {
                    return;
                }
                match &mut grads[var.0] {
                    Some(acc) => *acc += &grad,
                    slot => *slot = Some(grad),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            let shape = |v: Var| self.nodes[v.0].value.dim();
            match node.op {
                Op::Leaf => unreachable!(),
                Op::MatMulT(x, w) => {
                    emit(x, g.dot(val(w)));
                    emit(w, g.t().dot(val(x)));
                }
                Op::Add(a, b) => {
                    emit(a, reduce_to(g.clone(), shape(a)));
                    emit(b, reduce_to(g, shape(b)));
                }
                Op::Sub(a, b) => {
                    emit(a, reduce_to(g.clone(), shape(a)));
                    emit(b, reduce_to(-g, shape(b)));
                }
                Op::Mul(a, b) => {
                    emit(a, reduce_to(binary(&g, val(b), |x, y| x * y), shape(a)));
                    emit(b, reduce_to(binary(&g, val(a), |x, y| x * y), shape(b)));
                }
                Op::Scale(x, c) => emit(x, g * c),
                Op::Offset(x) => emit(x, g),
                Op::Relu(x) => {
                    let gx = Zip::from(&g)
                        .and(val(x))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    emit(x, gx);
                }
                Op::Tanh(x) => {
                    let gx = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &y| g * (1.0 - y * y));
                    emit(x, gx);
                }
                Op::Exp(x) => emit(x, g * &node.value),
                Op::Log(x) => emit(x, g / val(x)),
                Op::Square(x) => emit(x, g * val(x) * 2.0),
                Op::Clamp(x, lo, hi) => {
                    let gx = Zip::from(&g).and(val(x)).map_collect(|&g, &x| {
                        if (lo..=hi).contains(&x) {
                            g
                        } else {
                            0.0
                        }
                    });
                    emit(x, gx);
                }
                Op::Min(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    let ga = Zip::from(&g)
                        .and(va)
                        .and(vb)
                        .map_collect(|&g, &x, &y| if x <= y { g } else { 0.0 });
                    let gb = Zip::from(&g)
                        .and(va)
                        .and(vb)
                        .map_collect(|&g, &x, &y| if x <= y { 0.0 } else { g });
                    emit(a, ga);
                    emit(b, gb);
                }
                Op::SumCols(x) => {
                    let gx = g.broadcast(shape(x)).expect("sum_cols grad").to_owned();
                    emit(x, gx);
                }
                Op::Sum(x) => emit(x, Array2::from_elem(shape(x), g[[0, 0]])),
                Op::Mean(x) => {
                    let n = val(x).len() as f64;
                    emit(x, Array2::from_elem(shape(x), g[[0, 0]] / n));
                }
                Op::Concat(a, b) => {
                    let split = shape(a).1;
                    emit(a, g.slice(s![.., ..split]).to_owned());
                    emit(b, g.slice(s![.., split..]).to_owned());
                }
                Op::Slice(x, start, end) => {
                    let mut gx = Array2::zeros(shape(x));
                    gx.slice_mut(s![.., start..end]).assign(&g);
                    emit(x, gx);
                }
            }
        }
        Gradients { grads }
    }
}

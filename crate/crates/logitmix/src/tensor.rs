//! Dense f64 tensors and a per-pass reverse-mode autodiff tape.
//!
//! The tape is built during one forward pass, consumed by [`Tape::backward`],
//! and then discarded. Parameters live outside the tape as plain [`Tensor`]s;
//! each training step inserts them as gradient-tracking leaves and reads the
//! gradients back out after the backward sweep.

use crate::error::{Error, Result};

/// Dense row-major array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::invalid(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                n,
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.len() <= 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.values[i * cols..(i + 1) * cols]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Operation tags, used for dispatch and shape-mismatch diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    AddBiasBroadcast,
    ScalarMul,
    Relu,
    LogSoftmax,
    Sum,
    Mean,
    L2Norm,
    Subtract,
    Transpose,
    MulConst,
    RowL2Norms,
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddBiasBroadcast(Var, Var),
    ScalarMul(Var, f64),
    Relu(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    Subtract(Var, Var),
    Transpose(Var),
    /// Elementwise product with a constant (no gradient to the constant).
    MulConst(Var, Tensor),
    RowL2Norms(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Per-forward-pass autodiff tape. Nodes form a DAG where inputs always
/// reference strictly earlier nodes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Insert a leaf tensor. Gradients accumulate into leaves with
    /// `requires_grad` set; read them back with [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf (or any tracked node) after backward.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Matrix product of `[m x k]` and `[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = va[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * vb[p * n + j];
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Op::Matmul(a, b), value, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(Error::BadShape {
                op: "transpose",
                shape: s.to_vec(),
            });
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(x).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(Op::Transpose(x), value, rg))
    }

    fn elementwise_pair(&mut self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("add", a, b)?;
        let values: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor {
            shape: self.value(a).shape().to_vec(),
            values,
        };
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn subtract(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("subtract", a, b)?;
        let values: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor {
            shape: self.value(a).shape().to_vec(),
            values,
        };
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Op::Subtract(a, b), value, rg))
    }

    /// `[B x K] + [K]`, bias added to every row.
    pub fn add_bias_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias_broadcast",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let cols = sx[1];
        let bv = self.value(bias).values().to_vec();
        let values: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % cols])
            .collect();
        let value = Tensor {
            shape: sx.to_vec(),
            values,
        };
        let rg = self.tracked(&[x, bias]);
        Ok(self.push(Op::AddBiasBroadcast(x, bias), value, rg))
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Var {
        let values: Vec<f64> = self.value(x).values().iter().map(|v| v * c).collect();
        let value = Tensor {
            shape: self.value(x).shape().to_vec(),
            values,
        };
        let rg = self.tracked(&[x]);
        self.push(Op::ScalarMul(x, c), value, rg)
    }

    /// Elementwise product with a constant tensor; no gradient flows to `c`.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul_const",
                lhs: self.value(x).shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let values: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .zip(c.values())
            .map(|(a, b)| a * b)
            .collect();
        let value = Tensor {
            shape: self.value(x).shape().to_vec(),
            values,
        };
        let rg = self.tracked(&[x]);
        Ok(self.push(Op::MulConst(x, c.clone()), value, rg))
    }

    /// Derivative at 0 is defined as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let values: Vec<f64> = self.value(x).values().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor {
            shape: self.value(x).shape().to_vec(),
            values,
        };
        let rg = self.tracked(&[x]);
        self.push(Op::Relu(x), value, rg)
    }

    /// Row-wise log-softmax over the last axis of a `[K]` or `[B x K]` tensor,
    /// with max-subtraction stabilization.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.is_empty() || s.len() > 2 {
            return Err(Error::BadShape {
                op: "log_softmax",
                shape: s.to_vec(),
            });
        }
        let cols = *s.last().unwrap();
        let v = self.value(x).values();
        let mut out = Vec::with_capacity(v.len());
        for row in v.chunks(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|z| z - lse));
        }
        let value = Tensor {
            shape: s.to_vec(),
            values: out,
        };
        let rg = self.tracked(&[x]);
        Ok(self.push(Op::LogSoftmax(x), value, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).values().iter().sum();
        let rg = self.tracked(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(total), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let total: f64 = self.value(x).values().iter().sum();
        let rg = self.tracked(&[x]);
        self.push(Op::Mean(x), Tensor::scalar(total / n), rg)
    }

    /// Euclidean norm of all elements; gradient at the origin is defined as 0.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let norm = self
            .value(x)
            .values()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let rg = self.tracked(&[x]);
        self.push(Op::L2Norm(x), Tensor::scalar(norm), rg)
    }

    /// Euclidean norm of each row of a `[B x K]` tensor (a `[K]` vector is one
    /// row); gradient at a zero row is defined as 0.
    pub fn row_l2_norms(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.is_empty() || s.len() > 2 {
            return Err(Error::BadShape {
                op: "row_l2_norms",
                shape: s.to_vec(),
            });
        }
        let cols = *s.last().unwrap();
        let rows = self.value(x).len() / cols;
        let values: Vec<f64> = self
            .value(x)
            .values()
            .chunks(cols)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.tracked(&[x]);
        Ok(self.push(Op::RowL2Norms(x), Tensor::new(vec![rows], values)?, rg))
    }

    /// Uniform dispatch by tag. `scalar_mul` reads its coefficient from the
    /// second input, which must be a scalar.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity_err = |want: usize| {
            Err(Error::invalid(format!(
                "{kind:?} expects {want} inputs, got {}",
                inputs.len()
            )))
        };
        match kind {
            OpKind::Matmul => match inputs {
                [a, b] => self.matmul(*a, *b),
                _ => arity_err(2),
            },
            OpKind::Add => match inputs {
                [a, b] => self.add(*a, *b),
                _ => arity_err(2),
            },
            OpKind::Subtract => match inputs {
                [a, b] => self.subtract(*a, *b),
                _ => arity_err(2),
            },
            OpKind::AddBiasBroadcast => match inputs {
                [a, b] => self.add_bias_broadcast(*a, *b),
                _ => arity_err(2),
            },
            OpKind::ScalarMul => match inputs {
                [a, c] => {
                    let cv = self.value(*c);
                    if !cv.is_scalar() {
                        return Err(Error::BadShape {
                            op: "scalar_mul",
                            shape: cv.shape().to_vec(),
                        });
                    }
                    let c = cv.scalar_value();
                    Ok(self.scalar_mul(*a, c))
                }
                _ => arity_err(2),
            },
            OpKind::MulConst => match inputs {
                [a, c] => {
                    let c = self.value(*c).clone();
                    self.mul_const(*a, &c)
                }
                _ => arity_err(2),
            },
            OpKind::Relu => match inputs {
                [a] => Ok(self.relu(*a)),
                _ => arity_err(1),
            },
            OpKind::LogSoftmax => match inputs {
                [a] => self.log_softmax(*a),
                _ => arity_err(1),
            },
            OpKind::Sum => match inputs {
                [a] => Ok(self.sum(*a)),
                _ => arity_err(1),
            },
            OpKind::Mean => match inputs {
                [a] => Ok(self.mean(*a)),
                _ => arity_err(1),
            },
            OpKind::L2Norm => match inputs {
                [a] => Ok(self.l2_norm(*a)),
                _ => arity_err(1),
            },
            OpKind::Transpose => match inputs {
                [a] => self.transpose(*a),
                _ => arity_err(1),
            },
            OpKind::RowL2Norms => match inputs {
                [a] => self.row_l2_norms(*a),
                _ => arity_err(1),
            },
        }
    }

    /// Reverse sweep from a scalar output. Gradients accumulate into every
    /// tracked node; call again without reset and contributions sum.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(Error::NonScalarBackward {
                shape: out.value.shape().to_vec(),
            });
        }
        if !out.requires_grad {
            return Err(Error::invalid(
                "backward on an output with no gradient-tracking inputs".to_string(),
            ));
        }
        // Local adjoints for the sweep; merged into node grads at the end so
        // repeated backward calls accumulate.
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(vec![1.0]);

        for id in (0..self.nodes.len()).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.accumulate_node(id, &g, &mut adj);
            let len = self.nodes[id].value.len();
            let slot = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; len]);
            for (s, v) in slot.iter_mut().zip(&g) {
                *s += v;
            }
        }
        Ok(())
    }

    /// Propagate the adjoint `g` of node `id` to its inputs.
    fn accumulate_node(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let add_to = |adj: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>, this: &Tape| {
            if !this.nodes[v.0].requires_grad {
                return;
            }
            let slot =
                adj[v.0].get_or_insert_with(|| vec![0.0; this.nodes[v.0].value.len()]);
            for (s, c) in slot.iter_mut().zip(contrib) {
                *s += c;
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let va = self.value(*a).values();
                let vb = self.value(*b).values();
                // dA = G B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * vb[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                // dB = A^T G
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = va[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                add_to(adj, *a, da, self);
                add_to(adj, *b, db, self);
            }
            Op::Transpose(x) => {
                let s = self.value(*x).shape();
                let (m, n) = (s[0], s[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                add_to(adj, *x, dx, self);
            }
            Op::Add(a, b) => {
                add_to(adj, *a, g.to_vec(), self);
                add_to(adj, *b, g.to_vec(), self);
            }
            Op::Subtract(a, b) => {
                add_to(adj, *a, g.to_vec(), self);
                add_to(adj, *b, g.iter().map(|v| -v).collect(), self);
            }
            Op::AddBiasBroadcast(x, bias) => {
                let cols = self.value(*bias).len();
                let mut db = vec![0.0; cols];
                for (i, v) in g.iter().enumerate() {
                    db[i % cols] += v;
                }
                add_to(adj, *x, g.to_vec(), self);
                add_to(adj, *bias, db, self);
            }
            Op::ScalarMul(x, c) => {
                add_to(adj, *x, g.iter().map(|v| v * c).collect(), self);
            }
            Op::MulConst(x, c) => {
                let dx: Vec<f64> = g.iter().zip(c.values()).map(|(v, w)| v * w).collect();
                add_to(adj, *x, dx, self);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).values();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(v, &x)| if x > 0.0 { *v } else { 0.0 })
                    .collect();
                add_to(adj, *x, dx, self);
            }
            Op::LogSoftmax(x) => {
                let cols = *self.value(*x).shape().last().unwrap();
                let yv = self.nodes[id].value.values();
                let mut dx = vec![0.0; yv.len()];
                for (r, (grow, yrow)) in g.chunks(cols).zip(yv.chunks(cols)).enumerate() {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..cols {
                        dx[r * cols + j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                add_to(adj, *x, dx, self);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                add_to(adj, *x, vec![g[0]; n], self);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                add_to(adj, *x, vec![g[0] / n as f64; n], self);
            }
            Op::RowL2Norms(x) => {
                let cols = *self.value(*x).shape().last().unwrap();
                let xv = self.value(*x).values();
                let norms = self.nodes[id].value.values();
                let mut dx = vec![0.0; xv.len()];
                for (r, row) in xv.chunks(cols).enumerate() {
                    if norms[r] == 0.0 {
                        continue;
                    }
                    for j in 0..cols {
                        dx[r * cols + j] = g[r] * row[j] / norms[r];
                    }
                }
                add_to(adj, *x, dx, self);
            }
            Op::L2Norm(x) => {
                let norm = self.nodes[id].value.scalar_value();
                let xv = self.value(*x).values();
                let dx: Vec<f64> = if norm == 0.0 {
                    vec![0.0; xv.len()]
                } else {
                    xv.iter().map(|v| g[0] * v / norm).collect()
                };
                add_to(adj, *x, dx, self);
            }
        }
    }
}

/// Max relative error between reverse-mode and central-finite-difference
/// gradients of a scalar-valued function, over all input coordinates.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::NonScalarBackward {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.scalar_value())
    };

    // Reverse-mode gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::NonScalarBackward {
            shape: tape.value(out).shape().to_vec(),
        });
    }
    tape.backward(out)?;

    let mut max_err: f64 = 0.0;
    for (ti, t) in inputs.iter().enumerate() {
        let ad = tape
            .grad(vars[ti])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        for coord in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].values_mut()[coord] += step;
            let mut minus = inputs.to_vec();
            minus[ti].values_mut()[coord] -= step;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            let err = (ad[coord] - fd).abs() / fd.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

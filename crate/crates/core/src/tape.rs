//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! append a node holding the output tensor, the handles of its inputs and
//! whatever was saved for the backward rule. Since nodes can only refer to
//! earlier handles, the record is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use loran_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![3.0]).unwrap());
//! let y = tape.hadamard(x, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::tensor::{matmul_kernel, Tensor};

/// Index of a node on its tape.
pub type NodeId = usize;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(NodeId);

impl Var {
    pub fn id(self) -> NodeId {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddColumn(Var, Var),
    Transpose(Var),
    /// Elementwise map; `deriv` holds f'(x) per entry.
    Elementwise { input: Var, deriv: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    accumulate: bool,
    backpropagated: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose repeated `backward` calls add into existing gradients
    /// instead of failing.
    pub fn accumulating() -> Self {
        Self {
            accumulate: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Clears every gradient so the next `backward` starts fresh.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            *node.value.grad_slot() = None;
        }
        self.backpropagated = false;
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        value.set_node(Some(id));
        *value.grad_slot() = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Hadamard(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scaled(c);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Scale(a, c), rg))
    }

    /// `a[i, j] + col[i]`: adds a length-`rows` vector to every column.
    pub fn add_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.len() != ta.rows() {
            return Err(Error::shape("add_column", ta.shape(), tc.shape()));
        }
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(idx, v)| v + tc.data()[idx / cols])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, col]);
        Ok(self.push(out, Op::AddColumn(a, col), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Applies an activation elementwise, saving its derivative for backward.
    pub fn map_unary(&mut self, x: Var, f: &Activation) -> Result<Var> {
        f.validate()?;
        let f = *f;
        Ok(self.map_with(x, move |v| f.eval(v), move |v| f.deriv(v)))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_with(
        &mut self,
        x: Var,
        value: impl Fn(f64) -> f64,
        deriv: impl Fn(f64) -> f64,
    ) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| value(v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        let saved = if rg {
            tx.data().iter().map(|&v| deriv(v)).collect()
        } else {
            Vec::new()
        };
        self.push(
            out,
            Op::Elementwise {
                input: x,
                deriv: saved,
            },
            rg,
        )
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.map_with(x, f64::sin, f64::cos)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits` (`n × C`), using a max-shifted log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = (t.rows(), t.cols());
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", t.shape(), &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &v in row {
                z += (v - max).exp();
            }
            let log_z = z.ln();
            for (j, &v) in row.iter().enumerate() {
                probs[i * c + j] = (v - max - log_z).exp();
            }
            total += log_z - (row[label] - max);
        }
        let loss = total / n as f64;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Populates the gradient of every node that depends on a leaf with
    /// d`loss`/d`node`.
    ///
    /// A second call without [`Tape::zero_grad`] fails unless the tape was
    /// created with [`Tape::accumulating`], in which case gradients add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        if self.backpropagated && !self.accumulate {
            return Err(Error::GradientsPopulated);
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut adj);
            let slot = self.nodes[id].value.grad_slot();
            match slot {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v),
                None => *slot = Some(g),
            }
        }
        self.backpropagated = true;
        Ok(())
    }

    fn propagate(&self, id: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ
                    let bt = tb.transpose();
                    send(*a, matmul_kernel(g, bt.data(), m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dC
                    let at = ta.transpose();
                    send(*b, matmul_kernel(at.data(), g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                send(*b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::AddColumn(a, col) => {
                send(*a, g.to_vec());
                let cols = self.value(*a).cols();
                let summed = g.chunks(cols).map(|r| r.iter().sum()).collect();
                send(*col, summed);
            }
            Op::Transpose(a) => {
                let out = &node.value;
                let gt = Tensor::matrix(out.rows(), out.cols(), g.to_vec())
                    .expect("gradient matches output")
                    .transpose();
                send(*a, gt.into_data());
            }
            Op::Elementwise { input, deriv } => {
                send(*input, g.iter().zip(deriv).map(|(x, d)| x * d).collect());
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let c = self.value(*logits).cols();
                let n = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0] / n).collect();
                for (i, &label) in labels.iter().enumerate() {
                    d[i * c + label] -= g[0] / n;
                }
                send(*logits, d);
            }
        }
    }
}

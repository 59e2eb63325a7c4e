//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in creation order, which is also a
//! topological order: an operation can only refer to variables that already
//! exist. [`Tape::backward`] walks the records once, newest to oldest, and
//! accumulates gradients additively, so a variable used several times
//! receives the sum of its contributions.
//!
//! A tape is built and consumed on one thread. Parameters are copied onto the
//! tape as leaves; after `backward` their gradients are read back with
//! [`Tape::grad`].

mod attention;
mod ops;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `b` is repeated over the leading rows of `a`.
    AddBroadcast(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    SelectRows {
        new: Var,
        prev: Var,
        take_new: Vec<bool>,
    },
    PrependRow {
        x: Var,
        row: Var,
        batch: usize,
    },
    Attention(attention::Saved<T>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

/// Recorded computation graph.
#[derive(Debug)]
pub struct Tape<T = f32> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    requires_grad: Vec<bool>,
    ops: Vec<Op<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            requires_grad: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records a leaf. Values are checked for finiteness.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.record(value, Op::Leaf, requires_grad))
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Gradient of the last `backward` target with respect to `v`, if `v`
    /// takes part in differentiation.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.values[v.0].shape().to_vec(), g.clone()))
    }

    pub fn grad_data(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires_grad.push(requires_grad);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Records a derived value; it requires a gradient when any input does.
    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.requires_grad[v.0]);
        Ok(self.record(value, op, requires_grad))
    }

    /// Populates gradients of `loss` with respect to every variable that
    /// requires one. `loss` must hold a single element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.values[loss.0].numel();
        if numel != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        if self.requires_grad[loss.0] {
            accumulate(&mut self.grads[loss.0], 1, |g| g[0] = g[0] + T::one());
            for i in (0..=loss.0).rev() {
                if !self.requires_grad[i] {
                    continue;
                }
                let (before, rest) = self.grads.split_at_mut(i);
                let Some(upstream) = rest[0].as_deref() else {
                    continue;
                };
                let mut ctx = Ctx {
                    values: &self.values,
                    requires_grad: &self.requires_grad,
                    grads: before,
                };
                ops::backprop(&self.ops[i], &self.values[i], upstream, &mut ctx);
            }
        }
        for i in 0..self.values.len() {
            if self.requires_grad[i] && matches!(self.ops[i], Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(vec![T::zero(); self.values[i].numel()]);
            }
        }
        if self.grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, numel: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); numel]);
    f(buf);
}

/// Backward context handed to each rule: read access to every value, write
/// access to the gradients of strictly older variables.
struct Ctx<'a, T> {
    values: &'a [Tensor<T>],
    requires_grad: &'a [bool],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> Ctx<'_, T> {
    fn value(&self, v: Var) -> &[T] {
        self.values[v.0].data()
    }

    fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    /// Runs `f` on the gradient buffer of `v` (allocated on first use), with
    /// read access to the forward values. Skipped when `v` needs no gradient.
    fn with_grad(&mut self, v: Var, f: impl FnOnce(&[Tensor<T>], &mut [T])) {
        if !self.requires_grad[v.0] {
            return;
        }
        let numel = self.values[v.0].numel();
        let values = self.values;
        accumulate(&mut self.grads[v.0], numel, |g| f(values, g));
    }
}

#[cfg(test)]
mod tests;

//! Fused masked multi-head scaled dot-product attention.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Ctx, Op, Tape, Var};
use crate::{Error, Real, Result, Tensor};

#[derive(Debug)]
pub(super) struct Saved<T> {
    q: Var,
    k: Var,
    v: Var,
    /// `[batch, heads, seq, seq]` attention weights.
    probs: Vec<T>,
    batch: usize,
    seq: usize,
    heads: usize,
}

impl<T: Real> Tape<T> {
    /// Self-attention over `batch` sequences of length `seq`.
    ///
    /// `q`, `k` and `v` are `[batch * seq, d]` with `d` split evenly over
    /// `heads`. Keys whose `key_valid` entry is false get zero weight. Scores
    /// are scaled by `1 / sqrt(d / heads)`. Returns the concatenated head
    /// outputs, `[batch * seq, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, key_valid: &[bool], batch: usize, heads: usize) -> Result<Var> {
        let tq = &self.values[q.0];
        let (tk, tv) = (&self.values[k.0], &self.values[v.0]);
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.ndim() != 2 {
            return Err(Error::Shape {
                op: "attention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let (rows, d) = (tq.shape()[0], tq.shape()[1]);
        if batch == 0 || rows % batch != 0 || key_valid.len() != rows {
            return Err(Error::Input(format!(
                "attention: {rows} rows cannot be split into {batch} sequences with a {}-entry mask",
                key_valid.len()
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention: width {d} not divisible by {heads} heads"
            )));
        }
        let seq = rows / batch;
        if (0..batch).any(|b| !key_valid[b * seq..(b + 1) * seq].iter().any(|&m| m)) {
            return Err(Error::Input("attention: a sequence has no valid key".into()));
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); rows * d];
        for b in 0..batch {
            let valid = &key_valid[b * seq..(b + 1) * seq];
            for h in 0..heads {
                let off = b * seq * d + h * dh;
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                T::gemm(
                    seq,
                    dh,
                    seq,
                    scale,
                    (&tq.data()[off..], d as isize, 1),
                    (&tk.data()[off..], 1, d as isize),
                    T::zero(),
                    (p, seq as isize, 1),
                );
                for row in p.chunks_exact_mut(seq) {
                    masked_softmax(row, valid);
                }
                T::gemm(
                    seq,
                    seq,
                    dh,
                    T::one(),
                    (p, seq as isize, 1),
                    (&tv.data()[off..], d as isize, 1),
                    T::zero(),
                    (&mut out[off..], d as isize, 1),
                );
            }
        }
        let saved = Saved {
            q,
            k,
            v,
            probs,
            batch,
            seq,
            heads,
        };
        self.push(
            "attention",
            Tensor::from_parts(vec![rows, d], out),
            Op::Attention(saved),
            &[q, k, v],
        )
    }

    /// Attention weights `[batch, heads, seq, seq]` recorded by an
    /// [`attention`](Self::attention) node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.ops[v.0] {
            Op::Attention(saved) => Some(&saved.probs),
            _ => None,
        }
    }
}

fn masked_softmax<T: Real>(row: &mut [T], valid: &[bool]) {
    let max = row
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(&s, _)| s)
        .fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (s, &ok) in row.iter_mut().zip(valid) {
        *s = if ok { (*s - max).exp() } else { T::zero() };
        total = total + *s;
    }
    for s in row.iter_mut() {
        *s = *s / total;
    }
}

impl<T: Real> Saved<T> {
    pub(super) fn backprop(&self, g: &[T], ctx: &mut Ctx<'_, T>) {
        let (seq, heads) = (self.seq, self.heads);
        let d = ctx.tensor(self.q).shape()[1];
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let block = seq * seq;

        // Gradient with respect to the pre-softmax scores.
        let mut dscores = vec![T::zero(); self.probs.len()];
        let vd = ctx.value(self.v);
        for b in 0..self.batch {
            for h in 0..heads {
                let off = b * seq * d + h * dh;
                let at = (b * heads + h) * block;
                let ds = &mut dscores[at..at + block];
                T::gemm(
                    seq,
                    dh,
                    seq,
                    T::one(),
                    (&g[off..], d as isize, 1),
                    (&vd[off..], 1, d as isize),
                    T::zero(),
                    (ds, seq as isize, 1),
                );
                let p = &self.probs[at..at + block];
                for (drow, prow) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                    let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                    for (x, &pv) in drow.iter_mut().zip(prow) {
                        *x = pv * (*x - dot);
                    }
                }
            }
        }

        let (q, k, v) = (self.q, self.k, self.v);
        ctx.with_grad(v, |_, gv| {
            for b in 0..self.batch {
                for h in 0..heads {
                    let off = b * seq * d + h * dh;
                    let at = (b * heads + h) * block;
                    T::gemm(
                        seq,
                        seq,
                        dh,
                        T::one(),
                        (&self.probs[at..at + block], 1, seq as isize),
                        (&g[off..], d as isize, 1),
                        T::one(),
                        (&mut gv[off..], d as isize, 1),
                    );
                }
            }
        });
        ctx.with_grad(q, |vals, gq| {
            let kd = vals[k.0].data();
            for b in 0..self.batch {
                for h in 0..heads {
                    let off = b * seq * d + h * dh;
                    let at = (b * heads + h) * block;
                    T::gemm(
                        seq,
                        seq,
                        dh,
                        scale,
                        (&dscores[at..at + block], seq as isize, 1),
                        (&kd[off..], d as isize, 1),
                        T::one(),
                        (&mut gq[off..], d as isize, 1),
                    );
                }
            }
        });
        ctx.with_grad(k, |vals, gk| {
            let qd = vals[q.0].data();
            for b in 0..self.batch {
                for h in 0..heads {
                    let off = b * seq * d + h * dh;
                    let at = (b * heads + h) * block;
                    T::gemm(
                        seq,
                        seq,
                        dh,
                        scale,
                        (&dscores[at..at + block], 1, seq as isize),
                        (&qd[off..], d as isize, 1),
                        T::one(),
                        (&mut gk[off..], d as isize, 1),
                    );
                }
            }
        });
    }
}

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Ctx, Mode, Op, Tape, Var};
use crate::{Error, Real, Result, Tensor};

const GELU_CUBIC: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Logistic function without overflow: the exponent is always non-positive.
pub fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`,
/// evaluated as `x * sigmoid(2u)` (the same function, one exponential).
pub fn gelu_tanh<T: Real>(x: T) -> T {
    x * stable_sigmoid(T::of(2.0) * gelu_arg(x))
}

fn gelu_arg<T: Real>(x: T) -> T {
    T::of(GELU_SCALE) * (x + T::of(GELU_CUBIC) * x * x * x)
}

fn gelu_tanh_grad<T: Real>(x: T) -> T {
    let s = stable_sigmoid(T::of(2.0) * gelu_arg(x));
    let du = T::of(GELU_SCALE) * (T::one() + T::of(3.0 * GELU_CUBIC) * x * x);
    s + x * T::of(2.0) * s * (T::one() - s) * du
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn matrix_dims<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Input(format!("{op}: expected a matrix, got shape {other:?}"))),
    }
}

impl<T: Real> Tape<T> {
    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.values[x.0].clone();
        let shape = value.shape().to_vec();
        let data = value.into_data().into_iter().map(f).collect();
        self.push(name, Tensor::from_parts(shape, data), op, &[x])
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(name, Tensor::from_parts(shape, data), op, &[a, b])
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (m, k) = matrix_dims("matmul", ta)?;
        let (k2, n) = matrix_dims("matmul", tb)?;
        if k != k2 {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            (ta.data(), k as isize, 1),
            (tb.data(), n as isize, 1),
            T::zero(),
            (&mut out, n as isize, 1),
        );
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` where `b` is tiled over the leading rows of `a`: a bias vector
    /// `[n]` against `[m, n]`, or a `[s, n]` table against `[b * s, n]`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let bn = tb.numel();
        if ta.last_dim() != tb.last_dim() || ta.numel() % bn != 0 {
            return Err(shape_err("add_broadcast", ta.shape(), tb.shape()));
        }
        let bd = tb.data();
        let data = ta
            .data()
            .chunks_exact(bn)
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| x + y))
            .collect();
        let shape = ta.shape().to_vec();
        self.push(
            "add_broadcast",
            Tensor::from_parts(shape, data),
            Op::AddBroadcast(a, b),
            &[a, b],
        )
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.unary("one_minus", x, |v| T::one() - v, Op::OneMinus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, stable_sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    /// GELU using the tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu_tanh, Op::Gelu(x))
    }

    /// Softmax along `axis`, computed with the row maximum subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = &self.values[x.0];
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Input(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).map(|j| src[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        self.push(
            "softmax",
            Tensor::from_parts(shape, out),
            Op::Softmax { x, outer, len, inner },
            &[x],
        )
    }

    /// Normalises each row (last axis) to zero mean and unit variance, then
    /// applies `gain` and `bias` (both of length equal to the last extent).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let t = &self.values[x.0];
        let n = t.last_dim();
        let (g, b) = (&self.values[gain.0], &self.values[bias.0]);
        if g.numel() != n || b.numel() != n {
            return Err(shape_err("layer_norm", t.shape(), g.shape()));
        }
        let rows = t.rows();
        let nf = T::of(n as f64);
        let mut xhat = vec![T::zero(); t.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let s = T::one() / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..n {
                let h = (row[j] - mean) * s;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let shape = t.shape().to_vec();
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Inverted dropout. In train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`; in eval mode
    /// (or with `p == 0`) `x` is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.values[x.0].numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random_bool(p) { T::zero() } else { keep })
            .collect();
        let t = &self.values[x.0];
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = t.shape().to_vec();
        self.push(
            "dropout",
            Tensor::from_parts(shape, data),
            Op::Dropout { x, mask },
            &[x],
        )
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let t = &self.values[x.0];
        let (rows, cols) = matrix_dims("slice_cols", t)?;
        if width == 0 || start + width > cols {
            return Err(shape_err("slice_cols", t.shape(), &[start, width]));
        }
        let data = t
            .data()
            .chunks_exact(cols)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        self.push(
            "slice_cols",
            Tensor::from_parts(vec![rows, width], data),
            Op::SliceCols { x, start },
            &[x],
        )
    }

    /// Rows `start..start + count` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let t = &self.values[x.0];
        let (rows, cols) = matrix_dims("slice_rows", t)?;
        if count == 0 || start + count > rows {
            return Err(shape_err("slice_rows", t.shape(), &[start, count]));
        }
        let data = t.data()[start * cols..(start + count) * cols].to_vec();
        self.push(
            "slice_rows",
            Tensor::from_parts(vec![count, cols], data),
            Op::SliceRows { x, start },
            &[x],
        )
    }

    /// Picks rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = &self.values[x.0];
        let (n_rows, cols) = matrix_dims("gather_rows", t)?;
        if rows.is_empty() || rows.iter().any(|&r| r >= n_rows) {
            return Err(Error::Input(format!(
                "gather_rows: indices must be non-empty and below {n_rows}"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * cols..(r + 1) * cols]);
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![rows.len(), cols], data),
            Op::GatherRows { x, rows: rows.to_vec() },
            &[x],
        )
    }

    /// Row `r` of the result is row `r` of `new` where `take_new[r]`, else
    /// row `r` of `prev`.
    pub fn select_rows(&mut self, new: Var, prev: Var, take_new: &[bool]) -> Result<Var> {
        let (tn, tp) = (&self.values[new.0], &self.values[prev.0]);
        if tn.shape() != tp.shape() || tn.rows() != take_new.len() {
            return Err(shape_err("select_rows", tn.shape(), tp.shape()));
        }
        let cols = tn.last_dim();
        let mut data = Vec::with_capacity(tn.numel());
        for (r, &pick) in take_new.iter().enumerate() {
            let src = if pick { tn } else { tp };
            data.extend_from_slice(&src.data()[r * cols..(r + 1) * cols]);
        }
        let shape = tn.shape().to_vec();
        self.push(
            "select_rows",
            Tensor::from_parts(shape, data),
            Op::SelectRows {
                new,
                prev,
                take_new: take_new.to_vec(),
            },
            &[new, prev],
        )
    }

    /// Treats `x` as `batch` consecutive blocks of rows and inserts `row`
    /// (a `[1, d]` matrix) in front of every block.
    pub fn prepend_row(&mut self, x: Var, row: Var, batch: usize) -> Result<Var> {
        let (tx, tr) = (&self.values[x.0], &self.values[row.0]);
        let (rows, cols) = matrix_dims("prepend_row", tx)?;
        if tr.shape() != [1, cols] || batch == 0 || rows % batch != 0 {
            return Err(shape_err("prepend_row", tx.shape(), tr.shape()));
        }
        let per = rows / batch;
        let mut data = Vec::with_capacity((rows + batch) * cols);
        for b in 0..batch {
            data.extend_from_slice(tr.data());
            data.extend_from_slice(&tx.data()[b * per * cols..(b + 1) * per * cols]);
        }
        self.push(
            "prepend_row",
            Tensor::from_parts(vec![rows + batch, cols], data),
            Op::PrependRow { x, row, batch },
            &[x, row],
        )
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, evaluated as
    /// `logsumexp(z) - z[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = &self.values[logits.0];
        let (b, k) = matrix_dims("cross_entropy", t)?;
        if labels.len() != b {
            return Err(shape_err("cross_entropy", t.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![T::zero(); b * k];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &t.data()[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum = row.iter().map(|&z| (z - max).exp()).sum::<T>();
            let lse = max + sum.ln();
            total = total + (lse - row[label]);
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::of(b as f64);
        self.push(
            "cross_entropy",
            Tensor::from_parts(vec![1], vec![loss]),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.values[x.0].data().iter().copied().sum::<T>();
        self.push("sum", Tensor::from_parts(vec![1], vec![s]), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.values[x.0];
        let s = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        self.push("mean", Tensor::from_parts(vec![1], vec![s]), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.values[x.0].clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }
}

/// Accumulates the contribution of one recorded op into its inputs.
pub(super) fn backprop<T: Real>(op: &Op<T>, out: &Tensor<T>, g: &[T], ctx: &mut Ctx<'_, T>) {
    let y = out.data();
    match op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (ctx.tensor(a).shape()[0], ctx.tensor(a).shape()[1]);
            let n = ctx.tensor(b).shape()[1];
            // da += g * b^T
            ctx.with_grad(a, |vals, ga| {
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    (g, n as isize, 1),
                    (vals[b.0].data(), 1, n as isize),
                    T::one(),
                    (ga, k as isize, 1),
                );
            });
            // db += a^T * g
            ctx.with_grad(b, |vals, gb| {
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    (vals[a.0].data(), 1, k as isize),
                    (g, n as isize, 1),
                    T::one(),
                    (gb, n as isize, 1),
                );
            });
        }
        &Op::Add(a, b) => {
            ctx.with_grad(a, |_, ga| add_into(ga, g));
            ctx.with_grad(b, |_, gb| add_into(gb, g));
        }
        &Op::Sub(a, b) => {
            ctx.with_grad(a, |_, ga| add_into(ga, g));
            ctx.with_grad(b, |_, gb| gb.iter_mut().zip(g).for_each(|(d, &s)| *d = *d - s));
        }
        &Op::Mul(a, b) => {
            ctx.with_grad(a, |vals, ga| {
                for ((d, &s), &o) in ga.iter_mut().zip(g).zip(vals[b.0].data()) {
                    *d = *d + s * o;
                }
            });
            ctx.with_grad(b, |vals, gb| {
                for ((d, &s), &o) in gb.iter_mut().zip(g).zip(vals[a.0].data()) {
                    *d = *d + s * o;
                }
            });
        }
        &Op::AddBroadcast(a, b) => {
            ctx.with_grad(a, |_, ga| add_into(ga, g));
            ctx.with_grad(b, |_, gb| {
                for chunk in g.chunks_exact(gb.len()) {
                    add_into(gb, chunk);
                }
            });
        }
        &Op::Scale(x, c) => ctx.with_grad(x, |_, gx| {
            gx.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s * c);
        }),
        &Op::OneMinus(x) => ctx.with_grad(x, |_, gx| {
            gx.iter_mut().zip(g).for_each(|(d, &s)| *d = *d - s);
        }),
        &Op::Sigmoid(x) => ctx.with_grad(x, |_, gx| {
            for ((d, &s), &v) in gx.iter_mut().zip(g).zip(y) {
                *d = *d + s * v * (T::one() - v);
            }
        }),
        &Op::Tanh(x) => ctx.with_grad(x, |_, gx| {
            for ((d, &s), &v) in gx.iter_mut().zip(g).zip(y) {
                *d = *d + s * (T::one() - v * v);
            }
        }),
        &Op::Gelu(x) => ctx.with_grad(x, |vals, gx| {
            for ((d, &s), &v) in gx.iter_mut().zip(g).zip(vals[x.0].data()) {
                *d = *d + s * gelu_tanh_grad(v);
            }
        }),
        &Op::Softmax { x, outer, len, inner } => ctx.with_grad(x, |_, gx| {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum::<T>();
                    for j in 0..len {
                        let at = base + j * inner;
                        gx[at] = gx[at] + y[at] * (g[at] - dot);
                    }
                }
            }
        }),
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let n = ctx.tensor(*gain).numel();
            let rows = rstd.len();
            let nf = T::of(n as f64);
            ctx.with_grad(*x, |vals, gx| {
                let gd = vals[gain.0].data();
                for r in 0..rows {
                    let span = r * n..(r + 1) * n;
                    let (gr, hr) = (&g[span.clone()], &xhat[span.clone()]);
                    let mut mean_d = T::zero();
                    let mut mean_dh = T::zero();
                    for j in 0..n {
                        let d = gr[j] * gd[j];
                        mean_d = mean_d + d;
                        mean_dh = mean_dh + d * hr[j];
                    }
                    mean_d = mean_d / nf;
                    mean_dh = mean_dh / nf;
                    for j in 0..n {
                        let d = gr[j] * gd[j];
                        gx[r * n + j] = gx[r * n + j] + rstd[r] * (d - mean_d - hr[j] * mean_dh);
                    }
                }
            });
            ctx.with_grad(*gain, |_, gg| {
                for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for j in 0..n {
                        gg[j] = gg[j] + gr[j] * hr[j];
                    }
                }
            });
            ctx.with_grad(*bias, |_, gb| {
                for gr in g.chunks_exact(n) {
                    add_into(gb, gr);
                }
            });
        }
        Op::Dropout { x, mask } => ctx.with_grad(*x, |_, gx| {
            for ((d, &s), &m) in gx.iter_mut().zip(g).zip(mask) {
                *d = *d + s * m;
            }
        }),
        &Op::SliceCols { x, start } => {
            let cols = ctx.tensor(x).shape()[1];
            let width = out.shape()[1];
            ctx.with_grad(x, |_, gx| {
                for (dst, src) in gx.chunks_exact_mut(cols).zip(g.chunks_exact(width)) {
                    add_into(&mut dst[start..start + width], src);
                }
            });
        }
        &Op::SliceRows { x, start } => {
            let cols = ctx.tensor(x).shape()[1];
            ctx.with_grad(x, |_, gx| add_into(&mut gx[start * cols..start * cols + g.len()], g));
        }
        Op::GatherRows { x, rows } => {
            let cols = out.shape()[1];
            ctx.with_grad(*x, |_, gx| {
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut gx[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                }
            });
        }
        Op::SelectRows { new, prev, take_new } => {
            let cols = out.last_dim();
            for (target, want) in [(*new, true), (*prev, false)] {
                ctx.with_grad(target, |_, gt| {
                    for (r, &pick) in take_new.iter().enumerate() {
                        if pick == want {
                            add_into(&mut gt[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                });
            }
        }
        &Op::PrependRow { x, row, batch } => {
            let cols = out.shape()[1];
            let per = ctx.tensor(x).shape()[0] / batch;
            ctx.with_grad(x, |_, gx| {
                for b in 0..batch {
                    let src = &g[(b * (per + 1) + 1) * cols..(b + 1) * (per + 1) * cols];
                    add_into(&mut gx[b * per * cols..(b + 1) * per * cols], src);
                }
            });
            ctx.with_grad(row, |_, gr| {
                for b in 0..batch {
                    let at = b * (per + 1) * cols;
                    add_into(gr, &g[at..at + cols]);
                }
            });
        }
        Op::Attention(saved) => saved.backprop(g, ctx),
        Op::CrossEntropy { logits, labels, probs } => {
            let k = ctx.tensor(*logits).shape()[1];
            let scale = g[0] / T::of(labels.len() as f64);
            ctx.with_grad(*logits, |_, gl| {
                for (r, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == label { T::one() } else { T::zero() };
                        gl[r * k + j] = gl[r * k + j] + scale * (probs[r * k + j] - onehot);
                    }
                }
            });
        }
        &Op::Sum(x) => ctx.with_grad(x, |_, gx| gx.iter_mut().for_each(|d| *d = *d + g[0])),
        &Op::Mean(x) => {
            let n = T::of(ctx.value(x).len() as f64);
            ctx.with_grad(x, |_, gx| gx.iter_mut().for_each(|d| *d = *d + g[0] / n));
        }
        &Op::Reshape(x) => ctx.with_grad(x, |_, gx| add_into(gx, g)),
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

//! Recurrent families: stacked RNN and dense (projection-first) RNN.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    frames_matrix, lengths_of, linear, rnn_head, BoundParams, DenseRnnConfig, Readout, RnnCellKind, StackedRnnConfig,
};
use crate::autodiff::{Mode, Tape, Var};
use crate::data::PaddedBatch;
use crate::{Real, Result, Tensor};

/// One recurrent layer bound to a tape.
///
/// Gate blocks are stored side by side along the columns of `w_input`,
/// `w_hidden` and `bias`: `(input, forget, cell, output)` for LSTM and
/// `(reset, update, candidate)` for GRU.
#[derive(Debug, Clone, Copy)]
pub struct RnnLayer {
    pub cell: RnnCellKind,
    pub hidden: usize,
    w_input: Var,
    bias: Var,
    /// LSTM: all four gate blocks. GRU: reset and update blocks.
    w_hidden: Var,
    /// GRU candidate block; applied to the reset-gated state.
    w_hidden_candidate: Option<Var>,
}

impl RnnLayer {
    /// Binds layer `rnn.{index}`.
    pub fn bind<T: Real>(
        tape: &mut Tape<T>,
        params: &BoundParams<'_>,
        prefix: &str,
        cell: RnnCellKind,
        hidden: usize,
    ) -> Result<Self> {
        let w_input = params.get(&format!("{prefix}.w_input"))?;
        let w_hidden = params.get(&format!("{prefix}.w_hidden"))?;
        let bias = params.get(&format!("{prefix}.bias"))?;
        let (w_hidden, w_hidden_candidate) = match cell {
            RnnCellKind::Lstm => (w_hidden, None),
            RnnCellKind::Gru => (
                tape.slice_cols(w_hidden, 0, 2 * hidden)?,
                Some(tape.slice_cols(w_hidden, 2 * hidden, hidden)?),
            ),
        };
        Ok(Self {
            cell,
            hidden,
            w_input,
            bias,
            w_hidden,
            w_hidden_candidate,
        })
    }
}

/// One LSTM step. Returns `(h, c)`.
///
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c = f * c_prev + i * g`,
/// `h = o * tanh(c)`.
pub fn lstm_cell_step<T: Real>(
    tape: &mut Tape<T>,
    layer: &RnnLayer,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let n = layer.hidden;
    let xw = tape.matmul(x, layer.w_input)?;
    let hw = tape.matmul(h_prev, layer.w_hidden)?;
    let pre = tape.add(xw, hw)?;
    let pre = tape.add_broadcast(pre, layer.bias)?;
    let i = tape.slice_cols(pre, 0, n)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(pre, n, n)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(pre, 2 * n, n)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(pre, 3 * n, n)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One GRU step.
///
/// `r, z = sigmoid(.)`, `n = tanh(x W_n + (r * h_prev) U_n + b_n)`,
/// `h = (1 - z) * h_prev + z * n`.
pub fn gru_cell_step<T: Real>(tape: &mut Tape<T>, layer: &RnnLayer, x: Var, h_prev: Var) -> Result<Var> {
    let n = layer.hidden;
    let u_candidate = layer.w_hidden_candidate.expect("GRU layers bind a candidate block");
    let xw = tape.matmul(x, layer.w_input)?;
    let xw = tape.add_broadcast(xw, layer.bias)?;
    let x_rz = tape.slice_cols(xw, 0, 2 * n)?;
    let h_rz = tape.matmul(h_prev, layer.w_hidden)?;
    let rz = tape.add(x_rz, h_rz)?;
    let rz = tape.sigmoid(rz)?;
    let r = tape.slice_cols(rz, 0, n)?;
    let z = tape.slice_cols(rz, n, n)?;
    let gated = tape.mul(r, h_prev)?;
    let h_n = tape.matmul(gated, u_candidate)?;
    let x_n = tape.slice_cols(xw, 2 * n, n)?;
    let cand = tape.add(x_n, h_n)?;
    let cand = tape.tanh(cand)?;
    let stay = tape.one_minus(z)?;
    let stay = tape.mul(stay, h_prev)?;
    let moved = tape.mul(z, cand)?;
    tape.add(stay, moved)
}

struct LayerState {
    h: Var,
    c: Option<Var>,
}

/// Runs a stack of recurrent layers over `steps` inputs produced by
/// `input_at`, returning the top layer's readout state.
fn run_stack<T: Real>(
    tape: &mut Tape<T>,
    layers: &[RnnLayer],
    lengths: &[usize],
    steps: usize,
    readout: Readout,
    mut input_at: impl FnMut(&mut Tape<T>, usize) -> Result<Var>,
) -> Result<Var> {
    let b = lengths.len();
    let mut states = Vec::with_capacity(layers.len());
    for layer in layers {
        let zeros = tape.constant(Tensor::zeros(&[b, layer.hidden]))?;
        states.push(LayerState {
            h: zeros,
            c: (layer.cell == RnnCellKind::Lstm).then_some(zeros),
        });
    }
    for t in 0..steps {
        // Rows past their length keep the previous state, so the final state
        // equals the state at each sequence's last valid step.
        let take_new: Vec<bool> = lengths.iter().map(|&n| t < n).collect();
        let masked = readout == Readout::LastValid && take_new.iter().any(|&v| !v);
        let mut x = input_at(tape, t)?;
        for (layer, state) in layers.iter().zip(states.iter_mut()) {
            let (h, c) = match layer.cell {
                RnnCellKind::Lstm => {
                    let c_prev = state.c.expect("LSTM state carries a cell");
                    let (h, c) = lstm_cell_step(tape, layer, x, state.h, c_prev)?;
                    (h, Some(c))
                }
                RnnCellKind::Gru => (gru_cell_step(tape, layer, x, state.h)?, None),
            };
            if masked {
                state.h = tape.select_rows(h, state.h, &take_new)?;
                if let (Some(c), Some(c_prev)) = (c, state.c) {
                    state.c = Some(tape.select_rows(c, c_prev, &take_new)?);
                }
            } else {
                state.h = h;
                state.c = c;
            }
            x = state.h;
        }
    }
    Ok(states.last().expect("at least one layer").h)
}

fn steps_for<T: Real>(readout: Readout, batch: &PaddedBatch<T>, lengths: &[usize]) -> usize {
    match readout {
        Readout::LastValid => lengths.iter().copied().max().unwrap_or(0),
        Readout::FinalIndex => batch.steps(),
    }
}

/// Per-step input `[B, C]` taken from a `[B * steps, C]` frame matrix.
fn step_rows(batch: usize, steps: usize, t: usize) -> Vec<usize> {
    (0..batch).map(|b| b * steps + t).collect()
}

/// Stacked RNN: recurrent layers in series, readout, dropout, two-layer head.
pub fn forward_stacked_rnn<T: Real, R: Rng + ?Sized>(
    config: &StackedRnnConfig,
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    batch: &PaddedBatch<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let lengths = lengths_of(batch)?;
    let steps = steps_for(config.readout, batch, &lengths);
    let layers = (0..config.num_layers)
        .map(|l| RnnLayer::bind(tape, params, &format!("rnn.{l}"), config.cell, config.hidden))
        .collect::<Result<Vec<_>>>()?;
    let frames = frames_matrix(tape, batch, steps)?;
    let b = batch.len();
    let top = run_stack(tape, &layers, &lengths, steps, config.readout, |tape, t| {
        tape.gather_rows(frames, &step_rows(b, steps, t))
    })?;
    rnn_head(params, tape, top, config.dropout_p, mode, rng)
}

/// Shared per-step projection `tanh(x W + b)` of the first `steps` frames,
/// as a `[B * steps, dense_out]` matrix (row `b * steps + t`).
pub fn dense_projection<T: Real>(
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    batch: &PaddedBatch<T>,
    steps: usize,
) -> Result<Var> {
    let frames = frames_matrix(tape, batch, steps)?;
    let y = linear(tape, params, "dense", frames)?;
    tape.tanh(y)
}

/// Dense RNN: shared projection, one or two recurrent layers, readout,
/// dropout, two-layer head.
pub fn forward_dense_rnn<T: Real, R: Rng + ?Sized>(
    config: &DenseRnnConfig,
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    batch: &PaddedBatch<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let lengths = lengths_of(batch)?;
    let steps = steps_for(config.readout, batch, &lengths);
    let projected = dense_projection(params, tape, batch, steps)?;
    let layers = (0..config.rnn_layers())
        .map(|l| RnnLayer::bind(tape, params, &format!("rnn.{l}"), config.cell, config.hidden))
        .collect::<Result<Vec<_>>>()?;
    let b = batch.len();
    let top = run_stack(tape, &layers, &lengths, steps, config.readout, |tape, t| {
        tape.gather_rows(projected, &step_rows(b, steps, t))
    })?;
    rnn_head(params, tape, top, config.dropout_p, mode, rng)
}

//! Catalogue of gradient checks: one case per differentiable op and one per
//! model configuration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{check, project, random_tensor, GradReport};
use crate::autodiff::{Mode, Tape, Var};
use crate::data::{pad_batch, GestureRecording, SensorFrame, MAX_READING};
use crate::models::{self, ModelKind, LN_EPS};
use crate::{rng, Result};

/// Ops must agree with finite differences to this relative error.
pub const OP_TOLERANCE: f64 = 1e-4;
/// End-to-end model losses must agree to this relative error.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// One named gradient check, run once per seed.
#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub tolerance: f64,
    run: fn(u64) -> Result<GradReport>,
}

impl Case {
    pub fn run(&self, seed: u64) -> Result<GradReport> {
        (self.run)(seed)
    }
}

impl core::fmt::Debug for Case {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Case").field("name", &self.name).finish()
    }
}

fn rand(shape: &[usize], scale: f64, seed: u64, name: &str) -> crate::Tensor<f64> {
    random_tensor(shape, scale, seed, name)
}

fn unary(seed: u64, scale: f64, op: fn(&mut Tape<f64>, Var) -> Result<Var>) -> Result<GradReport> {
    let x = rand(&[3, 4], scale, seed, "x");
    check(&[x], None, seed, |tape, v| {
        let y = op(tape, v[0])?;
        project(tape, y, seed)
    })
}

fn binary(seed: u64, op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> Result<GradReport> {
    let a = rand(&[3, 4], 1.0, seed, "a");
    let b = rand(&[3, 4], 1.0, seed, "b");
    check(&[a, b], None, seed, |tape, v| {
        let y = op(tape, v[0], v[1])?;
        project(tape, y, seed)
    })
}

fn matmul(seed: u64) -> Result<GradReport> {
    let a = rand(&[4, 3], 1.0, seed, "a");
    let b = rand(&[3, 2], 1.0, seed, "b");
    check(&[a, b], None, seed, |tape, v| {
        let y = tape.matmul(v[0], v[1])?;
        project(tape, y, seed)
    })
}

fn add_broadcast(seed: u64) -> Result<GradReport> {
    let a = rand(&[2, 3, 4], 1.0, seed, "a");
    let b = rand(&[4], 1.0, seed, "b");
    check(&[a, b], None, seed, |tape, v| {
        let y = tape.add_broadcast(v[0], v[1])?;
        project(tape, y, seed)
    })
}

fn softmax_axis(seed: u64, axis: usize) -> Result<GradReport> {
    let x = rand(&[2, 3, 4], 2.0, seed, "x");
    check(&[x], None, seed, |tape, v| {
        let y = tape.softmax(v[0], axis)?;
        project(tape, y, seed)
    })
}

fn layer_norm(seed: u64) -> Result<GradReport> {
    let x = rand(&[2, 8], 2.0, seed, "x");
    let g = rand(&[8], 1.0, seed, "gain");
    let b = rand(&[8], 1.0, seed, "bias");
    check(&[x, g, b], None, seed, |tape, v| {
        let y = tape.layer_norm(v[0], v[1], v[2], LN_EPS)?;
        project(tape, y, seed)
    })
}

fn dropout(seed: u64) -> Result<GradReport> {
    let x = rand(&[4, 5], 1.0, seed, "x");
    check(&[x], None, seed, |tape, v| {
        let mut r = rng::stream(seed, "mask");
        let y = tape.dropout(v[0], 0.3, Mode::Train, &mut r)?;
        project(tape, y, seed)
    })
}

fn slicing(seed: u64) -> Result<GradReport> {
    let x = rand(&[5, 6], 1.0, seed, "x");
    let row = rand(&[1, 3], 1.0, seed, "row");
    check(&[x, row], None, seed, |tape, v| {
        let cols = tape.slice_cols(v[0], 1, 3)?;
        let rows = tape.slice_rows(cols, 1, 4)?;
        let picked = tape.gather_rows(rows, &[3, 0, 3, 1])?;
        let with_row = tape.prepend_row(picked, v[1], 2)?;
        project(tape, with_row, seed)
    })
}

fn select_rows(seed: u64) -> Result<GradReport> {
    let a = rand(&[4, 3], 1.0, seed, "a");
    let b = rand(&[4, 3], 1.0, seed, "b");
    check(&[a, b], None, seed, |tape, v| {
        let y = tape.select_rows(v[0], v[1], &[true, false, false, true])?;
        let y = tape.tanh(y)?;
        project(tape, y, seed)
    })
}

fn attention(seed: u64) -> Result<GradReport> {
    let q = rand(&[8, 8], 1.0, seed, "q");
    let k = rand(&[8, 8], 1.0, seed, "k");
    let v = rand(&[8, 8], 1.0, seed, "v");
    let valid = [true, true, true, false, true, true, true, true];
    check(&[q, k, v], None, seed, |tape, x| {
        let y = tape.attention(x[0], x[1], x[2], &valid, 2, 2)?;
        project(tape, y, seed)
    })
}

fn cross_entropy(seed: u64) -> Result<GradReport> {
    let z = rand(&[3, 6], 2.0, seed, "z");
    check(&[z], None, seed, |tape, v| tape.cross_entropy(v[0], &[2, 5, 0]))
}

fn reductions(seed: u64) -> Result<GradReport> {
    let x = rand(&[2, 6], 1.0, seed, "x");
    check(&[x], None, seed, |tape, v| {
        let r = tape.reshape(v[0], &[3, 4])?;
        let sq = tape.mul(r, r)?;
        let m = tape.mean(sq)?;
        let s = tape.sum(r)?;
        let s = tape.scale(s, 0.25)?;
        tape.add(m, s)
    })
}

/// One check per differentiable op.
pub fn op_cases() -> Vec<Case> {
    macro_rules! case {
        ($name:expr, $f:expr) => {
            Case {
                name: $name,
                tolerance: OP_TOLERANCE,
                run: $f,
            }
        };
    }
    vec![
        case!("matmul", matmul),
        case!("add", |s| binary(s, Tape::add)),
        case!("sub", |s| binary(s, Tape::sub)),
        case!("mul", |s| binary(s, Tape::mul)),
        case!("add_broadcast", add_broadcast),
        case!("scale", |s| unary(s, 1.0, |t, x| t.scale(x, -1.7))),
        case!("one_minus", |s| unary(s, 1.0, Tape::one_minus)),
        case!("sigmoid", |s| unary(s, 4.0, Tape::sigmoid)),
        case!("tanh", |s| unary(s, 2.0, Tape::tanh)),
        case!("gelu", |s| unary(s, 3.0, Tape::gelu)),
        case!("softmax/axis0", |s| softmax_axis(s, 0)),
        case!("softmax/axis2", |s| softmax_axis(s, 2)),
        case!("layer_norm", layer_norm),
        case!("dropout", dropout),
        case!("slice_gather_prepend", slicing),
        case!("select_rows", select_rows),
        case!("attention", attention),
        case!("cross_entropy", cross_entropy),
        case!("reshape_sum_mean", reductions),
    ]
}

/// Two short recordings (unequal lengths) with random readings.
fn tiny_batch(seed: u64) -> Result<crate::data::PaddedBatch<f64>> {
    let mut r = rng::stream(seed, "gradcheck/batch");
    let recs: Vec<GestureRecording> = [(6, 3), (4, 17)]
        .iter()
        .map(|&(len, label)| GestureRecording {
            id: format!("g{label}"),
            label,
            frames: (0..len)
                .map(|_| SensorFrame::new(core::array::from_fn(|_| r.random_range(0..=MAX_READING))).unwrap())
                .collect(),
        })
        .collect();
    pad_batch(&recs, 7)
}

/// Cross-entropy of a full model on a two-sample batch against every
/// parameter tensor (a few coordinates each), in train mode with a fixed
/// dropout mask.
pub fn model_check(kind: ModelKind, seed: u64) -> Result<GradReport> {
    model_check_with(kind, seed, Some(4))
}

/// As [`model_check`] but probing every parameter coordinate.
pub fn model_check_all(kind: ModelKind, seed: u64) -> Result<GradReport> {
    model_check_with(kind, seed, None)
}

fn model_check_with(kind: ModelKind, seed: u64, coords: Option<usize>) -> Result<GradReport> {
    let config = kind.config();
    let params = models::build(&config, seed)?.cast::<f64>();
    let batch = tiny_batch(seed)?;
    let inputs: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    check(&inputs, coords, seed, |tape, vars| {
        let bound = params.bind_vars(vars.to_vec())?;
        let mut dropout = rng::stream(seed, "gradcheck/dropout");
        let logits = models::forward(&config, &bound, tape, &batch, Mode::Train, &mut dropout)?;
        tape.cross_entropy(logits, &batch.labels)
    })
}

/// One check per model configuration.
pub fn model_cases() -> Vec<Case> {
    macro_rules! case {
        ($kind:expr) => {
            Case {
                name: $kind.name(),
                tolerance: MODEL_TOLERANCE,
                run: |s| model_check($kind, s),
            }
        };
    }
    vec![
        case!(ModelKind::DenseLstm),
        case!(ModelKind::DenseGru),
        case!(ModelKind::StackedLstm),
        case!(ModelKind::StackedGru),
        case!(ModelKind::DenseStackedLstm),
        case!(ModelKind::DenseStackedGru),
        case!(ModelKind::Encoder),
    ]
}

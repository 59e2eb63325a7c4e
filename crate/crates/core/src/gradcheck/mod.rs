//! Central finite-difference gradient checking in double precision.
//!
//! The numeric side only ever evaluates the function forward, so it is an
//! oracle independent of every backward rule.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::{rng, Result, Tensor};

mod suite;
pub use suite::{model_cases, model_check, model_check_all, op_cases, Case, MODEL_TOLERANCE, OP_TOLERANCE};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]. Central differences of an O(1)
/// loss at [`STEP`] carry roundoff near `1e-10`, so gradients that are
/// exactly zero in theory are compared on an absolute scale instead.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Worst>,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences.
///
/// `f` receives a fresh tape and one trainable leaf per input. With
/// `coords = Some(n)`, at most `n` coordinates per input are probed, spread
/// evenly plus a seeded random offset; otherwise every coordinate is.
pub fn check<F>(inputs: &[Tensor<f64>], coords: Option<usize>, seed: u64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (mut tape, vars, out) = eval(inputs)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad_data(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut rng = rng::stream(seed, "gradcheck");
    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (input, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let picks: Vec<usize> = match coords {
            Some(k) if k < n => {
                let offset = rng.random_range(0..n);
                (0..k).map(|j| (offset + j * n / k) % n).collect()
            }
            _ => (0..n).collect(),
        };
        for index in picks {
            let base = t.data()[index];
            probe[input].data_mut()[index] = base + STEP;
            let (tp, _, op) = eval(&probe)?;
            let plus = tp.value(op).data()[0];
            probe[input].data_mut()[index] = base - STEP;
            let (tm, _, om) = eval(&probe)?;
            let minus = tm.value(om).data()[0];
            probe[input].data_mut()[index] = base;

            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[input][index];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Worst {
                    input,
                    index,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Reduces any tensor to a scalar by a fixed random projection, so every
/// output element contributes a distinct weight to the checked gradient.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = rng::stream(seed, "projection");
    let weights = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let w = tape.constant(weights)?;
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Random tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, seed: u64, name: &str) -> Tensor<f64> {
    let mut rng = rng::stream(seed, name);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

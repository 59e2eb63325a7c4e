//! Pre-LN transformer encoder with a learnable classification token.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{frames_matrix, lengths_of, linear, BoundParams, EncoderConfig, LN_EPS};
use crate::autodiff::{Mode, Tape, Var};
use crate::data::PaddedBatch;
use crate::{Error, Real, Result};

fn norm<T: Real>(tape: &mut Tape<T>, params: &BoundParams<'_>, prefix: &str, x: Var) -> Result<Var> {
    let gain = params.get(&format!("{prefix}.gain"))?;
    let bias = params.get(&format!("{prefix}.bias"))?;
    tape.layer_norm(x, gain, bias, T::of(LN_EPS))
}

/// Runs the embedding and all blocks; returns the residual stream after
/// every block (`[B * seq, D]` each) together with the attention nodes.
///
/// The sequence is trimmed to the longest valid sample, which is exact
/// because padded keys receive zero attention weight.
pub fn encoder_layer_outputs<T: Real, R: Rng + ?Sized>(
    config: &EncoderConfig,
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    batch: &PaddedBatch<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<Var>, Vec<Var>, usize)> {
    let lengths = lengths_of(batch)?;
    let steps = lengths.iter().copied().max().unwrap_or(0);
    if steps > config.max_len {
        return Err(Error::Input(format!(
            "sequence of {steps} steps exceeds the encoder maximum of {}",
            config.max_len
        )));
    }
    let b = batch.len();
    let seq = steps + 1;
    let p = config.dropout_p;

    let frames = frames_matrix(tape, batch, steps)?;
    let tokens = tape.matmul(frames, params.get("embed.weight")?)?;
    let y = tape.prepend_row(tokens, params.get("embed.cls")?, b)?;
    let pos = tape.slice_rows(params.get("embed.pos")?, 0, seq)?;
    let y = tape.add_broadcast(y, pos)?;
    let mut y = tape.dropout(y, p, mode, rng)?;

    let key_valid: Vec<bool> = lengths
        .iter()
        .flat_map(|&n| (0..seq).map(move |s| s == 0 || s <= n))
        .collect();

    let mut outputs = Vec::with_capacity(config.num_layers);
    let mut attention = Vec::with_capacity(config.num_layers);
    for layer in 0..config.num_layers {
        let pre = format!("blocks.{layer}");
        let a = norm(tape, params, &format!("{pre}.ln1"), y)?;
        let q = linear(tape, params, &format!("{pre}.attn.q"), a)?;
        let k = linear(tape, params, &format!("{pre}.attn.k"), a)?;
        let v = linear(tape, params, &format!("{pre}.attn.v"), a)?;
        let att = tape.attention(q, k, v, &key_valid, b, config.num_heads)?;
        attention.push(att);
        let o = linear(tape, params, &format!("{pre}.attn.out"), att)?;
        let o = tape.dropout(o, p, mode, rng)?;
        y = tape.add(y, o)?;

        let m = norm(tape, params, &format!("{pre}.ln2"), y)?;
        let f = linear(tape, params, &format!("{pre}.mlp.fc1"), m)?;
        let f = tape.gelu(f)?;
        let f = linear(tape, params, &format!("{pre}.mlp.fc2"), f)?;
        let f = tape.dropout(f, p, mode, rng)?;
        y = tape.add(y, f)?;
        outputs.push(y);
    }
    Ok((outputs, attention, seq))
}

/// Encoder classifier: logits from the final-normalised classification
/// token through a single linear layer.
pub fn forward_encoder<T: Real, R: Rng + ?Sized>(
    config: &EncoderConfig,
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    batch: &PaddedBatch<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let (outputs, _, seq) = encoder_layer_outputs(config, params, tape, batch, mode, rng)?;
    let last = *outputs
        .last()
        .ok_or_else(|| Error::Config("encoder has no layers".into()))?;
    let cls_rows: Vec<usize> = (0..batch.len()).map(|b| b * seq).collect();
    let cls = tape.gather_rows(last, &cls_rows)?;
    let cls = norm(tape, params, "final_ln", cls)?;
    linear(tape, params, "head", cls)
}

//! The four classifier families: stacked RNN, dense RNN, dense-stacked RNN
//! and a pre-LN transformer encoder with a classification token.
//!
//! Every model maps a padded batch `[B, T, 5]` plus its mask to class logits
//! `[B, classes]`; softmax is applied by the loss or by [`probabilities`].

mod encoder;
mod rnn;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Mode, Tape, Var};
use crate::data::{PaddedBatch, CHANNELS, MAX_STEPS};
use crate::{rng, Error, Real, Result, Tensor};

pub use encoder::{encoder_layer_outputs, forward_encoder};
pub use rnn::{dense_projection, forward_dense_rnn, forward_stacked_rnn, gru_cell_step, lstm_cell_step, RnnLayer};

/// Number of output classes of the standard vocabulary.
pub const NUM_CLASSES: usize = 36;
/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RnnCellKind {
    Lstm,
    Gru,
}

impl RnnCellKind {
    /// Gate blocks per cell: input, forget, cell, output for LSTM; reset,
    /// update, candidate for GRU.
    pub fn gates(self) -> usize {
        match self {
            Self::Lstm => 4,
            Self::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lstm => "lstm",
            Self::Gru => "gru",
        }
    }
}

/// Which hidden state the recurrent families classify from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Readout {
    /// State at each sequence's last unpadded step.
    #[default]
    LastValid,
    /// State after the final padded index, running the cells over padding.
    FinalIndex,
}

impl Readout {
    pub fn name(self) -> &'static str {
        match self {
            Self::LastValid => "last_valid",
            Self::FinalIndex => "final_index",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "last_valid" => Some(Self::LastValid),
            "final_index" => Some(Self::FinalIndex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedRnnConfig {
    pub cell: RnnCellKind,
    pub num_layers: usize,
    pub input_channels: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub readout: Readout,
}

impl StackedRnnConfig {
    pub fn benchmark(cell: RnnCellKind) -> Self {
        Self {
            cell,
            num_layers: 2,
            input_channels: CHANNELS,
            hidden: 64,
            head_hidden: 128,
            num_classes: NUM_CLASSES,
            dropout_p: 0.2,
            readout: Readout::LastValid,
        }
    }
}

/// Shared per-step projection followed by one (`stacked == false`) or two
/// recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRnnConfig {
    pub cell: RnnCellKind,
    pub stacked: bool,
    pub input_channels: usize,
    pub dense_out: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub readout: Readout,
}

impl DenseRnnConfig {
    pub fn benchmark(cell: RnnCellKind, stacked: bool) -> Self {
        Self {
            cell,
            stacked,
            input_channels: CHANNELS,
            dense_out: 128,
            hidden: 64,
            head_hidden: 128,
            num_classes: NUM_CLASSES,
            dropout_p: 0.2,
            readout: Readout::LastValid,
        }
    }

    pub fn rnn_layers(&self) -> usize {
        if self.stacked {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub max_len: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
}

impl EncoderConfig {
    pub fn benchmark() -> Self {
        Self {
            embed_dim: 32,
            num_layers: 5,
            num_heads: 4,
            mlp_hidden: 128,
            max_len: MAX_STEPS,
            input_channels: CHANNELS,
            num_classes: NUM_CLASSES,
            dropout_p: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    StackedRnn(StackedRnnConfig),
    DenseRnn(DenseRnnConfig),
    Encoder(EncoderConfig),
}

/// The seven benchmark configurations by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    DenseLstm,
    DenseGru,
    StackedLstm,
    StackedGru,
    DenseStackedLstm,
    DenseStackedGru,
    Encoder,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        Self::DenseLstm,
        Self::DenseGru,
        Self::StackedLstm,
        Self::StackedGru,
        Self::DenseStackedLstm,
        Self::DenseStackedGru,
        Self::Encoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::DenseLstm => "dense_lstm",
            Self::DenseGru => "dense_gru",
            Self::StackedLstm => "stacked_lstm",
            Self::StackedGru => "stacked_gru",
            Self::DenseStackedLstm => "dense_stacked_lstm",
            Self::DenseStackedGru => "dense_stacked_gru",
            Self::Encoder => "encoder",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn config(self) -> ModelConfig {
        use RnnCellKind::{Gru, Lstm};
        match self {
            Self::DenseLstm => ModelConfig::DenseRnn(DenseRnnConfig::benchmark(Lstm, false)),
            Self::DenseGru => ModelConfig::DenseRnn(DenseRnnConfig::benchmark(Gru, false)),
            Self::StackedLstm => ModelConfig::StackedRnn(StackedRnnConfig::benchmark(Lstm)),
            Self::StackedGru => ModelConfig::StackedRnn(StackedRnnConfig::benchmark(Gru)),
            Self::DenseStackedLstm => ModelConfig::DenseRnn(DenseRnnConfig::benchmark(Lstm, true)),
            Self::DenseStackedGru => ModelConfig::DenseRnn(DenseRnnConfig::benchmark(Gru, true)),
            Self::Encoder => ModelConfig::Encoder(EncoderConfig::benchmark()),
        }
    }

    /// Default training batch size for the family.
    pub fn batch_size(self) -> usize {
        match self {
            Self::Encoder => 256,
            _ => 64,
        }
    }
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            Self::StackedRnn(c) => c.num_classes,
            Self::DenseRnn(c) => c.num_classes,
            Self::Encoder(c) => c.num_classes,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            Self::StackedRnn(c) => c.input_channels,
            Self::DenseRnn(c) => c.input_channels,
            Self::Encoder(c) => c.input_channels,
        }
    }

    pub fn dropout_p(&self) -> f64 {
        match self {
            Self::StackedRnn(c) => c.dropout_p,
            Self::DenseRnn(c) => c.dropout_p,
            Self::Encoder(c) => c.dropout_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        let p = self.dropout_p();
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        positive("num_classes", self.num_classes())?;
        positive("input_channels", self.input_channels())?;
        match self {
            Self::StackedRnn(c) => {
                positive("num_layers", c.num_layers)?;
                positive("hidden", c.hidden)?;
                positive("head_hidden", c.head_hidden)
            }
            Self::DenseRnn(c) => {
                positive("dense_out", c.dense_out)?;
                positive("hidden", c.hidden)?;
                positive("head_hidden", c.head_hidden)
            }
            Self::Encoder(c) => {
                positive("embed_dim", c.embed_dim)?;
                positive("num_layers", c.num_layers)?;
                positive("num_heads", c.num_heads)?;
                positive("mlp_hidden", c.mlp_hidden)?;
                positive("max_len", c.max_len)?;
                if c.embed_dim % c.num_heads != 0 {
                    return Err(Error::Config(format!(
                        "embed_dim {} not divisible by num_heads {}",
                        c.embed_dim, c.num_heads
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Exact number of trainable scalars.
///
/// Conventions: one bias vector per recurrent gate; bias-free input
/// embedding; layer norms carry gain and bias; attention query, key, value
/// and output projections each carry a bias.
pub fn count_parameters(config: &ModelConfig) -> usize {
    fn rnn(cell: RnnCellKind, input: usize, hidden: usize) -> usize {
        cell.gates() * (input * hidden + hidden * hidden + hidden)
    }
    fn linear(input: usize, output: usize) -> usize {
        input * output + output
    }
    match config {
        ModelConfig::StackedRnn(c) => {
            let first = rnn(c.cell, c.input_channels, c.hidden);
            let rest = (c.num_layers - 1) * rnn(c.cell, c.hidden, c.hidden);
            first + rest + linear(c.hidden, c.head_hidden) + linear(c.head_hidden, c.num_classes)
        }
        ModelConfig::DenseRnn(c) => {
            let extra = if c.stacked { rnn(c.cell, c.hidden, c.hidden) } else { 0 };
            linear(c.input_channels, c.dense_out)
                + rnn(c.cell, c.dense_out, c.hidden)
                + extra
                + linear(c.hidden, c.head_hidden)
                + linear(c.head_hidden, c.num_classes)
        }
        ModelConfig::Encoder(c) => {
            let d = c.embed_dim;
            let embedding = c.input_channels * d + d + (c.max_len + 1) * d;
            let block = 4 * linear(d, d) + 2 * 2 * d + linear(d, c.mlp_hidden) + linear(c.mlp_hidden, d);
            embedding + c.num_layers * block + 2 * d + linear(d, c.num_classes)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zeros,
    Ones,
    /// Glorot-uniform with the given fan-in and fan-out.
    Glorot(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn rnn_specs(out: &mut Vec<ParamSpec>, prefix: &str, cell: RnnCellKind, input: usize, hidden: usize) {
    let g = cell.gates();
    // Gate blocks are concatenated along columns; fans are per gate.
    out.push(spec(
        format!("{prefix}.w_input"),
        &[input, g * hidden],
        Init::Glorot(input, hidden),
    ));
    out.push(spec(
        format!("{prefix}.w_hidden"),
        &[hidden, g * hidden],
        Init::Glorot(hidden, hidden),
    ));
    out.push(spec(format!("{prefix}.bias"), &[g * hidden], Init::Zeros));
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, output: usize) {
    out.push(spec(
        format!("{prefix}.weight"),
        &[input, output],
        Init::Glorot(input, output),
    ));
    out.push(spec(format!("{prefix}.bias"), &[output], Init::Zeros));
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    out.push(spec(format!("{prefix}.gain"), &[width], Init::Ones));
    out.push(spec(format!("{prefix}.bias"), &[width], Init::Zeros));
}

fn head_specs(out: &mut Vec<ParamSpec>, hidden: usize, head_hidden: usize, classes: usize) {
    linear_specs(out, "head.hidden", hidden, head_hidden);
    linear_specs(out, "head.out", head_hidden, classes);
}

/// Parameter layout in canonical order.
fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    match config {
        ModelConfig::StackedRnn(c) => {
            for layer in 0..c.num_layers {
                let input = if layer == 0 { c.input_channels } else { c.hidden };
                rnn_specs(&mut out, &format!("rnn.{layer}"), c.cell, input, c.hidden);
            }
            head_specs(&mut out, c.hidden, c.head_hidden, c.num_classes);
        }
        ModelConfig::DenseRnn(c) => {
            linear_specs(&mut out, "dense", c.input_channels, c.dense_out);
            for layer in 0..c.rnn_layers() {
                let input = if layer == 0 { c.dense_out } else { c.hidden };
                rnn_specs(&mut out, &format!("rnn.{layer}"), c.cell, input, c.hidden);
            }
            head_specs(&mut out, c.hidden, c.head_hidden, c.num_classes);
        }
        ModelConfig::Encoder(c) => {
            let d = c.embed_dim;
            out.push(spec(
                "embed.weight",
                &[c.input_channels, d],
                Init::Glorot(c.input_channels, d),
            ));
            out.push(spec("embed.cls", &[1, d], Init::Glorot(1, d)));
            out.push(spec("embed.pos", &[c.max_len + 1, d], Init::Glorot(c.max_len + 1, d)));
            for layer in 0..c.num_layers {
                let p = format!("blocks.{layer}");
                norm_specs(&mut out, &format!("{p}.ln1"), d);
                for proj in ["q", "k", "v", "out"] {
                    linear_specs(&mut out, &format!("{p}.attn.{proj}"), d, d);
                }
                norm_specs(&mut out, &format!("{p}.ln2"), d);
                linear_specs(&mut out, &format!("{p}.mlp.fc1"), d, c.mlp_hidden);
                linear_specs(&mut out, &format!("{p}.mlp.fc2"), c.mlp_hidden, d);
            }
            norm_specs(&mut out, "final_ln", d);
            linear_specs(&mut out, "head", d, c.num_classes);
        }
    }
    out
}

/// Named parameter tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ModelParams<T> {
    /// Assembles parameters from named tensors, rejecting duplicate names.
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter `{name}`")));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Checks that names and shapes match the layout of `config`.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config);
        if specs.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.entries.len()
            )));
        }
        for (s, (name, t)) in specs.iter().zip(&self.entries) {
            if &s.name != name || s.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected `{}` {:?}, found `{name}` {:?}",
                    s.name,
                    s.shape,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundParams<'_>> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams {
            index: &self.index,
            vars,
        })
    }
    /// Addresses `vars` (already on a tape, in canonical order) by name.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundParams<'_>> {
        if vars.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "expected {} parameter vars, found {}",
                self.entries.len(),
                vars.len()
            )));
        }
        Ok(BoundParams {
            index: &self.index,
            vars,
        })
    }
}

/// Parameters recorded on a tape, addressable by name.
#[derive(Debug)]
pub struct BoundParams<'p> {
    index: &'p BTreeMap<String, usize>,
    vars: Vec<Var>,
}

impl BoundParams<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in canonical parameter order (zeros where untouched).
    pub fn gradients<T: Real>(&self, tape: &Tape<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|&v| {
                tape.grad_data(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()])
            })
            .collect()
    }
}

/// Initialises a parameter set: Glorot-uniform weights, zero biases, unit
/// layer-norm gains. Deterministic in `seed`.
pub fn build(config: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    config.validate()?;
    let mut rng = rng::stream(seed, "init");
    let entries = param_specs(config)
        .into_iter()
        .map(|s| {
            let tensor = match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, 1.0),
                Init::Glorot(fan_in, fan_out) => {
                    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                    Tensor::from_fn(&s.shape, |_| rng.random_range(-limit..limit) as f32)
                }
            };
            (s.name, tensor)
        })
        .collect();
    ModelParams::from_entries(entries)
}

fn lengths_of<T: Real>(batch: &PaddedBatch<T>) -> Result<Vec<usize>> {
    let steps = batch.steps();
    if batch.mask.shape() != [batch.len(), steps] {
        return Err(Error::Shape {
            op: "mask",
            lhs: batch.data.shape().to_vec(),
            rhs: batch.mask.shape().to_vec(),
        });
    }
    batch
        .mask
        .data()
        .chunks_exact(steps)
        .enumerate()
        .map(|(b, row)| {
            let n = row.iter().take_while(|&&m| m > T::zero()).count();
            if n == 0 {
                Err(Error::Input(format!("sample {b} has no valid time step")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Frames `0..steps` of every sample as a constant `[B * steps, C]` matrix.
fn frames_matrix<T: Real>(tape: &mut Tape<T>, batch: &PaddedBatch<T>, steps: usize) -> Result<Var> {
    let (b, total, c) = (batch.len(), batch.steps(), batch.data.shape()[2]);
    let mut data = Vec::with_capacity(b * steps * c);
    for i in 0..b {
        data.extend_from_slice(&batch.data.data()[i * total * c..(i * total + steps) * c]);
    }
    tape.constant(Tensor::from_parts(vec![b * steps, c], data))
}

fn check_channels<T: Real>(config: &ModelConfig, batch: &PaddedBatch<T>) -> Result<()> {
    let shape = batch.data.shape();
    if shape.len() != 3 || shape[2] != config.input_channels() || shape[0] != batch.labels.len() {
        return Err(Error::Shape {
            op: "forward",
            lhs: shape.to_vec(),
            rhs: vec![batch.labels.len(), batch.steps(), config.input_channels()],
        });
    }
    Ok(())
}

/// Class logits `[B, classes]` for any family.
pub fn forward<T: Real, R: Rng + ?Sized>(
    config: &ModelConfig,
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    batch: &PaddedBatch<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    check_channels(config, batch)?;
    match config {
        ModelConfig::StackedRnn(c) => forward_stacked_rnn(c, params, tape, batch, mode, rng),
        ModelConfig::DenseRnn(c) => forward_dense_rnn(c, params, tape, batch, mode, rng),
        ModelConfig::Encoder(c) => forward_encoder(c, params, tape, batch, mode, rng),
    }
}

/// Eval-mode logits without gradient bookkeeping.
pub fn logits<T: Real>(config: &ModelConfig, params: &ModelParams<T>, batch: &PaddedBatch<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    // Eval mode draws nothing from the generator.
    let mut rng = rng::stream(0, "eval");
    let out = forward(config, &bound, &mut tape, batch, Mode::Eval, &mut rng)?;
    Ok(tape.value(out).clone())
}

/// Row-wise softmax of logits.
pub fn probabilities<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone())?;
    let p = tape.softmax(x, logits.ndim() - 1)?;
    Ok(tape.value(p).clone())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Shared classifier head: dropout, tanh hidden layer, linear output.
fn rnn_head<T: Real, R: Rng + ?Sized>(
    params: &BoundParams<'_>,
    tape: &mut Tape<T>,
    readout: Var,
    dropout_p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let x = tape.dropout(readout, dropout_p, mode, rng)?;
    let h = linear(tape, params, "head.hidden", x)?;
    let h = tape.tanh(h)?;
    linear(tape, params, "head.out", h)
}

fn linear<T: Real>(tape: &mut Tape<T>, params: &BoundParams<'_>, prefix: &str, x: Var) -> Result<Var> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add_broadcast(y, b)
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests;

//! Gesture recordings: vocabulary, validation, padding, stratified folds and
//! a synthetic stand-in dataset.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng;
use crate::{Error, Real, Result, Tensor};

/// Sensor channels per frame, one flex sensor per finger.
pub const CHANNELS: usize = 5;
/// Largest 10-bit ADC reading.
pub const MAX_READING: u16 = 1023;
/// Padded time dimension of every batch.
pub const MAX_STEPS: usize = 79;
/// Shortest retained recording, in frames.
pub const MIN_FRAMES: usize = 50;
/// Longest retained recording, in frames. Equal to [`MAX_STEPS`] so every
/// retained recording fits the padded batch.
pub const MAX_FRAMES: usize = MAX_STEPS;

const STANDARD_LABELS: [&str; 36] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W",
    "X", "Y", "Z", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10",
];

/// Ordered class names; the position of a name is its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl Default for LabelVocab {
    fn default() -> Self {
        Self::standard()
    }
}

impl LabelVocab {
    /// Letters `A`..`Z` followed by digits `1`..`10`.
    pub fn standard() -> Self {
        Self {
            names: STANDARD_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("label vocabulary is empty".into()));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.contains([',', '\n', '\r']) {
                return Err(Error::Config(format!("invalid label name {name:?}")));
            }
            if names[..i].contains(name) {
                return Err(Error::Config(format!("duplicate label name {name:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One time step of raw readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorFrame([u16; CHANNELS]);

impl SensorFrame {
    pub fn new(values: [u16; CHANNELS]) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > MAX_READING) {
            return Err(Error::Input(format!("sensor reading {v} outside [0, {MAX_READING}]")));
        }
        Ok(Self(values))
    }

    pub fn channels(&self) -> [u16; CHANNELS] {
        self.0
    }

    pub fn sum(&self) -> u32 {
        self.0.iter().map(|&v| u32::from(v)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GestureRecording {
    pub id: String,
    pub label: usize,
    pub frames: Vec<SensorFrame>,
}

impl GestureRecording {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Whether the length falls inside the retention window.
    pub fn is_retained(&self) -> bool {
        is_retained_length(self.len())
    }
}

pub fn is_retained_length(len: usize) -> bool {
    (MIN_FRAMES..=MAX_FRAMES).contains(&len)
}

/// Maps a raw reading onto `[0, 1]`.
pub fn scale_reading<T: Real>(v: u16) -> T {
    T::of(f64::from(v) / f64::from(MAX_READING))
}

/// Zero-padded, scaled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch<T = f32> {
    /// `[batch, steps, CHANNELS]`
    pub data: Tensor<T>,
    /// `[batch, steps]`, ones over each valid prefix.
    pub mask: Tensor<T>,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl<T: Real> PaddedBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Padded time dimension.
    pub fn steps(&self) -> usize {
        self.data.shape()[1]
    }

    /// Gathers samples into a new batch.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Input("cannot select an empty batch".into()));
        }
        let steps = self.steps();
        let frame = steps * CHANNELS;
        let mut data = Vec::with_capacity(indices.len() * frame);
        let mut mask = Vec::with_capacity(indices.len() * steps);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!("sample {i} out of range")));
            }
            data.extend_from_slice(&self.data.data()[i * frame..(i + 1) * frame]);
            mask.extend_from_slice(&self.mask.data()[i * steps..(i + 1) * steps]);
        }
        Ok(Self {
            data: Tensor::from_parts(vec![indices.len(), steps, CHANNELS], data),
            mask: Tensor::from_parts(vec![indices.len(), steps], mask),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            lengths: indices.iter().map(|&i| self.lengths[i]).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> PaddedBatch<U> {
        PaddedBatch {
            data: self.data.cast(),
            mask: self.mask.cast(),
            labels: self.labels.clone(),
            lengths: self.lengths.clone(),
        }
    }

    /// Same samples padded to `steps` time steps (at least the longest
    /// sample).
    pub fn repad(&self, steps: usize) -> Result<Self> {
        let longest = self.lengths.iter().copied().max().unwrap_or(0);
        if steps < longest || steps == 0 {
            return Err(Error::Input(format!(
                "cannot pad to {steps} steps, longest sample has {longest}"
            )));
        }
        let old = self.steps();
        let b = self.len();
        let mut data = vec![T::zero(); b * steps * CHANNELS];
        let mut mask = vec![T::zero(); b * steps];
        for i in 0..b {
            let n = self.lengths[i];
            data[i * steps * CHANNELS..(i * steps + n) * CHANNELS]
                .copy_from_slice(&self.data.data()[i * old * CHANNELS..(i * old + n) * CHANNELS]);
            mask[i * steps..i * steps + n].fill(T::one());
        }
        Ok(Self {
            data: Tensor::from_parts(vec![b, steps, CHANNELS], data),
            mask: Tensor::from_parts(vec![b, steps], mask),
            labels: self.labels.clone(),
            lengths: self.lengths.clone(),
        })
    }
}

/// Scales readings by `1 / 1023` and zero-pads every recording to `max_steps`.
pub fn pad_batch<'a, T: Real>(
    recordings: impl IntoIterator<Item = &'a GestureRecording>,
    max_steps: usize,
) -> Result<PaddedBatch<T>> {
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut labels = Vec::new();
    let mut lengths = Vec::new();
    for rec in recordings {
        let n = rec.len();
        if n == 0 || n > max_steps {
            return Err(Error::Input(format!(
                "recording {} has {n} frames, expected 1..={max_steps}",
                rec.id
            )));
        }
        for frame in &rec.frames {
            data.extend(frame.channels().iter().map(|&v| scale_reading::<T>(v)));
        }
        data.resize(data.len() + (max_steps - n) * CHANNELS, T::zero());
        mask.extend((0..max_steps).map(|t| if t < n { T::one() } else { T::zero() }));
        labels.push(rec.label);
        lengths.push(n);
    }
    if labels.is_empty() {
        return Err(Error::Input("cannot pad an empty batch".into()));
    }
    let b = labels.len();
    Ok(PaddedBatch {
        data: Tensor::from_parts(vec![b, max_steps, CHANNELS], data),
        mask: Tensor::from_parts(vec![b, max_steps], mask),
        labels,
        lengths,
    })
}

/// Partition of sample indices into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn held_out(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }
}

/// Stratified k-fold assignment.
///
/// Each class's indices are shuffled and dealt round-robin over the folds,
/// starting where the previous class stopped, so per-class counts differ by
/// at most one between folds and fold sizes stay balanced overall.
pub fn stratified_k_fold(labels: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut rng = rng::stream(seed, "folds");
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldSplit { folds })
}

/// Noise-free template value of `class` on every channel at each of `len`
/// steps, in raw reading units.
///
/// Each channel is an offset plus a sinusoid over the normalised gesture
/// time. Offsets come from the base-3 digits of the class index, so every
/// pair of classes differs by at least 250 counts on some channel; amplitude,
/// frequency and phase vary with class and channel.
pub fn synth_template(class: usize, len: usize) -> Vec<[f64; CHANNELS]> {
    let mut params = [(0.0, 0.0, 0.0, 0.0); CHANNELS];
    let mut digits = class;
    for (j, p) in params.iter_mut().enumerate() {
        let offset = 150.0 + 250.0 * (digits % 3) as f64;
        digits /= 3;
        let amplitude = 40.0 + 20.0 * ((class + 2 * j) % 5) as f64;
        let cycles = 0.5 + 0.5 * ((3 * class + j) % 4) as f64;
        let phase = TAU * ((7 * class + 3 * j) % 11) as f64 / 11.0;
        *p = (offset, amplitude, cycles, phase);
    }
    let span = (len.max(2) - 1) as f64;
    (0..len)
        .map(|t| {
            let tau = t as f64 / span;
            let mut frame = [0.0; CHANNELS];
            for (v, &(offset, amplitude, cycles, phase)) in frame.iter_mut().zip(&params) {
                *v = offset + amplitude * libm::sin(TAU * cycles * tau + phase);
            }
            frame
        })
        .collect()
}

/// Synthetic dataset: `n_per_class` recordings for each of the 36 standard
/// classes, each a class template over a random retained length plus
/// Gaussian noise, rounded and clamped to the reading range.
pub fn synth_generate(n_per_class: usize, noise_std: f64, seed: u64) -> Result<Vec<GestureRecording>> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("invalid noise standard deviation {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::Config(format!("invalid noise standard deviation {noise_std}")))?;
    let vocab = LabelVocab::standard();
    let mut rng = rng::stream(seed, "synth");
    let mut out = Vec::with_capacity(vocab.len() * n_per_class);
    for class in 0..vocab.len() {
        for i in 0..n_per_class {
            let len = rng.random_range(MIN_FRAMES..=MAX_FRAMES);
            let frames = synth_template(class, len)
                .into_iter()
                .map(|tpl| {
                    let mut raw = [0u16; CHANNELS];
                    for (r, &v) in raw.iter_mut().zip(&tpl) {
                        let noisy = libm::round(v + noise.sample(&mut rng));
                        *r = noisy.clamp(0.0, f64::from(MAX_READING)) as u16;
                    }
                    SensorFrame(raw)
                })
                .collect();
            out.push(GestureRecording {
                id: format!("synth-{}-{i:04}", vocab.name(class).unwrap_or("?")),
                label: class,
                frames,
            });
        }
    }
    Ok(out)
}

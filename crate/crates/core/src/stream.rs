//! Live-glove pipeline pieces that need no clock: frame parsing, threshold
//! segmentation and classification of completed segments.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{pad_batch, GestureRecording, LabelVocab, SensorFrame, CHANNELS, MAX_FRAMES, MAX_STEPS, MIN_FRAMES};
use crate::models::{self, argmax, ModelConfig, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("expected {CHANNELS} comma-separated values, got {found}: {line:?}")]
    Arity { line: String, found: usize },
    #[error("not a decimal integer {token:?}: {line:?}")]
    NotInteger { line: String, token: String },
    #[error("reading {value} outside [0, 1023]: {line:?}")]
    OutOfRange { line: String, value: u64 },
}

/// Parses one wire line `s1,s2,s3,s4,s5` (surrounding whitespace and a
/// trailing newline are ignored).
pub fn parse_frame(line: &str) -> Result<SensorFrame, FrameError> {
    let trimmed = line.trim();
    let tokens: Vec<&str> = trimmed.split(',').map(str::trim).collect();
    if tokens.len() != CHANNELS {
        return Err(FrameError::Arity {
            line: trimmed.to_string(),
            found: tokens.len(),
        });
    }
    let mut values = [0u16; CHANNELS];
    for (slot, token) in values.iter_mut().zip(&tokens) {
        if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
            return Err(FrameError::NotInteger {
                line: trimmed.to_string(),
                token: token.to_string(),
            });
        }
        let value: u64 = token.parse().map_err(|_| FrameError::OutOfRange {
            line: trimmed.to_string(),
            value: u64::MAX,
        })?;
        if value > u64::from(crate::data::MAX_READING) {
            return Err(FrameError::OutOfRange {
                line: trimmed.to_string(),
                value,
            });
        }
        *slot = value as u16;
    }
    Ok(SensorFrame::new(values).expect("range checked above"))
}

/// Renders a frame in wire format, without the newline.
pub fn format_frame(frame: &SensorFrame) -> String {
    let [a, b, c, d, e] = frame.channels();
    format!("{a},{b},{c},{d},{e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterConfig {
    /// A frame is active when its channel sum is strictly below this.
    pub activation_threshold: u32,
    pub min_len: usize,
    pub max_len: usize,
    pub sample_rate_hz: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            activation_threshold: 5000,
            min_len: MIN_FRAMES,
            max_len: MAX_FRAMES,
            sample_rate_hz: 36.0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "segment lengths must satisfy 0 < min_len <= max_len, got {}..={}",
                self.min_len, self.max_len
            )));
        }
        let ceiling = CHANNELS as u32 * u32::from(crate::data::MAX_READING);
        if self.activation_threshold == 0 || self.activation_threshold > ceiling {
            return Err(Error::Config(format!(
                "activation threshold must lie in (0, {ceiling}], got {}",
                self.activation_threshold
            )));
        }
        if self.sample_rate_hz.is_nan() || self.sample_rate_hz <= 0.0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, frame: &SensorFrame) -> bool {
        frame.sum() < self.activation_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Disposition {
    Emitted,
    TooShort,
    TooLong,
}

/// A closed run of active frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentEvent {
    /// Buffered frames. Complete for emitted and too-short segments; a
    /// too-long segment keeps only its first `max_len + 1` frames.
    pub frames: Vec<SensorFrame>,
    /// Stream index of the first active frame.
    pub start_index: u64,
    /// Stream index one past the last active frame.
    pub end_index: u64,
    pub disposition: Disposition,
}

impl SegmentEvent {
    pub fn len(&self) -> usize {
        (self.end_index - self.start_index) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end_index == self.start_index
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentCounters {
    pub emitted: u64,
    pub discarded_short: u64,
    pub discarded_long: u64,
}

impl SegmentCounters {
    pub fn closed(&self) -> u64 {
        self.emitted + self.discarded_short + self.discarded_long
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Active,
}

/// Threshold segmentation state machine.
///
/// Idle until an active frame arrives; buffers active frames; a single
/// inactive frame closes the segment. Segments outside
/// `min_len..=max_len` are reported but not emitted.
#[derive(Debug, Clone)]
pub struct Segmenter {
    config: SegmenterConfig,
    phase: Phase,
    buffer: Vec<SensorFrame>,
    start: u64,
    run_len: usize,
    next_index: u64,
    counters: SegmentCounters,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            buffer: Vec::with_capacity(config.max_len + 1),
            config,
            phase: Phase::Idle,
            start: 0,
            run_len: 0,
            next_index: 0,
            counters: SegmentCounters::default(),
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn counters(&self) -> SegmentCounters {
        self.counters
    }

    /// Frames consumed so far.
    pub fn frames_seen(&self) -> u64 {
        self.next_index
    }

    /// Length of the segment still open, if any.
    pub fn pending_len(&self) -> usize {
        self.run_len
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn push(&mut self, frame: SensorFrame) -> Option<SegmentEvent> {
        let index = self.next_index;
        self.next_index += 1;
        let active = self.config.is_active(&frame);
        match (self.phase, active) {
            (Phase::Idle, false) => None,
            (Phase::Idle, true) => {
                self.phase = Phase::Active;
                self.start = index;
                self.run_len = 1;
                self.buffer.push(frame);
                None
            }
            (Phase::Active, true) => {
                self.run_len += 1;
                if self.buffer.len() <= self.config.max_len {
                    self.buffer.push(frame);
                }
                None
            }
            (Phase::Active, false) => {
                let len = self.run_len;
                let disposition = if len < self.config.min_len {
                    self.counters.discarded_short += 1;
                    Disposition::TooShort
                } else if len > self.config.max_len {
                    self.counters.discarded_long += 1;
                    Disposition::TooLong
                } else {
                    self.counters.emitted += 1;
                    Disposition::Emitted
                };
                self.phase = Phase::Idle;
                self.run_len = 0;
                Some(SegmentEvent {
                    frames: core::mem::take(&mut self.buffer),
                    start_index: self.start,
                    end_index: index,
                    disposition,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: usize,
    pub probabilities: Vec<f32>,
}

impl Classification {
    pub fn max_probability(&self) -> f32 {
        self.probabilities[self.label]
    }

    pub fn label_name<'v>(&self, vocab: &'v LabelVocab) -> &'v str {
        vocab.name(self.label).unwrap_or("?")
    }
}

/// Classifies one segment through the same scaling and padding path as
/// batch evaluation.
pub fn classify_segment(
    frames: &[SensorFrame],
    config: &ModelConfig,
    params: &ModelParams<f32>,
    vocab: &LabelVocab,
) -> Result<Classification> {
    if vocab.len() != config.num_classes() {
        return Err(Error::Config(format!(
            "vocabulary has {} classes, model has {}",
            vocab.len(),
            config.num_classes()
        )));
    }
    let rec = GestureRecording {
        id: String::from("segment"),
        label: 0,
        frames: frames.to_vec(),
    };
    let batch = pad_batch::<f32>([&rec], MAX_STEPS)?;
    let logits = models::logits(config, params, &batch)?;
    let probs = models::probabilities(&logits)?;
    let probabilities = probs.into_data();
    Ok(Classification {
        label: argmax(&probabilities),
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(sum_each: u16) -> SensorFrame {
        SensorFrame::new([sum_each; CHANNELS]).unwrap()
    }

    #[test]
    fn parses_wire_lines() {
        assert_eq!(
            parse_frame("512,0,1023,300,7\n").unwrap().channels(),
            [512, 0, 1023, 300, 7]
        );
        assert!(matches!(
            parse_frame("1,2,3,4"),
            Err(FrameError::Arity { found: 4, .. })
        ));
        assert!(matches!(
            parse_frame("1,2,3,4,1024"),
            Err(FrameError::OutOfRange { value: 1024, .. })
        ));
        assert!(matches!(parse_frame("1,2,x,4,5"), Err(FrameError::NotInteger { .. })));
        assert!(matches!(parse_frame("1,2,-3,4,5"), Err(FrameError::NotInteger { .. })));
        assert!(matches!(
            parse_frame("1,2,99999999999999999999999,4,5"),
            Err(FrameError::OutOfRange { .. })
        ));
        let f = parse_frame("1, 2 ,3,4,5").unwrap();
        assert_eq!(format_frame(&f), "1,2,3,4,5");
    }

    #[test]
    fn exact_threshold_is_inactive() {
        let cfg = SegmenterConfig::default();
        assert!(!cfg.is_active(&frame(1000)));
        assert!(cfg.is_active(&SensorFrame::new([1000, 1000, 1000, 1000, 999]).unwrap()));
    }

    fn run(seg: &mut Segmenter, active: usize) -> Option<SegmentEvent> {
        for _ in 0..active {
            assert!(seg.push(frame(100)).is_none());
        }
        seg.push(frame(1023))
    }

    #[test]
    fn dispositions() {
        let mut seg = Segmenter::new(SegmenterConfig::default()).unwrap();
        assert!(seg.push(frame(1023)).is_none());
        let short = run(&mut seg, 49).unwrap();
        assert_eq!(short.disposition, Disposition::TooShort);
        let ok = run(&mut seg, 60).unwrap();
        assert_eq!(ok.disposition, Disposition::Emitted);
        assert_eq!(ok.len(), 60);
        assert_eq!(ok.frames.len(), 60);
        assert_eq!(ok.start_index, 51);
        let long = run(&mut seg, 500).unwrap();
        assert_eq!(long.disposition, Disposition::TooLong);
        assert_eq!(long.len(), 500);
        assert_eq!(long.frames.len(), seg.config().max_len + 1);
        assert_eq!(
            seg.counters(),
            SegmentCounters {
                emitted: 1,
                discarded_short: 1,
                discarded_long: 1
            }
        );
        assert_eq!(seg.phase(), Phase::Idle);
        assert_eq!(seg.buffered(), 0);
    }

    #[test]
    fn boundary_lengths() {
        let mut seg = Segmenter::new(SegmenterConfig::default()).unwrap();
        assert_eq!(run(&mut seg, 50).unwrap().disposition, Disposition::Emitted);
        assert_eq!(run(&mut seg, MAX_FRAMES).unwrap().disposition, Disposition::Emitted);
        assert_eq!(run(&mut seg, MAX_FRAMES + 1).unwrap().disposition, Disposition::TooLong);
    }

    #[test]
    fn config_validation() {
        let bad = SegmenterConfig {
            min_len: 10,
            max_len: 5,
            ..SegmenterConfig::default()
        };
        assert!(Segmenter::new(bad).is_err());
        let bad = SegmenterConfig {
            activation_threshold: 6000,
            ..SegmenterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

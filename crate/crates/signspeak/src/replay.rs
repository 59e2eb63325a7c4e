//! Replays recorded frames through the segmenter and a frozen model.
//!
//! A producer thread sends frames in order through a bounded channel,
//! optionally paced to a fixed rate; a full queue blocks it. The consumer
//! owns the segmenter and classifies each emitted segment before reading
//! the next frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use signspeak_core::data::{GestureRecording, LabelVocab, SensorFrame, CHANNELS, MAX_READING};
use signspeak_core::models::{ModelConfig, ModelParams};
use signspeak_core::stream::{
    classify_segment, parse_frame, Classification, Disposition, SegmentCounters, SegmentEvent, Segmenter,
    SegmenterConfig,
};

use crate::config::ReplayOptions;
use crate::dataset;
use crate::{CliError, CliResult};

/// A frame no threshold can mark active.
pub fn rest_frame() -> SensorFrame {
    SensorFrame::new([MAX_READING; CHANNELS]).expect("in range")
}

/// Frames of each recording followed by `rest` inactive frames.
pub fn frames_from_recordings(recordings: &[GestureRecording], rest: usize) -> Vec<SensorFrame> {
    let mut out = Vec::with_capacity(recordings.iter().map(|r| r.len() + rest).sum());
    for rec in recordings {
        out.extend_from_slice(&rec.frames);
        out.extend(std::iter::repeat_n(rest_frame(), rest));
    }
    out
}

/// Parses a raw frame file: one `s1,s2,s3,s4,s5` line per frame, blank
/// lines ignored.
pub fn parse_frames(text: &str, source: &str) -> CliResult<Vec<SensorFrame>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_frame(l).map_err(|e| CliError::Data(format!("{source}:{}: {e}", i + 1))))
        .collect()
}

/// Loads either a canonical dataset CSV (detected by its header) or a raw
/// frame file. Dataset recordings of every length are replayed, each
/// followed by `rest` inactive frames.
pub fn load_source(path: &Path, vocab: &LabelVocab, rest: usize) -> CliResult<Vec<SensorFrame>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let source = path.display().to_string();
    let first = text.lines().next().unwrap_or("").trim();
    if first == dataset::HEADER.join(",") {
        let recs = dataset::read_all(text.as_bytes(), vocab, &source)?;
        Ok(frames_from_recordings(&recs, rest))
    } else {
        parse_frames(&text, &source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Stream index of the segment's first frame.
    pub t_start: u64,
    pub len: usize,
    pub classification: Classification,
}

impl Prediction {
    /// `<t_start> <label> <p_max>`
    pub fn line(&self, vocab: &LabelVocab) -> String {
        format!(
            "{} {} {:.6}",
            self.t_start,
            self.classification.label_name(vocab),
            self.classification.max_probability()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub frames: u64,
    pub counters: SegmentCounters,
    /// Length of a segment still open when the stream ended, if any.
    pub open_at_end: usize,
    /// Wall-clock classification time per emitted segment.
    pub latencies_ms: Vec<f64>,
}

impl StreamStats {
    /// Nearest-rank percentile of the classification latencies.
    pub fn latency_percentile(&self, q: f64) -> Option<f64> {
        if self.latencies_ms.is_empty() {
            return None;
        }
        let mut sorted = self.latencies_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
        Some(sorted[rank.clamp(1, sorted.len()) - 1])
    }

    /// Key-value statistics report, prefixed by provenance lines.
    pub fn report(&self, echo: &[(String, String)]) -> String {
        let mut out: String = echo.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
        let c = &self.counters;
        let _ = writeln!(out, "frames={}", self.frames);
        let _ = writeln!(out, "segments_closed={}", c.closed());
        let _ = writeln!(out, "emitted={}", c.emitted);
        let _ = writeln!(out, "discarded_short={}", c.discarded_short);
        let _ = writeln!(out, "discarded_long={}", c.discarded_long);
        let _ = writeln!(out, "open_at_end={}", self.open_at_end);
        let _ = writeln!(out, "latency_samples={}", self.latencies_ms.len());
        for q in [50, 95, 99] {
            if let Some(v) = self.latency_percentile(f64::from(q)) {
                let _ = writeln!(out, "latency_p{q}_ms={v:.4}");
            }
        }
        out
    }
}

/// Outcome of pushing a frame sequence through the segmenter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentRun {
    pub frames: u64,
    pub counters: SegmentCounters,
    pub open_at_end: usize,
}

/// Sends `frames` through the bounded queue into a segmenter and hands
/// every closed segment to `on_event` in stream order.
pub fn segment_stream(
    frames: &[SensorFrame],
    segmenter: SegmenterConfig,
    options: &ReplayOptions,
    on_event: &mut dyn FnMut(SegmentEvent) -> CliResult<()>,
) -> CliResult<SegmentRun> {
    let mut seg = Segmenter::new(segmenter)?;
    if options.queue_capacity == 0 {
        return Err(CliError::Usage("replay queue capacity must be at least 1".into()));
    }
    let period = (options.rate_hz > 0.0).then(|| Duration::from_secs_f64(1.0 / options.rate_hz));
    thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<SensorFrame>(options.queue_capacity);
        scope.spawn(move || {
            let start = Instant::now();
            for (i, &frame) in frames.iter().enumerate() {
                if let Some(p) = period {
                    let due = start + p.mul_f64(i as f64);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                }
                if tx.send(frame).is_err() {
                    break;
                }
            }
        });
        for frame in rx {
            if let Some(event) = seg.push(frame) {
                on_event(event)?;
            }
        }
        Ok::<_, CliError>(())
    })?;
    Ok(SegmentRun {
        frames: seg.frames_seen(),
        counters: seg.counters(),
        open_at_end: seg.pending_len(),
    })
}

/// Runs producer, segmenter and classifier over `frames`, handing every
/// prediction to `sink` in stream order.
pub fn replay(
    frames: &[SensorFrame],
    model: &ModelConfig,
    params: &ModelParams<f32>,
    vocab: &LabelVocab,
    segmenter: SegmenterConfig,
    options: &ReplayOptions,
    sink: &mut dyn FnMut(&Prediction) -> CliResult<()>,
) -> CliResult<StreamStats> {
    let mut latencies_ms = Vec::new();
    let run = segment_stream(frames, segmenter, options, &mut |event| {
        if event.disposition != Disposition::Emitted {
            return Ok(());
        }
        let t0 = Instant::now();
        let classification = classify_segment(&event.frames, model, params, vocab)?;
        latencies_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        sink(&Prediction {
            t_start: event.start_index,
            len: event.len(),
            classification,
        })
    })?;
    Ok(StreamStats {
        frames: run.frames,
        counters: run.counters,
        open_at_end: run.open_at_end,
        latencies_ms,
    })
}

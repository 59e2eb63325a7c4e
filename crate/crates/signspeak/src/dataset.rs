//! Canonical long-format dataset CSV.
//!
//! ```text
//! recording_id,t,s1,s2,s3,s4,s5,label
//! a-0001,0,512,0,1023,300,7,A
//! ```
//!
//! One row per time step; `t` counts from 0 without gaps and rows of one
//! recording are consecutive. Recordings whose length falls outside the
//! retention window are skipped and listed in the rejection summary.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use signspeak_core::data::{is_retained_length, GestureRecording, LabelVocab, SensorFrame, CHANNELS, MAX_READING};

use crate::{CliError, CliResult};

pub const HEADER: [&str; 8] = ["recording_id", "t", "s1", "s2", "s3", "s4", "s5", "label"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub id: String,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub recordings: Vec<GestureRecording>,
    pub rejected: Vec<Rejection>,
}

struct Pending {
    id: String,
    label: usize,
    frames: Vec<SensorFrame>,
}

impl Dataset {
    /// Splits recordings into retained ones and rejections by length.
    pub fn from_recordings(all: Vec<GestureRecording>) -> Self {
        let mut out = Self::default();
        for rec in all {
            if is_retained_length(rec.len()) {
                out.recordings.push(rec);
            } else {
                out.rejected.push(Rejection {
                    length: rec.len(),
                    id: rec.id,
                });
            }
        }
        out
    }
}

fn finish(p: Pending, out: &mut Vec<GestureRecording>) {
    out.push(GestureRecording {
        id: p.id,
        label: p.label,
        frames: p.frames,
    });
}

/// Parses a canonical CSV stream, skipping recordings of rejected length.
/// `source` names the stream in error messages.
pub fn read_csv<R: Read>(reader: R, vocab: &LabelVocab, source: &str) -> CliResult<Dataset> {
    read_all(reader, vocab, source).map(Dataset::from_recordings)
}

/// Parses every recording regardless of length.
pub fn read_all<R: Read>(reader: R, vocab: &LabelVocab, source: &str) -> CliResult<Vec<GestureRecording>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let err = |line: u64, msg: String| CliError::Data(format!("{source}:{line}: {msg}"));
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{source}: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(CliError::Data(format!("{source}: empty file")));
    }
    if headers.iter().ne(HEADER) {
        return Err(err(1, format!("expected header `{}`", HEADER.join(","))));
    }

    let mut out = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    let mut current: Option<Pending> = None;
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows += 1;
        let id = &record[0];
        if id.is_empty() {
            return Err(err(line, "empty recording_id".into()));
        }
        let t: usize = record[1].parse().map_err(|_| {
            err(
                line,
                format!("time index `{}` is not a non-negative integer", &record[1]),
            )
        })?;
        let mut values = [0u16; CHANNELS];
        for (c, v) in values.iter_mut().enumerate() {
            let raw = &record[2 + c];
            let parsed: u32 = raw
                .parse()
                .map_err(|_| err(line, format!("s{} value `{raw}` is not an integer", c + 1)))?;
            if parsed > u32::from(MAX_READING) {
                return Err(err(
                    line,
                    format!("s{} value {parsed} outside [0, {MAX_READING}]", c + 1),
                ));
            }
            *v = parsed as u16;
        }
        let label = vocab
            .index(&record[7])
            .ok_or_else(|| err(line, format!("unknown label `{}`", &record[7])))?;

        if current.as_ref().is_some_and(|p| p.id != id) {
            let done = current.take().expect("checked above");
            finished.insert(done.id.clone());
            finish(done, &mut out);
        }
        match &mut current {
            Some(p) => {
                if p.label != label {
                    return Err(err(line, format!("label changes within recording `{id}`")));
                }
                if t != p.frames.len() {
                    return Err(err(
                        line,
                        format!("expected t = {} for recording `{id}`, found {t}", p.frames.len()),
                    ));
                }
                p.frames.push(SensorFrame::new(values)?);
            }
            None => {
                if finished.contains(id) {
                    return Err(err(line, format!("rows of recording `{id}` are not consecutive")));
                }
                if t != 0 {
                    return Err(err(line, format!("recording `{id}` starts at t = {t}, expected 0")));
                }
                current = Some(Pending {
                    id: id.to_string(),
                    label,
                    frames: vec![SensorFrame::new(values)?],
                });
            }
        }
    }
    if let Some(p) = current {
        finish(p, &mut out);
    }
    if rows == 0 {
        return Err(CliError::Data(format!("{source}: no data rows")));
    }
    Ok(out)
}

pub fn load_csv(path: &Path, vocab: &LabelVocab) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(BufReader::new(file), vocab, &path.display().to_string())
}

pub fn write_csv<W: Write>(writer: W, recordings: &[GestureRecording], vocab: &LabelVocab) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("writing dataset: {e}"));
    w.write_record(HEADER).map_err(fail)?;
    for rec in recordings {
        let label = vocab
            .name(rec.label)
            .ok_or_else(|| CliError::Data(format!("recording `{}` has label index {}", rec.id, rec.label)))?;
        for (t, frame) in rec.frames.iter().enumerate() {
            let mut row = vec![rec.id.clone(), t.to_string()];
            row.extend(frame.channels().iter().map(u16::to_string));
            row.push(label.to_string());
            w.write_record(&row).map_err(fail)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("writing dataset: {e}")))
}

pub fn save_csv(path: &Path, recordings: &[GestureRecording], vocab: &LabelVocab) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_csv(BufWriter::new(file), recordings, vocab).map_err(|e| e.context(path.display()))
}

/// One `rejected <id> length=<n>` line per skipped recording.
pub fn rejection_summary(rejected: &[Rejection]) -> String {
    rejected
        .iter()
        .map(|r| format!("rejected {} length={}\n", r.id, r.length))
        .collect()
}

/// Per-class counts, a length histogram and the rejection summary.
pub fn stats_report(data: &Dataset, vocab: &LabelVocab) -> String {
    let mut per_class = vec![0usize; vocab.len()];
    let mut lengths: BTreeMap<usize, usize> = BTreeMap::new();
    for rec in &data.recordings {
        per_class[rec.label] += 1;
        *lengths.entry(rec.len()).or_default() += 1;
    }
    let present = per_class.iter().filter(|&&n| n > 0).count();
    let mut out = String::new();
    let _ = writeln!(out, "recordings={}", data.recordings.len());
    let _ = writeln!(out, "classes={present}");
    let _ = writeln!(out, "rejected={}", data.rejected.len());
    for (name, n) in vocab.names().iter().zip(&per_class) {
        let _ = writeln!(out, "class.{name}={n}");
    }
    for (len, n) in &lengths {
        let _ = writeln!(out, "length.{len}={n}");
    }
    out.push_str(&rejection_summary(&data.rejected));
    out
}

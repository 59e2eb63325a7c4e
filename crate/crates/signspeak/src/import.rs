//! Adapter from the published dataset files to canonical recordings.
//!
//! The upstream column layout is not fixed, so columns are matched by name:
//! five sensor columns (headers containing `flex`, `sensor` or shaped like
//! `s1`/`ch1`, in file order), an optional label column (`label`, `class`,
//! `sign`, `letter`, `gesture`) and an optional recording column (`id`,
//! `recording`, `sample`, `trial`). Any of these can be named explicitly.
//! Without a label column the label comes from the file name, taking the
//! leading token before `_`, `-`, `.` or a space. A recording ends when the
//! recording column changes, the label changes, or the file ends.

use std::fs;
use std::path::{Path, PathBuf};

use signspeak_core::data::{GestureRecording, LabelVocab, SensorFrame, CHANNELS, MAX_READING};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportLayout {
    pub sensor_columns: Option<Vec<String>>,
    pub label_column: Option<String>,
    pub recording_column: Option<String>,
}

struct Columns {
    sensors: Vec<usize>,
    label: Option<usize>,
    recording: Option<usize>,
}

fn norm(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

fn looks_like_sensor(h: &str) -> bool {
    let h = norm(h);
    if h.contains("flex") || h.contains("sensor") {
        return true;
    }
    let digits = h.trim_start_matches(|c: char| c.is_ascii_alphabetic() || c == '_');
    let prefix = &h[..h.len() - digits.len()];
    matches!(prefix, "s" | "ch" | "ch_" | "channel" | "channel_" | "f")
        && !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit())
}

fn find(headers: &csv::StringRecord, explicit: Option<&str>, names: &[&str]) -> CliResult<Option<usize>> {
    if let Some(name) = explicit {
        return headers
            .iter()
            .position(|h| norm(h) == norm(name))
            .map(Some)
            .ok_or_else(|| CliError::Data(format!("column `{name}` not found")));
    }
    Ok(headers.iter().position(|h| names.contains(&norm(h).as_str())))
}

fn columns(headers: &csv::StringRecord, layout: &ImportLayout) -> CliResult<Columns> {
    let sensors: Vec<usize> = match &layout.sensor_columns {
        Some(names) => names
            .iter()
            .map(|n| find(headers, Some(n), &[])?.ok_or_else(|| CliError::Data(format!("column `{n}` not found"))))
            .collect::<CliResult<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| looks_like_sensor(h))
            .map(|(i, _)| i)
            .collect(),
    };
    if sensors.len() != CHANNELS {
        return Err(CliError::Data(format!(
            "expected {CHANNELS} sensor columns, found {} in header `{}`",
            sensors.len(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(Columns {
        sensors,
        label: find(
            headers,
            layout.label_column.as_deref(),
            &["label", "class", "sign", "letter", "gesture"],
        )?,
        recording: find(
            headers,
            layout.recording_column.as_deref(),
            &["id", "recording", "recording_id", "sample", "sample_id", "trial"],
        )?,
    })
}

/// Label token taken from a file name such as `A_03.csv`.
pub fn label_from_file_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let token = stem.split(['_', '-', '.', ' ']).next()?;
    (!token.is_empty()).then(|| token.to_string())
}

fn parse_reading(raw: &str) -> Option<u16> {
    let v: f64 = raw.trim().parse().ok()?;
    (v.fract() == 0.0 && (0.0..=f64::from(MAX_READING)).contains(&v)).then_some(v as u16)
}

fn resolve_label(raw: &str, vocab: &LabelVocab) -> Option<usize> {
    let t = raw.trim();
    vocab.index(t).or_else(|| vocab.index(&t.to_ascii_uppercase()))
}

/// Imports one file. Recording ids are `<file stem>-<n>`.
pub fn import_file(path: &Path, layout: &ImportLayout, vocab: &LabelVocab) -> CliResult<Vec<GestureRecording>> {
    let source = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{source}: {e}")))?
        .clone();
    let cols = columns(&headers, layout).map_err(|e| e.context(&source))?;
    let file_label = match cols.label {
        Some(_) => None,
        None => {
            let token = label_from_file_name(path)
                .ok_or_else(|| CliError::Data(format!("{source}: no label column and no label in file name")))?;
            Some(
                resolve_label(&token, vocab)
                    .ok_or_else(|| CliError::Data(format!("{source}: file name label `{token}` not in vocabulary")))?,
            )
        }
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("file").to_string();

    let mut out: Vec<GestureRecording> = Vec::new();
    let mut key: Option<(String, usize)> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Data(format!("{source}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| CliError::Data(format!("{source}:{line}: {msg}"));
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize| record.get(i).ok_or_else(|| err(format!("missing column {}", i + 1)));
        let mut values = [0u16; CHANNELS];
        for (v, &c) in values.iter_mut().zip(&cols.sensors) {
            let raw = field(c)?;
            *v = parse_reading(raw)
                .ok_or_else(|| err(format!("sensor value `{raw}` is not an integer in [0, {MAX_READING}]")))?;
        }
        let label = match (file_label, cols.label) {
            (Some(l), _) => l,
            (None, Some(c)) => {
                let raw = field(c)?;
                resolve_label(raw, vocab).ok_or_else(|| err(format!("unknown label `{raw}`")))?
            }
            (None, None) => unreachable!("label source resolved above"),
        };
        let rec_key = match cols.recording {
            Some(c) => field(c)?.to_string(),
            None => String::new(),
        };
        let next = (rec_key, label);
        if key.as_ref() != Some(&next) {
            out.push(GestureRecording {
                id: format!("{stem}-{}", out.len()),
                label,
                frames: Vec::new(),
            });
            key = Some(next);
        }
        out.last_mut()
            .expect("pushed above")
            .frames
            .push(SensorFrame::new(values)?);
    }
    Ok(out)
}

/// CSV files under `path` (recursively, sorted), or `path` itself.
pub fn input_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut dirs = vec![path.to_path_buf()];
    while let Some(dir) = dirs.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let p = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if p.is_dir() {
                dirs.push(p);
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                files.push(p);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no CSV files found", path.display())));
    }
    Ok(files)
}

/// Imports every CSV file under `path`.
pub fn import_path(path: &Path, layout: &ImportLayout, vocab: &LabelVocab) -> CliResult<Vec<GestureRecording>> {
    let mut all = Vec::new();
    for file in input_files(path)? {
        all.extend(import_file(&file, layout, vocab)?);
    }
    Ok(all)
}

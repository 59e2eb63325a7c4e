//! Checkpoint files: a text header followed by raw little-endian `f32`
//! parameter data.
//!
//! ```text
//! signspeak-checkpoint 1
//! config model.name=stacked_gru
//! ...
//! vocab A,B,...,10
//! provenance best_val_loss=0.1234
//! param rnn.0.w_input 5x192 offset=0 len=960
//! ...
//! end
//! <raw f32 values in manifest order>
//! ```

use std::fs;
use std::path::Path;

use signspeak_core::data::LabelVocab;
use signspeak_core::models::{count_parameters, ModelConfig, ModelParams};
use signspeak_core::Tensor;

use crate::config::{Resolved, RunConfig};
use crate::{CliError, CliResult};

pub const MAGIC: &str = "signspeak-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration the parameters were trained under.
    pub config: Vec<(String, String)>,
    pub vocab: LabelVocab,
    /// Training facts such as seed, fold, epochs run and best loss.
    pub provenance: Vec<(String, String)>,
    pub params: ModelParams<f32>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Data(format!("checkpoint: {}", msg.into()))
}

fn check_token(what: &str, s: &str) -> CliResult<()> {
    if s.is_empty() || s.contains(|c: char| c.is_whitespace() || c == ',' || c == '=') {
        return Err(bad(format!("{what} `{s}` cannot be written to a header")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(
        resolved: &Resolved,
        vocab: LabelVocab,
        provenance: Vec<(String, String)>,
        params: ModelParams<f32>,
    ) -> CliResult<Self> {
        params.check_layout(&resolved.train.model)?;
        Ok(Self {
            config: resolved.echo.clone(),
            vocab,
            provenance,
            params,
        })
    }

    /// Resolves the embedded configuration.
    pub fn resolve(&self) -> CliResult<Resolved> {
        RunConfig::from_pairs(self.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .and_then(|c| c.resolve())
            .map_err(|e| bad(format!("embedded config: {e}")))
    }

    pub fn model(&self) -> CliResult<ModelConfig> {
        Ok(self.resolve()?.train.model)
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut header = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.config {
            header.push_str(&format!("config {k}={v}\n"));
        }
        for name in self.vocab.names() {
            check_token("label", name)?;
        }
        header.push_str(&format!("vocab {}\n", self.vocab.names().join(",")));
        for (k, v) in &self.provenance {
            check_token("provenance key", k)?;
            if v.contains('\n') {
                return Err(bad(format!("provenance value for `{k}` spans lines")));
            }
            header.push_str(&format!("provenance {k}={v}\n"));
        }
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            check_token("parameter name", name)?;
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!(
                "param {name} {} offset={offset} len={}\n",
                dims.join("x"),
                t.numel()
            ));
            offset += t.numel();
        }
        header.push_str("end\n");
        let mut bytes = header.into_bytes();
        bytes.reserve(offset * 4);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut pos = 0;
        let mut next_line = || -> CliResult<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("header ends before `end`"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        let first = next_line()?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a signspeak checkpoint"))?;
        if version != VERSION.to_string() {
            return Err(bad(format!(
                "unsupported format version `{version}`, expected {VERSION}"
            )));
        }

        let mut config = Vec::new();
        let mut vocab = None;
        let mut provenance = Vec::new();
        let mut manifest: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let (tag, rest) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            let pair = |rest: &str| -> CliResult<(String, String)> {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
                Ok((k.to_string(), v.to_string()))
            };
            match tag {
                "config" => config.push(pair(rest)?),
                "provenance" => provenance.push(pair(rest)?),
                "vocab" => {
                    let names = rest.split(',').map(str::to_string).collect();
                    vocab = Some(LabelVocab::new(names).map_err(|e| bad(e.to_string()))?);
                }
                "param" => manifest.push(parse_param(rest).ok_or_else(|| bad(format!("malformed line `{line}`")))?),
                _ => return Err(bad(format!("unknown header entry `{tag}`"))),
            }
        }
        let vocab = vocab.ok_or_else(|| bad("missing vocab"))?;

        let body = &bytes[pos..];
        let total: usize = manifest.iter().map(|m| m.3).sum();
        if body.len() != total * 4 {
            return Err(bad(format!(
                "expected {} bytes of parameters, found {}",
                total * 4,
                body.len()
            )));
        }
        let mut expected_offset = 0;
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape, offset, len) in manifest {
            if offset != expected_offset || shape.iter().product::<usize>() != len {
                return Err(bad(format!("inconsistent manifest entry for `{name}`")));
            }
            let data = body[offset * 4..(offset + len) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push((name, Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))?));
            expected_offset += len;
        }
        let params = ModelParams::from_entries(entries).map_err(|e| bad(e.to_string()))?;
        let ckpt = Self {
            config,
            vocab,
            provenance,
            params,
        };
        let model = ckpt.model()?;
        if ckpt.params.scalar_count() != count_parameters(&model) {
            return Err(bad(format!(
                "{} scalars stored, configured model has {}",
                ckpt.params.scalar_count(),
                count_parameters(&model)
            )));
        }
        ckpt.params.check_layout(&model).map_err(|e| bad(e.to_string()))?;
        if ckpt.vocab.len() != model.num_classes() {
            return Err(bad(format!(
                "vocab has {} labels, model has {} classes",
                ckpt.vocab.len(),
                model.num_classes()
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }

    pub fn provenance(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// `<name> <d0>x<d1>... offset=<o> len=<n>`
fn parse_param(rest: &str) -> Option<(String, Vec<usize>, usize, usize)> {
    let mut it = rest.split(' ');
    let name = it.next()?.to_string();
    let shape = it
        .next()?
        .split('x')
        .map(|d| d.parse().ok())
        .collect::<Option<Vec<usize>>>()?;
    let offset = it.next()?.strip_prefix("offset=")?.parse().ok()?;
    let len = it.next()?.strip_prefix("len=")?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((name, shape, offset, len))
}

//! Machine-readable run outputs. Every artifact starts with `# key=value`
//! provenance lines carrying the resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use signspeak_core::data::LabelVocab;
use signspeak_core::train::{ConfusionMatrix, EpochRecord, MetricsReport};

use crate::{CliError, CliResult};

fn provenance(echo: &[(String, String)]) -> String {
    echo.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

/// Key-value metrics report with per-fold and aggregate lines.
pub fn metrics_text(report: &MetricsReport, echo: &[(String, String)]) -> String {
    let mut out = provenance(echo);
    for f in &report.folds {
        let _ = writeln!(out, "fold.{}.accuracy={}", f.fold, f.accuracy);
        let _ = writeln!(out, "fold.{}.macro_f1={}", f.fold, f.macro_f1);
    }
    let _ = writeln!(out, "folds={}", report.folds.len());
    let _ = writeln!(out, "mean_accuracy={}", report.mean_accuracy);
    let _ = writeln!(out, "std_accuracy={}", report.std_accuracy);
    let _ = writeln!(out, "mean_macro_f1={}", report.mean_macro_f1);
    let _ = writeln!(out, "std_macro_f1={}", report.std_macro_f1);
    out
}

/// Confusion matrix with truth rows and predicted columns, both labelled.
pub fn confusion_csv(cm: &ConfusionMatrix, vocab: &LabelVocab, echo: &[(String, String)]) -> String {
    let mut out = provenance(echo);
    out.push_str("truth\\predicted");
    for name in vocab.names() {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (t, name) in vocab.names().iter().enumerate().take(cm.classes()) {
        out.push_str(name);
        for p in 0..cm.classes() {
            let _ = write!(out, ",{}", cm.get(t, p));
        }
        out.push('\n');
    }
    out
}

pub fn epoch_log_csv(log: &[EpochRecord], echo: &[(String, String)]) -> String {
    let mut out = provenance(echo);
    out.push_str("epoch,train_loss,val_loss,val_acc,lr\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        );
    }
    out
}

/// Count in thousands, rounded to nearest with halves up.
pub fn round_thousands(n: usize) -> usize {
    (n + 500) / 1000
}

pub fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_layout() {
        let vocab = LabelVocab::new(vec!["a".into(), "b".into()]).unwrap();
        let cm = ConfusionMatrix::from_pairs(2, [(0, 0), (0, 1), (1, 1), (1, 1)]).unwrap();
        let echo = vec![("seed".to_string(), "4".to_string())];
        assert_eq!(
            confusion_csv(&cm, &vocab, &echo),
            "# seed=4\ntruth\\predicted,a,b\na,1,1\nb,0,2\n"
        );
    }

    #[test]
    fn epoch_log_layout() {
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 2.5,
            val_loss: 2.25,
            val_acc: 0.5,
            lr: 0.001,
        };
        assert_eq!(
            epoch_log_csv(&[rec], &[]),
            "epoch,train_loss,val_loss,val_acc,lr\n1,2.5,2.25,0.5,0.001\n"
        );
    }
}

use std::io::{self, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand};
use signspeak::checkpoint::Checkpoint;
use signspeak::config::{unknown_model, Resolved, RunConfig};
use signspeak::import::{self, ImportLayout};
use signspeak::{cv, dataset, replay, report, CliError, CliResult, ExitCode};
use signspeak_core::data::{pad_batch, synth_generate, LabelVocab, MAX_STEPS};
use signspeak_core::models::{count_parameters, ModelKind};
use signspeak_core::train::{cv_split, train_fold_with, EpochRecord, FoldOutcome};

#[derive(Parser, Debug)]
#[command(
    name = "signspeak",
    version,
    about = "Flex-sensor gesture benchmark and stream simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of dotted key=value lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.lr0=0.002`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// stacked_lstm, stacked_gru, dense_lstm, dense_gru, dense_stacked_lstm,
    /// dense_stacked_gru or encoder.
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Import, synthesise or summarise datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train one fold and write its checkpoint and reports.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fold to train; defaults to `train.fold`.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Run k-fold cross-validation.
    Cv {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Parallel fold jobs; defaults to min(folds, cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print exact and rounded parameter counts.
    Params {
        #[arg(long)]
        all: bool,
    },
    /// Replay frames through the segmenter and a checkpoint.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV or raw frame file.
        #[arg(long)]
        source: PathBuf,
        /// Frames per second; 0 replays unthrottled.
        #[arg(long)]
        rate: Option<f64>,
        /// Statistics report path; defaults to `<out-dir>/stream-report.txt`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Convert published dataset files to the canonical CSV.
    Import {
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated names of the five sensor columns.
        #[arg(long, value_delimiter = ',')]
        sensor_columns: Option<Vec<String>>,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        recording_column: Option<String>,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 20.0)]
        noise_std: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-class counts, length histogram and rejections.
    Stats { input: PathBuf },
}

fn resolve(common: &Common) -> CliResult<Resolved> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(common.overrides.iter().map(String::as_str))?;
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(model) = &common.model {
        ModelKind::from_name(model).ok_or_else(|| unknown_model(model))?;
        cfg.set("model.name", model)?;
    }
    cfg.resolve()
}

fn with_override(resolved: &Resolved, key: &str, value: &str) -> CliResult<Resolved> {
    let mut cfg = RunConfig::from_pairs(resolved.echo.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.set(key, value)?;
    cfg.resolve()
}

fn data_path(data: Option<&PathBuf>) -> CliResult<&Path> {
    let path = data.ok_or_else(|| CliError::Usage("--data <csv> is required".into()))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(path)
}

fn load_dataset(path: &Path, vocab: &LabelVocab) -> CliResult<dataset::Dataset> {
    let data = dataset::load_csv(path, vocab)?;
    eprint!("{}", dataset::rejection_summary(&data.rejected));
    if data.recordings.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no recordings of usable length",
            path.display()
        )));
    }
    Ok(data)
}

fn progress(fold: usize, r: &EpochRecord) {
    eprintln!(
        "fold {fold} epoch {} train_loss={:.4} val_loss={:.4} val_acc={:.4} lr={}",
        r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
    );
}

fn fold_metrics_text(outcome: &FoldOutcome, echo: &[(String, String)]) -> String {
    let mut out: String = echo.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    let m = &outcome.metrics;
    out.push_str(&format!(
        "fold={}\naccuracy={}\nmacro_f1={}\nbest_epoch={}\nbest_val_loss={}\nepochs_run={}\n",
        m.fold,
        m.accuracy,
        m.macro_f1,
        outcome.best_epoch,
        outcome.best_val_loss,
        outcome.log.len()
    ));
    out
}

/// Writes checkpoint, epoch log, confusion matrix and fold metrics.
fn write_fold(
    resolved: &Resolved,
    vocab: &LabelVocab,
    outcome: &FoldOutcome,
    samples: usize,
    dir: &Path,
) -> CliResult<PathBuf> {
    let fold = outcome.metrics.fold;
    let stem = format!("{}-fold{fold}", resolved.kind);
    let provenance = vec![
        ("seed".to_string(), resolved.seed().to_string()),
        ("fold".to_string(), fold.to_string()),
        ("samples".to_string(), samples.to_string()),
        ("epochs_run".to_string(), outcome.log.len().to_string()),
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
        ("best_val_loss".to_string(), outcome.best_val_loss.to_string()),
    ];
    let ckpt = Checkpoint::new(resolved, vocab.clone(), provenance, outcome.params.clone())?;
    let ckpt_path = dir.join(format!("{stem}.ckpt"));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    ckpt.save(&ckpt_path)?;
    report::write(
        &dir.join(format!("{stem}-epochs.csv")),
        &report::epoch_log_csv(&outcome.log, &resolved.echo),
    )?;
    report::write(
        &dir.join(format!("{stem}-confusion.csv")),
        &report::confusion_csv(&outcome.metrics.confusion, vocab, &resolved.echo),
    )?;
    report::write(
        &dir.join(format!("{stem}-metrics.txt")),
        &fold_metrics_text(outcome, &resolved.echo),
    )?;
    Ok(ckpt_path)
}

fn run(cli: Cli) -> CliResult<()> {
    let vocab = LabelVocab::standard();
    let common = &cli.common;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let emit = |out: &mut io::StdoutLock<'_>, text: &str| {
        out.write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}")))
    };
    match &cli.command {
        Command::Dataset(DatasetCommand::Import {
            input,
            output,
            sensor_columns,
            label_column,
            recording_column,
        }) => {
            let layout = ImportLayout {
                sensor_columns: sensor_columns.clone(),
                label_column: label_column.clone(),
                recording_column: recording_column.clone(),
            };
            let all = import::import_path(input, &layout, &vocab)?;
            let data = dataset::Dataset::from_recordings(all);
            let path = output.clone().unwrap_or_else(|| common.out_dir.join("dataset.csv"));
            create_parent(&path)?;
            dataset::save_csv(&path, &data.recordings, &vocab)?;
            emit(&mut out, &dataset::stats_report(&data, &vocab))?;
            eprintln!("wrote {}", path.display());
        }
        Command::Dataset(DatasetCommand::Synth {
            per_class,
            noise_std,
            output,
        }) => {
            let resolved = resolve(common)?;
            let recs = synth_generate(*per_class, *noise_std, resolved.seed())?;
            let path = output.clone().unwrap_or_else(|| common.out_dir.join("synth.csv"));
            create_parent(&path)?;
            dataset::save_csv(&path, &recs, &vocab)?;
            eprintln!("wrote {} recordings to {}", recs.len(), path.display());
        }
        Command::Dataset(DatasetCommand::Stats { input }) => {
            let data = dataset::load_csv(input, &vocab)?;
            emit(&mut out, &dataset::stats_report(&data, &vocab))?;
        }
        Command::Train { data, fold } => {
            let mut resolved = resolve(common)?;
            if let Some(f) = fold {
                resolved = with_override(&resolved, "train.fold", &f.to_string())?;
            }
            let path = data_path(data.as_ref())?;
            let ds = load_dataset(path, &vocab)?;
            let batch = pad_batch::<f32>(&ds.recordings, MAX_STEPS)?;
            let split = cv_split(&batch, &resolved.train)?;
            let outcome = train_fold_with(&batch, &split, resolved.fold, &resolved.train, &mut |r| {
                progress(resolved.fold, r);
                ControlFlow::Continue(())
            })?;
            let ckpt = write_fold(&resolved, &vocab, &outcome, batch.len(), &common.out_dir)?;
            emit(&mut out, &fold_metrics_text(&outcome, &[]))?;
            eprintln!("wrote {}", ckpt.display());
        }
        Command::Cv { data, workers } => {
            let resolved = resolve(common)?;
            let path = data_path(data.as_ref())?;
            let ds = load_dataset(path, &vocab)?;
            let batch = pad_batch::<f32>(&ds.recordings, MAX_STEPS)?;
            let workers = workers.unwrap_or(resolved.workers);
            let (metrics, outcomes) = cv::run_cv_parallel(&batch, &resolved.train, workers, &progress)?;
            for o in &outcomes {
                write_fold(&resolved, &vocab, o, batch.len(), &common.out_dir)?;
            }
            let stem = format!("{}-cv", resolved.kind);
            let text = report::metrics_text(&metrics, &resolved.echo);
            report::write(&common.out_dir.join(format!("{stem}-metrics.txt")), &text)?;
            report::write(
                &common.out_dir.join(format!("{stem}-confusion.csv")),
                &report::confusion_csv(&metrics.total_confusion, &vocab, &resolved.echo),
            )?;
            emit(&mut out, &report::metrics_text(&metrics, &[]))?;
        }
        Command::Params { all } => {
            resolve(common)?;
            let kinds: Vec<ModelKind> = match (all, &common.model) {
                (true, _) => ModelKind::ALL.to_vec(),
                (false, Some(name)) => vec![ModelKind::from_name(name).ok_or_else(|| unknown_model(name))?],
                (false, None) => return Err(CliError::Usage("params needs --model <name> or --all".into())),
            };
            for kind in kinds {
                let n = count_parameters(&kind.config());
                emit(&mut out, &format!("{} {} {}K\n", kind, n, report::round_thousands(n)))?;
            }
        }
        Command::Stream {
            checkpoint,
            source,
            rate,
            report: report_path,
        } => {
            let mut resolved = resolve(common)?;
            if let Some(r) = rate {
                resolved = with_override(&resolved, "stream.rate_hz", &r.to_string())?;
            }
            let ckpt = Checkpoint::load(checkpoint)?;
            let model = ckpt.model()?;
            let options = resolved.replay;
            let frames = replay::load_source(source, &ckpt.vocab, options.rest_frames)?;
            let stats = replay::replay(
                &frames,
                &model,
                &ckpt.params,
                &ckpt.vocab,
                resolved.segmenter,
                &options,
                &mut |p| emit(&mut out, &format!("{}\n", p.line(&ckpt.vocab))),
            )?;
            // Model settings come from the checkpoint, stream settings from this run.
            let echo: Vec<(String, String)> = ckpt
                .config
                .iter()
                .filter(|(k, _)| !k.starts_with("stream."))
                .chain(resolved.echo.iter().filter(|(k, _)| k.starts_with("stream.")))
                .cloned()
                .collect();
            let text = stats.report(&echo);
            let path = report_path
                .clone()
                .unwrap_or_else(|| common.out_dir.join("stream-report.txt"));
            report::write(&path, &text)?;
            eprint!("{}", stats.report(&[]));
        }
    }
    Ok(())
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        None => Ok(()),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitCode::Usage
            } else {
                ExitCode::Success
            };
            let _ = e.print();
            process::exit(code as i32);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code() as i32);
    }
}

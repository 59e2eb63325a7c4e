//! Fold-parallel cross-validation.
//!
//! Each fold owns its model, optimizer and random streams, so running folds
//! on a thread pool gives the same bits as [`signspeak_core::train::run_cv`].

use std::ops::ControlFlow;
use std::thread;

use rayon::prelude::*;
use signspeak_core::data::PaddedBatch;
use signspeak_core::train::{cv_split, train_fold_with, EpochRecord, FoldOutcome, MetricsReport, TrainConfig};

use crate::{CliError, CliResult};

/// Worker count used when none is requested: min(folds, cores).
pub fn default_workers(folds: usize) -> usize {
    let cores = thread::available_parallelism().map_or(1, |n| n.get());
    folds.min(cores).max(1)
}

/// Runs every fold on up to `workers` threads (0 picks the default).
/// `progress` receives each fold's epoch records as they complete.
pub fn run_cv_parallel(
    data: &PaddedBatch<f32>,
    config: &TrainConfig,
    workers: usize,
    progress: &(dyn Fn(usize, &EpochRecord) + Sync),
) -> CliResult<(MetricsReport, Vec<FoldOutcome>)> {
    config.validate()?;
    let split = cv_split(data, config)?;
    let workers = if workers == 0 {
        default_workers(split.k())
    } else {
        workers
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Training(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        (0..split.k())
            .into_par_iter()
            .map(|fold| {
                train_fold_with(data, &split, fold, config, &mut |r| {
                    progress(fold, r);
                    ControlFlow::Continue(())
                })
                .map_err(|e| CliError::from(e).context(format!("fold {fold}")))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let report = MetricsReport::from_folds(outcomes.iter().map(|o| o.metrics.clone()).collect())?;
    Ok((report, outcomes))
}

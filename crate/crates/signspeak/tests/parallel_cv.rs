use signspeak::cv::{default_workers, run_cv_parallel};
use signspeak_core::data::{pad_batch, synth_generate, MAX_STEPS};
use signspeak_core::models::ModelKind;
use signspeak_core::train::{run_cv, TrainConfig};

#[test]
fn parallel_folds_match_sequential_bits() {
    let recs = synth_generate(3, 20.0, 6).unwrap();
    let batch = pad_batch::<f32>(&recs, MAX_STEPS).unwrap();
    let config = TrainConfig {
        max_epochs: 2,
        folds: 3,
        seed: 17,
        ..TrainConfig::for_model(ModelKind::DenseGru)
    };
    let (seq_report, seq_out) = run_cv(&batch, &config).unwrap();
    for workers in [1, 3] {
        let (report, out) = run_cv_parallel(&batch, &config, workers, &|_, _| {}).unwrap();
        assert_eq!(report, seq_report);
        assert_eq!(out, seq_out);
    }
}

#[test]
fn default_worker_count_is_bounded_by_folds() {
    assert_eq!(default_workers(1), 1);
    assert!((1..=5).contains(&default_workers(5)));
}

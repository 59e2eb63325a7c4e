use signspeak_core::data::PaddedBatch;
use signspeak_core::data::{pad_batch, synth_generate, MAX_STEPS};
use signspeak_core::gradcheck::random_tensor;
use signspeak_core::models::{self, ModelKind, ModelParams};
use signspeak_core::train::{adamw_step, cv_split, evaluate, run_cv, train_fold, AdamW, OptimizerState, TrainConfig};

fn small_data(per_class: usize) -> PaddedBatch<f32> {
    pad_batch(&synth_generate(per_class, 20.0, 4).unwrap(), MAX_STEPS).unwrap()
}

fn quick(kind: ModelKind, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::for_model(kind);
    c.max_epochs = epochs;
    c.seed = 9;
    c
}

#[test]
fn adam_without_decay_matches_textbook_recurrence() {
    let shapes: [&[usize]; 2] = [&[3, 4], &[5]];
    let init: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| random_tensor(s, 1.0, 1, &format!("p{i}")))
        .collect();
    let mut params = ModelParams::from_entries(
        init.iter()
            .enumerate()
            .map(|(i, t)| (format!("p{i}"), t.clone()))
            .collect(),
    )
    .unwrap();
    let opt = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut state = OptimizerState::new(&params);

    let mut oracle: Vec<Vec<f64>> = init.iter().map(|t| t.data().to_vec()).collect();
    let mut m: Vec<Vec<f64>> = oracle.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut v = m.clone();
    let lr = 3e-3;
    for step in 1..=25 {
        let grads: Vec<Vec<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| random_tensor(s, 2.0, step, &format!("g{i}")).into_data())
            .collect();
        adamw_step(&opt, &mut params, &grads, &mut state, lr).unwrap();
        for i in 0..oracle.len() {
            for j in 0..oracle[i].len() {
                let g = grads[i][j];
                m[i][j] = 0.9 * m[i][j] + 0.1 * g;
                v[i][j] = 0.999 * v[i][j] + 0.001 * g * g;
                let m_hat = m[i][j] / (1.0 - 0.9f64.powi(step as i32));
                let v_hat = v[i][j] / (1.0 - 0.999f64.powi(step as i32));
                oracle[i][j] -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            }
        }
    }
    for (i, expect) in oracle.iter().enumerate() {
        for (a, b) in params.get(&format!("p{i}")).unwrap().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn untrained_models_start_near_uniform_loss() {
    let data = small_data(5);
    let all: Vec<usize> = (0..data.len()).collect();
    for kind in ModelKind::ALL {
        let params = models::build(&kind.config(), 0).unwrap();
        let eval = evaluate(&kind.config(), &params, &data, &all).unwrap();
        assert!((eval.loss - 36f64.ln()).abs() < 0.5, "{kind}: {}", eval.loss);
    }
}

#[test]
fn training_loss_falls_over_five_epochs_for_every_family() {
    let data = small_data(10);
    for kind in ModelKind::ALL {
        let config = quick(kind, 5);
        let split = cv_split(&data, &config).unwrap();
        let out = train_fold(&data, &split, 0, &config).unwrap();
        let first = out.log[0].train_loss;
        let last = out.log[4].train_loss;
        assert!(last < first, "{kind}: {first} -> {last}");
    }
}

#[test]
fn fold_training_is_deterministic_and_keeps_best_epoch() {
    let data = small_data(6);
    let config = quick(ModelKind::StackedGru, 4);
    let split = cv_split(&data, &config).unwrap();
    let a = train_fold(&data, &split, 1, &config).unwrap();
    let b = train_fold(&data, &split, 1, &config).unwrap();
    assert_eq!(a, b);
    let best = a.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_val_loss, best);
    assert_eq!(a.log[a.best_epoch - 1].val_loss, best);
    let held = split.held_out(1);
    let eval = evaluate(&config.model, &a.params, &data, held).unwrap();
    assert_eq!(eval.loss, a.best_val_loss);
    let preds: Vec<usize> = a.predictions.iter().map(|&(_, p)| p).collect();
    assert_eq!(preds, eval.predictions);
}

#[test]
fn cross_validation_covers_the_dataset() {
    let data = small_data(5);
    let config = quick(ModelKind::DenseGru, 2);
    let (report, outcomes) = run_cv(&data, &config).unwrap();
    assert_eq!(outcomes.len(), 5);
    assert_eq!(report.total_confusion.total(), data.len() as u64);
    let mut seen: Vec<usize> = outcomes
        .iter()
        .flat_map(|o| o.predictions.iter().map(|&(i, _)| i))
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..data.len()).collect::<Vec<_>>());
    for f in &report.folds {
        assert_eq!(f.accuracy, f.confusion.trace() as f64 / f.confusion.total() as f64);
    }
    let (again, _) = run_cv(&data, &config).unwrap();
    assert_eq!(report, again);
}

#[test]
fn invalid_configs_are_rejected() {
    let data = small_data(5);
    let mut config = quick(ModelKind::StackedLstm, 1);
    config.lr_min = 1.0;
    assert!(run_cv(&data, &config).is_err());
    let mut config = quick(ModelKind::StackedLstm, 0);
    config.folds = 5;
    let split = cv_split(&data, &config).unwrap();
    assert!(train_fold(&data, &split, 0, &config).is_err());
    assert!(train_fold(&data, &split, 7, &quick(ModelKind::StackedLstm, 1)).is_err());
}

/// Reduce-on-plateau learning-rate schedule driven by validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub lr_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerState {
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub current_lr: f64,
}

impl SchedulerState {
    pub fn new(lr0: f64) -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            current_lr: lr0,
        }
    }
}

/// Feeds one epoch's validation loss and returns the learning rate for the
/// next epoch.
///
/// A strictly lower loss resets the counter. Once the counter exceeds
/// `patience` the rate is multiplied by `factor` (never below `lr_min`) and
/// the counter restarts.
pub fn plateau_step(sched: &PlateauScheduler, state: &mut SchedulerState, val_loss: f64) -> f64 {
    if val_loss < state.best_val_loss {
        state.best_val_loss = val_loss;
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
        if state.epochs_since_improvement > sched.patience {
            state.current_lr = (state.current_lr * sched.factor).max(sched.lr_min);
            state.epochs_since_improvement = 0;
        }
    }
    state.current_lr
}

//! Early stopping on validation loss with strict-improvement patience.

/// Decision after recording one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    /// This epoch strictly improved on the best loss so far.
    pub improved: bool,
    /// Training should stop after this epoch.
    pub stop: bool,
    /// 1-based epoch holding the best loss so far.
    pub best_epoch: usize,
}

/// Incremental early stopper: stop once `current_epoch - best_epoch >=
/// patience` or the epoch budget is exhausted. Plateaus (equal losses)
/// count as no improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    max_epochs: usize,
    epoch: usize,
    best_epoch: usize,
    best_loss: f64,
}

impl EarlyStopper {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopper {
            patience,
            max_epochs,
            epoch: 0,
            best_epoch: 0,
            best_loss: f64::INFINITY,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn record(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = val_loss < self.best_loss;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
        }
        let stop = self.epoch - self.best_epoch >= self.patience || self.epoch >= self.max_epochs;
        StopDecision {
            improved,
            stop,
            best_epoch: self.best_epoch,
        }
    }
}

/// Replay a full validation-loss history: returns whether training stops
/// within it, at which epoch (1-based, `None` if it never stops), and the
/// best epoch.
pub fn early_stop(history: &[f64], patience: usize, max_epochs: usize) -> (Option<usize>, usize) {
    let mut stopper = EarlyStopper::new(patience, max_epochs);
    for &loss in history {
        let d = stopper.record(loss);
        if d.stop {
            return (Some(stopper.epoch), d.best_epoch);
        }
    }
    (None, stopper.best_epoch)
}

/// Stops training once the validation loss has not improved for `patience`
/// consecutive epochs and remembers the snapshot taken at the best epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopper<S> {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    best: Option<S>,
    since_improvement: usize,
}

impl<S> EarlyStopper<S> {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            best: None,
            since_improvement: 0,
        }
    }

    /// Records `loss` for `epoch` (1-based). `snapshot` is only called on
    /// improvement. Returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64, snapshot: impl FnOnce() -> S) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.best = Some(snapshot());
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.since_improvement >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn best(&self) -> Option<&S> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<S> {
        self.best
    }
}

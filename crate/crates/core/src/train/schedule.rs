use serde::{Deserialize, Serialize};

/// Plateau learning-rate decay and early stopping, driven by validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr_floor: f64,
    pub decay_factor: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub min_delta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr_floor: 5e-5,
            decay_factor: 0.63,
            lr_patience: 10,
            stop_patience: 20,
            min_delta: 0.01,
        }
    }
}

/// Counter state. The lr counter resets on any increase over the best
/// accuracy so far; the stop counter only on an increase above `min_delta`.
/// Both compare against the same best value, which then tracks the maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub config: ScheduleConfig,
    pub best_val_acc: f64,
    pub epochs_since_improve_lr: usize,
    pub epochs_since_improve_stop: usize,
}

impl ScheduleState {
    pub fn new(config: ScheduleConfig) -> Self {
        ScheduleState {
            config,
            best_val_acc: 0.0,
            epochs_since_improve_lr: 0,
            epochs_since_improve_stop: 0,
        }
    }

    /// Feeds one epoch's validation accuracy; returns the next learning rate
    /// and whether training should stop.
    pub fn update(&mut self, lr: f64, val_acc: f64) -> (f64, bool) {
        let c = self.config;
        let best = self.best_val_acc;

        if val_acc > best {
            self.epochs_since_improve_lr = 0;
        } else {
            self.epochs_since_improve_lr += 1;
        }
        if val_acc > best + c.min_delta {
            self.epochs_since_improve_stop = 0;
        } else {
            self.epochs_since_improve_stop += 1;
        }
        if val_acc > best {
            self.best_val_acc = val_acc;
        }

        let mut lr = lr;
        if self.epochs_since_improve_lr >= c.lr_patience {
            lr = (lr * c.decay_factor).max(c.lr_floor);
            self.epochs_since_improve_lr = 0;
        }
        (lr, self.epochs_since_improve_stop >= c.stop_patience)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_flat_epochs_decay_once() {
        let mut s = ScheduleState::new(ScheduleConfig::default());
        let mut lr = 0.001;
        for epoch in 1..=10 {
            let (next, stop) = s.update(lr, 0.0);
            assert!(!stop);
            if epoch < 10 {
                assert_eq!(next, 0.001);
            }
            lr = next;
        }
        assert!((lr - 0.00063).abs() < 1e-18);
    }

    #[test]
    fn floor_applies() {
        let mut s = ScheduleState::new(ScheduleConfig::default());
        let mut lr = 6e-5;
        for _ in 0..10 {
            lr = s.update(lr, 0.0).0;
        }
        assert_eq!(lr, 5e-5);
    }

    #[test]
    fn steady_gains_never_stop() {
        let mut s = ScheduleState::new(ScheduleConfig::default());
        for i in 1..=49 {
            let (lr, stop) = s.update(0.001, 0.02 * i as f64);
            assert_eq!(lr, 0.001);
            assert!(!stop);
        }
    }

    #[test]
    fn small_gains_stop_at_twenty() {
        let mut s = ScheduleState::new(ScheduleConfig::default());
        s.update(0.001, 0.5);
        for i in 1..=20 {
            let (_, stop) = s.update(0.001, 0.5 + 0.005 * i as f64);
            assert_eq!(stop, i == 20, "epoch {i}");
        }
    }
}

use serde::{Deserialize, Serialize};

/// Reduce-on-plateau learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best: Option<f64>,
    pub epochs_since_improvement: usize,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl PlateauState {
    pub fn new(lr: f64) -> Self {
        Self {
            best: None,
            epochs_since_improvement: 0,
            lr,
        }
    }
}

/// Records one epoch's monitored loss. Improvement means a strict decrease;
/// once the stagnation count exceeds `patience` the rate is multiplied by
/// `factor`, floored at `min_lr`, and the count restarts.
pub fn plateau_step(state: &mut PlateauState, epoch_loss: f64, config: &PlateauConfig) {
    let improved = match state.best {
        None => true,
        Some(best) => epoch_loss < best,
    };
    if improved {
        state.best = Some(epoch_loss);
        state.epochs_since_improvement = 0;
        return;
    }
    state.epochs_since_improvement += 1;
    if state.epochs_since_improvement > config.patience {
        state.lr = (state.lr * config.factor).max(config.min_lr).min(state.lr);
        state.epochs_since_improvement = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: PlateauConfig = PlateauConfig {
        factor: 0.95,
        patience: 10,
        min_lr: 1e-6,
    };

    #[test]
    fn decreasing_losses_keep_rate() {
        let mut s = PlateauState::new(1e-3);
        for i in 0..200 {
            plateau_step(&mut s, 100.0 - i as f64 * 0.1, &CFG);
        }
        assert_eq!(s.lr, 1e-3);
    }

    #[test]
    fn eleventh_stagnant_epoch_decays() {
        let mut s = PlateauState::new(1e-3);
        plateau_step(&mut s, 1.0, &CFG);
        for _ in 0..10 {
            plateau_step(&mut s, 1.0, &CFG);
        }
        assert_eq!(s.lr, 1e-3);
        plateau_step(&mut s, 1.0, &CFG);
        assert!((s.lr - 0.00095).abs() < 1e-18);
        assert_eq!(s.epochs_since_improvement, 0);
    }

    #[test]
    fn floor_at_min_lr() {
        let mut s = PlateauState::new(1e-3);
        for _ in 0..100_000 {
            plateau_step(&mut s, 1.0, &CFG);
            assert!(s.lr >= 1e-6);
        }
        assert_eq!(s.lr, 1e-6);
    }
}

//! Deep supervision loss, Adam, plateau scheduling and the epoch loop.

pub mod adam;
pub mod loss;
pub mod plateau;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{build, forward_on_tape, BoundParams, NetworkConfig, NetworkParams, SideBundle, SideVars, SIDE_COUNT};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor4;

pub use adam::{adam_step, AdamState};
pub use loss::{weighted_bce, BceWeights, ClassWeights};
pub use plateau::{plateau_step, PlateauConfig, PlateauState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub patience: usize,
    pub factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub side_weights: [f64; SIDE_COUNT],
    pub class_weights: ClassWeights,
    pub epsilon_clamp: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            min_learning_rate: 1e-6,
            patience: 10,
            factor: 0.95,
            batch_size: 4,
            max_epochs: 60,
            side_weights: [1.0; SIDE_COUNT],
            class_weights: ClassWeights::AutoBalance,
            epsilon_clamp: loss::DEFAULT_EPS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("factor must lie in (0, 1), got {}", self.factor)));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.min_learning_rate > self.learning_rate || self.min_learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "need 0 <= min_learning_rate ({}) <= learning_rate ({})",
                self.min_learning_rate, self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.side_weights.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::Config("side_weights must be finite and non-negative".into()));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 0.5) {
            return Err(Error::Config("epsilon_clamp must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            factor: self.factor,
            patience: self.patience,
            min_lr: self.min_learning_rate,
        }
    }
}

/// `Σ αₘ·l(sideₘ) + l(fused)` on the tape. Sides and fused output share one
/// set of class weights, resolved from `target`.
pub fn total_loss_on_tape<T: Scalar>(
    tape: &mut GradTape<T>,
    sides: &SideVars,
    target: &Tensor4<T>,
    config: &TrainConfig,
) -> Result<Var> {
    let w = config.class_weights.resolve(target, config.epsilon_clamp);
    // Without the hierarchical head only the last tap is present.
    let alphas: &[f64] = if sides.sides.len() == SIDE_COUNT {
        &config.side_weights
    } else {
        &config.side_weights[SIDE_COUNT - sides.sides.len()..]
    };
    let mut terms = Vec::with_capacity(sides.sides.len() + 1);
    for (&s, &alpha) in sides.sides.iter().zip(alphas) {
        terms.push((tape.weighted_bce(s, target, w)?, alpha));
    }
    terms.push((tape.weighted_bce(sides.fused, target, w)?, 1.0));
    tape.weighted_sum(&terms)
}

/// Scalar total loss of an already computed bundle.
pub fn total_loss<T: Scalar>(bundle: &SideBundle<T>, target: &Tensor4<T>, config: &TrainConfig) -> Result<f64> {
    let mut tape = GradTape::new();
    let sides = SideVars {
        sides: bundle.sides.iter().map(|s| tape.constant(s.clone())).collect(),
        fused: tape.constant(bundle.fused.clone()),
    };
    let l = total_loss_on_tape(&mut tape, &sides, target, config)?;
    Ok(tape.value(l).data()[0].to_f64_lossy())
}

/// Image/mask pair fed to the trainer.
#[derive(Clone, Debug)]
pub struct TrainingPair<T> {
    pub image: Tensor4<T>,
    pub mask: Tensor4<T>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

pub fn log_to_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_loss,learning_rate\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.learning_rate));
    }
    s
}

/// Loss and gradients of one batch. Gradients come back under parameter names.
pub fn loss_and_gradients<T: Scalar>(
    params: &NetworkParams<T>,
    net: &NetworkConfig,
    train: &TrainConfig,
    image: &Tensor4<T>,
    mask: &Tensor4<T>,
) -> Result<(f64, NetworkParams<T>)> {
    let mut tape = GradTape::new();
    let bound = BoundParams::bind(&mut tape, params, true);
    let x = tape.constant(image.clone());
    let sides = forward_on_tape(&mut tape, &bound, net, x)?;
    let loss = total_loss_on_tape(&mut tape, &sides, mask, train)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let mut grads = tape.backward(loss, T::one())?;
    let mut named = NetworkParams::new();
    for (key, name) in bound.names().iter().enumerate() {
        let g = grads.take(key).expect("every bound parameter receives a gradient");
        named.insert(name.clone(), g);
    }
    Ok((value, named))
}

/// Stateful epoch runner.
pub struct Trainer<T> {
    pub net: NetworkConfig,
    pub config: TrainConfig,
    pub params: NetworkParams<T>,
    pub adam: AdamState<T>,
    pub plateau: PlateauState,
    pub log: Vec<EpochRecord>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: NetworkConfig, config: TrainConfig) -> Result<Self> {
        let params = build(&net)?;
        Self::with_params(net, config, params)
    }

    pub fn with_params(net: NetworkConfig, config: TrainConfig, params: NetworkParams<T>) -> Result<Self> {
        net.validate()?;
        config.validate()?;
        params.check_against(&net)?;
        Ok(Self {
            plateau: PlateauState::new(config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            adam: AdamState::new(),
            log: Vec::new(),
            net,
            config,
            params,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.plateau.lr
    }

    /// One pass over `data` in a seeded shuffled order; returns the epoch record.
    pub fn run_epoch(&mut self, data: &[TrainingPair<T>]) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let lr = self.plateau.lr;
        let mut weighted = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let images: Vec<&Tensor4<T>> = batch.iter().map(|&i| &data[i].image).collect();
            let masks: Vec<&Tensor4<T>> = batch.iter().map(|&i| &data[i].mask).collect();
            let image = Tensor4::stack(&images).map_err(|_| {
                Error::Batch("samples in a batch differ in size; use batch_size 1 for mixed-size datasets".into())
            })?;
            let mask = Tensor4::stack(&masks)?;
            let (loss, grads) = loss_and_gradients(&self.params, &self.net, &self.config, &image, &mask)?;
            adam_step(&mut self.params, &grads, &mut self.adam, lr)?;
            weighted += loss * batch.len() as f64;
        }
        let mean_loss = weighted / data.len() as f64;
        plateau_step(&mut self.plateau, mean_loss, &self.config.plateau());
        let record = EpochRecord {
            epoch: self.log.len() + 1,
            mean_loss,
            learning_rate: lr,
        };
        log::info!("epoch {} loss {:.6} lr {:.3e}", record.epoch, mean_loss, lr);
        self.log.push(record.clone());
        Ok(record)
    }
}

/// Full training run: `max_epochs` epochs from a fresh initialization.
pub fn train<T: Scalar>(
    data: &[TrainingPair<T>],
    net: &NetworkConfig,
    config: &TrainConfig,
) -> Result<(NetworkParams<T>, Vec<EpochRecord>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(net.clone(), config.clone())?;
    for _ in 0..config.max_epochs {
        trainer.run_epoch(data)?;
    }
    Ok((trainer.params, trainer.log))
}

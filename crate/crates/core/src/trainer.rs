//! Online gradient descent over distorted epochs.
//!
//! Every epoch re-distorts all training images from the column's random
//! stream, shuffles them, and updates the weights after each sample. The
//! learning rate decays geometrically per epoch down to a floor.

use crate::augment::{self, AugmentError, DistortionParams};
use crate::dataset::Dataset;
use crate::ensemble::classify;
use crate::network::{NetError, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta_start: f64,
    pub eta_factor: f64,
    pub eta_min: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub distortion: DistortionParams,
}

impl TrainConfig {
    /// Schedule and epoch budget used for handwritten digits.
    pub fn mnist(seed: u64) -> Self {
        Self {
            eta_start: 0.001,
            eta_factor: 0.993,
            eta_min: 0.00003,
            max_epochs: 800,
            seed,
            distortion: DistortionParams::mnist(),
        }
    }

    pub fn norb(seed: u64) -> Self {
        Self {
            eta_start: 0.001,
            eta_factor: 0.95,
            eta_min: 0.000003,
            max_epochs: 800,
            seed,
            distortion: DistortionParams::norb(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.eta_min > 0.0 && self.eta_min < self.eta_start) {
            return Err(TrainError::Config(format!(
                "need 0 < eta_min < eta_start, got {} and {}",
                self.eta_min, self.eta_start
            )));
        }
        if !(self.eta_factor > 0.0 && self.eta_factor < 1.0) {
            return Err(TrainError::Config(format!(
                "eta_factor must lie in (0, 1), got {}",
                self.eta_factor
            )));
        }
        self.distortion.validate()?;
        Ok(())
    }

    /// Unclamped `eta_start * eta_factor^epoch`.
    pub fn raw_lr(&self, epoch: usize) -> f64 {
        self.eta_start * self.eta_factor.powi(epoch as i32)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.raw_lr(epoch).max(self.eta_min)
    }

    /// Smallest epoch whose raw rate has reached the floor. Training stops
    /// before this epoch, so it is also the number of epochs trained.
    pub fn crossing_epoch(&self) -> usize {
        let mut e = ((self.eta_min / self.eta_start).ln() / self.eta_factor.ln()).floor() as usize;
        while e > 0 && self.raw_lr(e - 1) <= self.eta_min {
            e -= 1;
        }
        while self.raw_lr(e) > self.eta_min {
            e += 1;
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ZeroValidationError,
    LearningRateFloor,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub eta: f64,
    pub train_loss: f64,
    /// Error on the undistorted validation set, if there is one.
    pub validation_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub eta: f64,
    pub losses: Vec<f64>,
    pub validation_errors: Vec<f64>,
    pub rng: Rng,
    pub stop: Option<StopReason>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, rng: Rng) -> Self {
        Self {
            epoch: 0,
            eta: cfg.lr_at_epoch(0),
            losses: Vec::new(),
            validation_errors: Vec::new(),
            rng,
            stop: None,
        }
    }
}

/// Draws all weights and biases from the given stream.
pub fn init_weights(net: &mut Network, rng: &mut Rng) {
    net.init_weights(rng);
}

/// One pass over the training set: distort, shuffle, then one update per
/// sample. Returns the mean loss before each update.
pub fn train_epoch(
    net: &mut Network,
    train: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<f64, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let eta = cfg.lr_at_epoch(state.epoch);
    let distorted: Vec<Tensor> = if cfg.distortion.is_identity() {
        train.images.clone()
    } else {
        train
            .images
            .iter()
            .map(|img| augment::distort(&mut state.rng, img, &cfg.distortion))
            .collect::<Result<_, _>>()?
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    state.rng.shuffle(&mut order);
    let mut total = 0.0;
    for &i in &order {
        total += net.train_step(&distorted[i], train.labels[i], eta)?;
    }
    let mean = total / train.len() as f64;
    state.eta = eta;
    state.epoch += 1;
    state.losses.push(mean);
    Ok(mean)
}

/// Fraction of samples whose argmax class differs from the label.
pub fn error_rate(net: &Network, ds: &Dataset) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        let (class, _) = classify(&net.predict(img)?);
        wrong += usize::from(class != label);
    }
    Ok(wrong as f64 / ds.len() as f64)
}

/// Trains until the validation error is zero, the raw learning rate reaches
/// its floor, or `max_epochs` epochs have run. An empty validation set never
/// triggers the zero-error stop.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<StopReason, TrainError> {
    cfg.validate()?;
    let reason = loop {
        if state.epoch >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        if cfg.raw_lr(state.epoch) <= cfg.eta_min {
            break StopReason::LearningRateFloor;
        }
        let epoch = state.epoch;
        let eta = cfg.lr_at_epoch(epoch);
        let train_loss = train_epoch(net, train, cfg, state)?;
        let validation_error = if validation.is_empty() {
            None
        } else {
            let e = error_rate(net, validation)?;
            state.validation_errors.push(e);
            Some(e)
        };
        on_epoch(&EpochReport {
            epoch,
            eta,
            train_loss,
            validation_error,
        });
        if validation_error == Some(0.0) {
            break StopReason::ZeroValidationError;
        }
    };
    state.stop = Some(reason);
    Ok(reason)
}

/// Initializes a fresh network from `cfg.seed` and fits it; weight init and
/// the epoch stream share one generator.
pub fn train_new(
    descriptor: crate::descriptor::NetDescriptor,
    train: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochReport),
) -> Result<(Network, TrainState), TrainError> {
    let mut rng = Rng::new(cfg.seed);
    let mut net = Network::new(descriptor);
    init_weights(&mut net, &mut rng);
    let mut state = TrainState::new(cfg, rng);
    fit(&mut net, train, validation, cfg, &mut state, on_epoch)?;
    Ok((net, state))
}

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::network::{backprop, forward_cached};
use super::{NetworkWeights, Reader, WeightsError, PARAM_COUNT};
use crate::bicycle::{ebm_derivative, SlipPair};
use crate::datagen::{Dataset, TrainingSample};
use crate::vehicle::{world_to_body, BicycleControl, VehicleParams};

/// Samples evaluated per forward pass when only the loss is needed.
const EVAL_CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weights on the `Vx`, `Vy` and yaw-rate terms.
    pub loss_weights: [f64; 3],
    /// Yaw-rate scaling factor.
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            loss_weights: [0.2, 0.4, 0.4],
            gamma: 0.05,
            epochs: 20,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("{windows} training windows is fewer than one batch of {batch}")]
    DataInsufficient { windows: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] WeightsError),
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let sum: f64 = self.loss_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.loss_weights.iter().any(|w| *w < 0.0) {
            return Err(TrainError::InvalidConfig(format!("loss weights must be non-negative and sum to 1, got {sum}")));
        }
        if !(self.gamma > 0.0) {
            return Err(TrainError::InvalidConfig("gamma must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(TrainError::InvalidConfig("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-step body-frame prediction `(Vx, Vy, yaw rate)` of the extended
/// bicycle with the given slips.
fn predict(slips: &SlipPair, sample: &TrainingSample, params: &VehicleParams) -> [f64; 3] {
    let [v, delta] = sample.history.current_control();
    let d = ebm_derivative(&sample.prev_pose, &BicycleControl::new(v, delta), slips, params);
    let (vx, vy) = world_to_body(sample.prev_pose.psi, d.x_dot, d.y_dot);
    [vx, vy, d.psi_dot]
}

/// Weighted L1 error between the one-step prediction and the target.
pub fn loss(pred: &SlipPair, sample: &TrainingSample, params: &VehicleParams, config: &TrainingConfig) -> f64 {
    loss_with_grad(pred, sample, params, config).0
}

/// Loss and its derivative with respect to `(alpha_f, alpha_r)`.
pub fn loss_with_grad(
    pred: &SlipPair,
    sample: &TrainingSample,
    params: &VehicleParams,
    config: &TrainingConfig,
) -> (f64, [f64; 2]) {
    let [w_vx, w_vy, w_r] = config.loss_weights;
    let w_r = w_r / config.gamma;
    let out = predict(pred, sample, params);
    let r = [out[0] - sample.target[0], out[1] - sample.target[1], out[2] - sample.target[2]];
    let value = w_vx * r[0].abs() + w_vy * r[1].abs() + w_r * r[2].abs();

    let [v, delta] = sample.history.current_control();
    let l = params.wheelbase();
    let a = (delta - pred.alpha_f).tan();
    let b = pred.alpha_r.tan();
    let u = (params.l_r * a - params.l_f * b) / l;
    let (sb, cb) = u.atan().sin_cos();
    // d/d(alpha_f) and d/d(alpha_r) of tan(delta - alpha_f) and tan(alpha_r)
    let da = [-(1.0 + a * a), 0.0];
    let db = [0.0, 1.0 + b * b];
    let mut grad = [0.0; 2];
    for i in 0..2 {
        let d_beta = (params.l_r * da[i] - params.l_f * db[i]) / (l * (1.0 + u * u));
        let d_vx = -v * sb * d_beta;
        let d_vy = v * cb * d_beta;
        let d_r = v / l * (-sb * (a + b) * d_beta + cb * (da[i] + db[i]));
        grad[i] = w_vx * sign(r[0]) * d_vx + w_vy * sign(r[1]) * d_vy + w_r * sign(r[2]) * d_r;
    }
    (value, grad)
}

/// Mean loss of the network over `samples`.
pub fn batch_loss(samples: &[TrainingSample], w: &NetworkWeights, params: &VehicleParams, config: &TrainingConfig) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let histories: Vec<_> = chunk.iter().map(|s| s.history).collect();
        let slips = super::forward_batch(&histories, w);
        total += chunk.iter().zip(&slips).map(|(s, p)| loss(p, s, params, config)).sum::<f64>();
    }
    total / samples.len() as f64
}

/// Mean loss of the extended bicycle with zero slip, i.e. the kinematic
/// model, over `samples`.
pub fn zero_slip_loss(samples: &[TrainingSample], params: &VehicleParams, config: &TrainingConfig) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| loss(&SlipPair::ZERO, s, params, config)).sum::<f64>() / samples.len() as f64
}

/// Mean loss over the batch and its gradient with respect to every network
/// parameter.
pub fn backward(
    samples: &[TrainingSample],
    w: &NetworkWeights,
    params: &VehicleParams,
    config: &TrainingConfig,
) -> (f64, Vec<f64>) {
    assert!(!samples.is_empty(), "backward needs a non-empty batch");
    let histories: Vec<_> = samples.iter().map(|s| s.history).collect();
    let cache = forward_cached(&histories, w);
    let scale = 1.0 / samples.len() as f64;
    let mut d_out = Array2::zeros((samples.len(), 2));
    let mut total = 0.0;
    for (b, (s, p)) in samples.iter().zip(cache.slips()).enumerate() {
        let (l, g) = loss_with_grad(&p, s, params, config);
        total += l;
        d_out[[b, 0]] = g[0] * scale;
        d_out[[b, 1]] = g[1] * scale;
    }
    (total * scale, backprop(&cache, &d_out, w))
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update. Increments `state.t` first, so the first
/// call uses `t = 1`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - AdamState::BETA1.powi(t);
    let c2 = 1.0 - AdamState::BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = AdamState::BETA1 * state.m[i] + (1.0 - AdamState::BETA1) * g;
        state.v[i] = AdamState::BETA2 * state.v[i] + (1.0 - AdamState::BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + AdamState::EPS);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses. Epoch 0 is the untrained network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    /// Validation loss with zero predicted slip.
    pub zero_slip_val_loss: f64,
}

impl TrainingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }

    pub fn best_val_loss(&self) -> f64 {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch).map_or(f64::INFINITY, |r| r.val_loss)
    }
}

/// Splits trajectory ids into training and validation sets.
fn split_trajectories(dataset: &Dataset, fraction: f64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut ids: Vec<u64> = dataset.trajectories.iter().map(|t| t.traj_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    ids.shuffle(&mut rng);
    let n_val = if ids.len() >= 2 && fraction > 0.0 {
        ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1)
    } else {
        0
    };
    let val = ids.split_off(ids.len() - n_val);
    (ids, val)
}

/// Resumable training loop that owns the weights.
pub struct Trainer {
    pub config: TrainingConfig,
    pub params: VehicleParams,
    weights: NetworkWeights,
    best: NetworkWeights,
    adam: AdamState,
    epoch: usize,
    report: TrainingReport,
    train_set: Vec<TrainingSample>,
    val_set: Vec<TrainingSample>,
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainingConfig, params: VehicleParams) -> Result<Self, TrainError> {
        config.validate()?;
        let (train_ids, _) = split_trajectories(dataset, config.validation_fraction, config.seed);
        let mut train_set = Vec::new();
        let mut val_set = Vec::new();
        for s in dataset.windows() {
            if train_ids.contains(&s.traj_id) {
                train_set.push(s);
            } else {
                val_set.push(s);
            }
        }
        if train_set.len() < config.batch_size {
            return Err(TrainError::DataInsufficient { windows: train_set.len(), batch: config.batch_size });
        }
        let mut weights = NetworkWeights::init(config.seed);
        weights.normalizer = dataset.normalizer;
        let report = TrainingReport {
            epochs: Vec::new(),
            best_epoch: 0,
            train_windows: train_set.len(),
            val_windows: val_set.len(),
            zero_slip_val_loss: zero_slip_loss(&val_set, &params, &config),
        };
        let mut trainer = Self {
            config,
            params,
            best: weights.clone(),
            weights,
            adam: AdamState::new(PARAM_COUNT),
            epoch: 0,
            report,
            train_set,
            val_set,
        };
        let train_loss = batch_loss(&trainer.train_set, &trainer.weights, &trainer.params, &trainer.config);
        let val_loss = trainer.val_loss(&trainer.weights);
        trainer.report.epochs.push(EpochRecord { epoch: 0, train_loss, val_loss });
        Ok(trainer)
    }

    fn val_loss(&self, w: &NetworkWeights) -> f64 {
        if self.val_set.is_empty() {
            return f64::NAN;
        }
        batch_loss(&self.val_set, w, &self.params, &self.config)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn best_weights(&self) -> &NetworkWeights {
        &self.best
    }

    pub fn report(&self) -> &TrainingReport {
        &self.report
    }

    pub fn train_set(&self) -> &[TrainingSample] {
        &self.train_set
    }

    pub fn val_set(&self) -> &[TrainingSample] {
        &self.val_set
    }

    /// Runs one epoch and returns its record. The training loss is the mean
    /// minibatch loss seen during the epoch.
    pub fn run_epoch(&mut self) -> EpochRecord {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for idx in order.chunks(self.config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| self.train_set[i]));
            let (l, g) = backward(&batch, &self.weights, &self.params, &self.config);
            total += l * batch.len() as f64;
            adam_step(self.weights.params_mut(), &g, &mut self.adam, self.config.learning_rate);
        }
        let val_loss = self.val_loss(&self.weights);
        let record = EpochRecord { epoch: self.epoch, train_loss: total / self.train_set.len() as f64, val_loss };
        if val_loss < self.report.best_val_loss() || (self.val_set.is_empty() && record.train_loss.is_finite()) {
            self.best = self.weights.clone();
            self.report.best_epoch = self.epoch;
        }
        self.report.epochs.push(record);
        record
    }

    /// Serialises the full training state.
    pub fn checkpoint(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(self.report.best_epoch as u64).to_le_bytes());
        for w in [&self.weights, &self.best] {
            let bytes = w.to_bytes();
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        for v in self.adam.m.iter().chain(&self.adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.report.epochs.len() as u64).to_le_bytes());
        for r in &self.report.epochs {
            out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            out.extend_from_slice(&r.train_loss.to_le_bytes());
            out.extend_from_slice(&r.val_loss.to_le_bytes());
        }
        out
    }

    /// Restores state written by [`Trainer::checkpoint`] onto a trainer built
    /// from the same dataset and configuration.
    pub fn resume(&mut self, bytes: &[u8]) -> Result<(), TrainError> {
        let state = Checkpoint::decode(bytes)?;
        self.epoch = state.epoch;
        self.weights = state.weights;
        self.best = state.best;
        self.adam = state.adam;
        self.report.best_epoch = state.best_epoch;
        self.report.epochs = state.epochs;
        Ok(())
    }

    pub fn finish(self) -> (NetworkWeights, TrainingReport) {
        (self.best, self.report)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"HEBMCK1";

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub best_epoch: usize,
    pub weights: NetworkWeights,
    pub best: NetworkWeights,
    pub adam: AdamState,
    pub epochs: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader::new(bytes);
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let epoch = r.u64()? as usize;
        let t = r.u64()?;
        let best_epoch = r.u64()? as usize;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| WeightsError::Truncated)?;
            nets.push(NetworkWeights::from_bytes(r.take(len)?)?);
        }
        let mut adam = AdamState::new(PARAM_COUNT);
        for x in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            *x = r.f64()?;
        }
        adam.t = t;
        if adam.m.iter().chain(&adam.v).any(|x| !x.is_finite()) || adam.v.iter().any(|x| *x < 0.0) {
            return Err(WeightsError::NonFinite);
        }
        let n = r.u64()?;
        if n > (bytes.len() / 24) as u64 + 1 {
            return Err(WeightsError::Truncated);
        }
        let mut epochs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            epochs.push(EpochRecord { epoch: r.u64()? as usize, train_loss: r.f64()?, val_loss: r.f64()? });
        }
        r.finish()?;
        let best = nets.pop().expect("two networks");
        let weights = nets.pop().expect("two networks");
        Ok(Self { epoch, best_epoch, weights, best, adam, epochs })
    }
}

/// Trains for `config.epochs` epochs and returns the best-validation
/// weights.
pub fn train(
    dataset: &Dataset,
    config: &TrainingConfig,
    params: &VehicleParams,
) -> Result<(NetworkWeights, TrainingReport), TrainError> {
    let mut trainer = Trainer::new(dataset, config.clone(), params.clone())?;
    for _ in 0..config.epochs {
        trainer.run_epoch();
    }
    Ok(trainer.finish())
}

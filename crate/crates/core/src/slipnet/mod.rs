//! Learned slip-angle predictor: two stacked LSTM layers over a 10-step
//! history of body velocities and commands, followed by a ReLU dense stack
//! that outputs front and rear slip angles.

mod network;
mod train;

pub use network::{forward, forward_batch, ForwardCache};
pub use train::{
    adam_step, backward, batch_loss, loss, loss_with_grad, train, zero_slip_loss, AdamState, Checkpoint, EpochRecord,
    TrainError, Trainer, TrainingConfig, TrainingReport, CHECKPOINT_MAGIC,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Number of time steps the predictor looks back over.
pub const SEQ_LEN: usize = 10;
/// Per-step input features: `(Vx, Vy, yaw rate, V, delta)`.
pub const INPUT_DIM: usize = 5;
pub const LSTM1: usize = 32;
pub const LSTM2: usize = 64;
pub const DENSE: [usize; 3] = [128, 256, 128];
pub const OUTPUT_DIM: usize = 2;

/// Default per-channel input scales used before dataset statistics exist.
pub const DEFAULT_SCALE: [f64; INPUT_DIM] = [30.0, 3.0, 1.0, 30.0, 0.5];

/// Rolling window that feeds the predictor. `states[i]` holds
/// `(Vx, Vy, yaw rate)` at step `k-10+i`; `controls[i]` holds `(V, delta)`
/// at step `k-9+i`, so the last control is the one that produces step `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryBuffer {
    pub states: [[f64; 3]; SEQ_LEN],
    pub controls: [[f64; 2]; SEQ_LEN],
}

impl HistoryBuffer {
    pub fn new(states: [[f64; 3]; SEQ_LEN], controls: [[f64; 2]; SEQ_LEN]) -> Option<Self> {
        let finite = states.iter().flatten().chain(controls.iter().flatten()).all(|v| v.is_finite());
        finite.then_some(Self { states, controls })
    }

    /// A window in which the vehicle has been in one steady condition.
    pub fn steady(state: [f64; 3], control: [f64; 2]) -> Self {
        Self { states: [state; SEQ_LEN], controls: [control; SEQ_LEN] }
    }

    /// Drops the oldest state and appends `state` as the newest.
    pub fn push_state(&mut self, state: [f64; 3]) {
        self.states.copy_within(1.., 0);
        self.states[SEQ_LEN - 1] = state;
    }

    /// Drops the oldest control and appends `control` as the newest.
    pub fn push_control(&mut self, control: [f64; 2]) {
        self.controls.copy_within(1.., 0);
        self.controls[SEQ_LEN - 1] = control;
    }

    /// Input features at step `t` of the window.
    #[inline]
    pub fn features(&self, t: usize) -> [f64; INPUT_DIM] {
        let s = self.states[t];
        let c = self.controls[t];
        [s[0], s[1], s[2], c[0], c[1]]
    }

    /// The `(V, delta)` command applied to reach the predicted step.
    pub fn current_control(&self) -> [f64; 2] {
        self.controls[SEQ_LEN - 1]
    }
}

/// Per-channel affine input scaling: `(x - offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub offset: [f64; INPUT_DIM],
    pub scale: [f64; INPUT_DIM],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { offset: [0.0; INPUT_DIM], scale: DEFAULT_SCALE }
    }
}

impl Normalizer {
    #[inline]
    pub fn apply(&self, x: [f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            out[i] = (x[i] - self.offset[i]) / self.scale[i];
        }
        out
    }
}

/// Shape of one parameter tensor. Vectors have `cols == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub fan_in: usize,
}

impl TensorSpec {
    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }
}

const fn spec(name: &'static str, rows: usize, cols: usize, fan_in: usize) -> TensorSpec {
    TensorSpec { name, rows, cols, fan_in }
}

/// Parameter tensors in storage order. LSTM gate rows are stacked as
/// input, forget, cell, output; dense weights are `(out, in)`.
pub const LAYOUT: [TensorSpec; 14] = [
    spec("lstm1.w_ih", 4 * LSTM1, INPUT_DIM, INPUT_DIM + LSTM1),
    spec("lstm1.w_hh", 4 * LSTM1, LSTM1, INPUT_DIM + LSTM1),
    spec("lstm1.bias", 4 * LSTM1, 1, INPUT_DIM + LSTM1),
    spec("lstm2.w_ih", 4 * LSTM2, LSTM1, LSTM1 + LSTM2),
    spec("lstm2.w_hh", 4 * LSTM2, LSTM2, LSTM1 + LSTM2),
    spec("lstm2.bias", 4 * LSTM2, 1, LSTM1 + LSTM2),
    spec("dense1.w", DENSE[0], LSTM2, LSTM2),
    spec("dense1.b", DENSE[0], 1, LSTM2),
    spec("dense2.w", DENSE[1], DENSE[0], DENSE[0]),
    spec("dense2.b", DENSE[1], 1, DENSE[0]),
    spec("dense3.w", DENSE[2], DENSE[1], DENSE[1]),
    spec("dense3.b", DENSE[2], 1, DENSE[1]),
    spec("out.w", OUTPUT_DIM, DENSE[2], DENSE[2]),
    spec("out.b", OUTPUT_DIM, 1, DENSE[2]),
];

pub(crate) const fn offsets() -> [usize; 15] {
    let mut out = [0; 15];
    let mut i = 0;
    while i < LAYOUT.len() {
        out[i + 1] = out[i] + LAYOUT[i].len();
        i += 1;
    }
    out
}

pub(crate) const OFFSETS: [usize; 15] = offsets();
pub const PARAM_COUNT: usize = OFFSETS[14];

/// Flat parameter vector in [`LAYOUT`] order plus the input scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    params: Vec<f64>,
    pub normalizer: Normalizer,
}

impl NetworkWeights {
    pub fn zeros() -> Self {
        Self { params: vec![0.0; PARAM_COUNT], normalizer: Normalizer::default() }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for t in LAYOUT.iter() {
            let bound = 1.0 / (t.fan_in as f64).sqrt();
            params.extend((0..t.len()).map(|_| rng.gen_range(-bound..bound)));
        }
        Self { params, normalizer: Normalizer::default() }
    }

    pub fn from_params(params: Vec<f64>, normalizer: Normalizer) -> Option<Self> {
        (params.len() == PARAM_COUNT && params.iter().all(|v| v.is_finite())).then_some(Self { params, normalizer })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Slice of tensor `index` in [`LAYOUT`].
    pub fn tensor(&self, index: usize) -> &[f64] {
        &self.params[OFFSETS[index]..OFFSETS[index + 1]]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + PARAM_COUNT * 8 + 512);
        out.extend_from_slice(WEIGHTS_MAGIC);
        write_tensor_table(&mut out);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.normalizer.offset.iter().chain(self.normalizer.scale.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a weights container, rejecting any shape, length or value
    /// that does not match this architecture.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader::new(bytes);
        if r.take(WEIGHTS_MAGIC.len())? != WEIGHTS_MAGIC {
            return Err(WeightsError::BadMagic);
        }
        read_tensor_table(&mut r)?;
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for _ in 0..PARAM_COUNT {
            params.push(r.f64()?);
        }
        let mut normalizer = Normalizer::default();
        for i in 0..INPUT_DIM {
            normalizer.offset[i] = r.f64()?;
        }
        for i in 0..INPUT_DIM {
            normalizer.scale[i] = r.f64()?;
        }
        r.finish()?;
        if params.iter().chain(normalizer.offset.iter()).any(|v| !v.is_finite()) {
            return Err(WeightsError::NonFinite);
        }
        if normalizer.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(WeightsError::NonFinite);
        }
        Ok(Self { params, normalizer })
    }
}

pub const WEIGHTS_MAGIC: &[u8; 5] = b"HEBM1";

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("weights file truncated")]
    Truncated,
    #[error("tensor table does not match the network architecture: {0}")]
    Shape(String),
    #[error("weights contain non-finite values or non-positive scales")]
    NonFinite,
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
}

/// Shape table: tensor count, then `(rows, cols)` per tensor including the
/// two normaliser vectors, all as little-endian `u32`.
fn write_tensor_table(out: &mut Vec<u8>) {
    out.extend_from_slice(&((LAYOUT.len() + 2) as u32).to_le_bytes());
    for t in LAYOUT.iter() {
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    }
    for _ in 0..2 {
        out.extend_from_slice(&(INPUT_DIM as u32).to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
    }
}

fn read_tensor_table(r: &mut Reader<'_>) -> Result<(), WeightsError> {
    let count = r.u32()? as usize;
    if count != LAYOUT.len() + 2 {
        return Err(WeightsError::Shape(format!("expected {} tensors, found {count}", LAYOUT.len() + 2)));
    }
    let expected = LAYOUT.iter().map(|t| (t.rows, t.cols)).chain([(INPUT_DIM, 1), (INPUT_DIM, 1)]);
    for (i, (rows, cols)) in expected.enumerate() {
        let (r_in, c_in) = (r.u32()? as usize, r.u32()? as usize);
        if (r_in, c_in) != (rows, cols) {
            return Err(WeightsError::Shape(format!("tensor {i}: expected {rows}x{cols}, found {r_in}x{c_in}")));
        }
    }
    Ok(())
}

/// Little-endian cursor over an untrusted byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(WeightsError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, WeightsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, WeightsError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<(), WeightsError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(WeightsError::Trailing(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_sizes() {
        assert_eq!(LAYOUT[0].len(), 128 * 5);
        assert_eq!(LAYOUT[4].len(), 256 * 64);
        assert_eq!(PARAM_COUNT, 4864 + 24832 + 8320 + 33024 + 32896 + 258);
    }

    #[test]
    fn init_bounds_and_determinism() {
        let a = NetworkWeights::init(3);
        let b = NetworkWeights::init(3);
        assert_eq!(a, b);
        assert_ne!(a, NetworkWeights::init(4));
        for (i, t) in LAYOUT.iter().enumerate() {
            let bound = 1.0 / (t.fan_in as f64).sqrt();
            assert!(a.tensor(i).iter().all(|v| v.abs() < bound));
        }
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let mut w = NetworkWeights::init(12);
        w.normalizer.offset = [1.0, -0.1, 0.01, 12.5, 0.0];
        w.normalizer.scale = [7.0, 0.4, 0.2, 7.5, 0.25];
        let bytes = w.to_bytes();
        let back = NetworkWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), w.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.normalizer, w.normalizer);
    }

    #[test]
    fn weights_decoder_rejects_malformed_input() {
        let bytes = NetworkWeights::init(1).to_bytes();
        assert_eq!(NetworkWeights::from_bytes(b"HEBM2"), Err(WeightsError::BadMagic));
        assert_eq!(NetworkWeights::from_bytes(&bytes[..bytes.len() - 1]), Err(WeightsError::Truncated));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(NetworkWeights::from_bytes(&extra), Err(WeightsError::Trailing(1)));
        let mut shape = bytes.clone();
        shape[9] = 7;
        assert!(matches!(NetworkWeights::from_bytes(&shape), Err(WeightsError::Shape(_))));
        let mut nan = bytes;
        let at = 5 + 4 + 16 * 8;
        nan[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(NetworkWeights::from_bytes(&nan), Err(WeightsError::NonFinite));
    }

    #[test]
    fn history_shifts() {
        let mut h = HistoryBuffer::steady([1.0, 0.0, 0.0], [1.0, 0.0]);
        h.push_state([2.0, 0.1, 0.2]);
        h.push_control([3.0, 0.3]);
        assert_eq!(h.states[SEQ_LEN - 1], [2.0, 0.1, 0.2]);
        assert_eq!(h.states[SEQ_LEN - 2], [1.0, 0.0, 0.0]);
        assert_eq!(h.current_control(), [3.0, 0.3]);
        assert_eq!(h.features(SEQ_LEN - 1), [2.0, 0.1, 0.2, 3.0, 0.3]);
        assert!(HistoryBuffer::new([[f64::NAN; 3]; SEQ_LEN], [[0.0; 2]; SEQ_LEN]).is_none());
    }
}

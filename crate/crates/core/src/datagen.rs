//! Training data: random torque/steering excitation of the reference
//! simulator, logged at 100 Hz and cut into sliding windows.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::refsim::{FullControl, FullState, RefSim, SimError, CONTROL_DT};
use crate::slipnet::{HistoryBuffer, Normalizer, INPUT_DIM, SEQ_LEN};
use crate::vehicle::{BicycleState, VehicleParams};

/// Samples per trajectory (2 s at 100 Hz).
pub const TRAJECTORY_STEPS: usize = 200;
/// Windows obtainable from one full trajectory.
pub const WINDOWS_PER_TRAJECTORY: usize = TRAJECTORY_STEPS - SEQ_LEN;
/// Attempts per trajectory before giving up on a diverging seed stream.
const MAX_ATTEMPTS: usize = 20;

/// Speed-banded uniform excitation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationPolicy {
    /// Total torque range below `band_edges.0`.
    pub torque_low: (f64, f64),
    /// Total torque range between the band edges (inclusive).
    pub torque_mid: (f64, f64),
    /// Total torque range above `band_edges.1`.
    pub torque_high: (f64, f64),
    pub band_edges: (f64, f64),
    pub steer: (f64, f64),
    /// Hold duration range (s).
    pub hold: (f64, f64),
    /// Initial straight-running speed range (m/s).
    pub initial_speed: (f64, f64),
}

impl Default for ExcitationPolicy {
    fn default() -> Self {
        Self {
            torque_low: (0.0, 800.0),
            torque_mid: (-1000.0, 800.0),
            torque_high: (-1000.0, 0.0),
            band_edges: (10.0, 30.0),
            steer: (-0.5, 0.5),
            hold: (0.01, 1.0),
            initial_speed: (0.0, 35.0),
        }
    }
}

impl ExcitationPolicy {
    pub fn torque_range(&self, v: f64) -> (f64, f64) {
        if v < self.band_edges.0 {
            self.torque_low
        } else if v <= self.band_edges.1 {
            self.torque_mid
        } else {
            self.torque_high
        }
    }
}

/// Draws a total torque demand for the current speed band and a steering
/// angle, and splits the torque across the wheels.
pub fn sample_controls<R: Rng>(v: f64, policy: &ExcitationPolicy, params: &VehicleParams, rng: &mut R) -> FullControl {
    let (lo, hi) = policy.torque_range(v);
    let total = rng.gen_range(lo..=hi);
    let delta = rng.gen_range(policy.steer.0..=policy.steer.1);
    FullControl::from_total(total, delta, params)
}

fn hold_steps<R: Rng>(policy: &ExcitationPolicy, rng: &mut R) -> usize {
    let seconds = rng.gen_range(policy.hold.0..=policy.hold.1);
    let lo = (policy.hold.0 / CONTROL_DT).round().max(1.0) as usize;
    let hi = (policy.hold.1 / CONTROL_DT).round() as usize;
    ((seconds / CONTROL_DT).round() as usize).clamp(lo, hi.max(lo))
}

/// One logged 100 Hz sample. `v` is the measured scalar speed and `delta`
/// the steering command that was applied to reach this sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawRow {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub v: f64,
    pub delta: f64,
    pub pose: BicycleState,
    pub torque: f64,
    pub ay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTrajectory {
    pub traj_id: u64,
    pub rows: Vec<RawRow>,
}

impl RawTrajectory {
    /// Lengths (in steps) of the runs over which the applied command stayed
    /// constant. Row 0 carries no applied command and is skipped.
    pub fn hold_runs(&self) -> Vec<usize> {
        let mut runs: Vec<usize> = Vec::new();
        let mut prev = None;
        for r in self.rows.iter().skip(1) {
            let key = (r.delta, r.torque);
            match runs.last_mut() {
                Some(n) if prev == Some(key) => *n += 1,
                _ => runs.push(1),
            }
            prev = Some(key);
        }
        runs
    }
}

/// Excites the simulator from a random straight-running state for exactly
/// [`TRAJECTORY_STEPS`] samples.
pub fn generate_trajectory<R: Rng>(
    traj_id: u64,
    params: &VehicleParams,
    policy: &ExcitationPolicy,
    rng: &mut R,
) -> Result<RawTrajectory, SimError> {
    let v0 = rng.gen_range(policy.initial_speed.0..=policy.initial_speed.1);
    let mut sim = RefSim::new(params.clone(), FullState::straight(0.0, 0.0, 0.0, v0, params));
    let mut control = sample_controls(v0, policy, params, rng);
    let mut hold_left = hold_steps(policy, rng);
    let mut rows = Vec::with_capacity(TRAJECTORY_STEPS);
    let first = sim.diagnostics(&control);
    rows.push(row(&sim, &control, first.ay));
    for _ in 1..TRAJECTORY_STEPS {
        if hold_left == 0 {
            control = sample_controls(sim.measure().v, policy, params, rng);
            hold_left = hold_steps(policy, rng);
        }
        let diag = sim.advance(&control)?;
        hold_left -= 1;
        rows.push(row(&sim, &control, diag.ay));
    }
    Ok(RawTrajectory { traj_id, rows })
}

fn row(sim: &RefSim, control: &FullControl, ay: f64) -> RawRow {
    let m = sim.measure();
    let s = &sim.state;
    RawRow {
        vx: m.vx,
        vy: m.vy,
        yaw_rate: m.psi_dot,
        v: m.v,
        delta: control.delta,
        pose: BicycleState::new(s.x, s.y, s.psi),
        torque: control.total_torque(),
        ay,
    }
}

/// One training window: history up to `k-1`, the command for `k`, and the
/// measured body velocities at `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample {
    pub history: HistoryBuffer,
    /// `(Vx, Vy, yaw rate)` at step `k`.
    pub target: [f64; 3],
    pub prev_pose: BicycleState,
    pub dt: f64,
    pub traj_id: u64,
    pub step: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("trajectory {0} diverged on every attempt")]
    Divergence(u64),
    #[error("dataset line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("metadata: {0}")]
    Metadata(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<RawTrajectory>,
    pub normalizer: Normalizer,
    /// Trajectories regenerated after a simulator divergence.
    pub divergences: usize,
    pub seed: u64,
}

/// Per-trajectory random stream derived from the global seed.
pub fn trajectory_rng(seed: u64, traj_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj_id);
    rng
}

/// Generates `n_traj` trajectories, regenerating any that diverge, and
/// computes input normalisation statistics.
pub fn build_dataset(
    n_traj: usize,
    policy: &ExcitationPolicy,
    params: &VehicleParams,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let results: Vec<Result<(RawTrajectory, usize), DatasetError>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = trajectory_rng(seed, id);
            for attempt in 0..MAX_ATTEMPTS {
                if let Ok(t) = generate_trajectory(id, params, policy, &mut rng) {
                    return Ok((t, attempt));
                }
            }
            Err(DatasetError::Divergence(id))
        })
        .collect();
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut divergences = 0;
    for r in results {
        let (t, retries) = r?;
        divergences += retries;
        trajectories.push(t);
    }
    let normalizer = compute_normalizer(&trajectories);
    Ok(Dataset { trajectories, normalizer, divergences, seed })
}

fn compute_normalizer(trajectories: &[RawTrajectory]) -> Normalizer {
    let mut sum = [0.0; INPUT_DIM];
    let mut sum_sq = [0.0; INPUT_DIM];
    let mut n = 0.0;
    for r in trajectories.iter().flat_map(|t| t.rows.iter()) {
        let x = [r.vx, r.vy, r.yaw_rate, r.v, r.delta];
        for i in 0..INPUT_DIM {
            sum[i] += x[i];
            sum_sq[i] += x[i] * x[i];
        }
        n += 1.0;
    }
    let mut norm = Normalizer::default();
    if n < 2.0 {
        return norm;
    }
    for i in 0..INPUT_DIM {
        let mean = sum[i] / n;
        let var = (sum_sq[i] / n - mean * mean).max(0.0);
        norm.offset[i] = mean;
        if var.sqrt() > 1e-6 {
            norm.scale[i] = var.sqrt();
        }
    }
    norm
}

/// Sliding windows (stride 1) of one trajectory.
pub fn trajectory_windows(t: &RawTrajectory) -> Vec<TrainingSample> {
    let rows = &t.rows;
    (SEQ_LEN..rows.len())
        .map(|k| {
            let mut states = [[0.0; 3]; SEQ_LEN];
            let mut controls = [[0.0; 2]; SEQ_LEN];
            for i in 0..SEQ_LEN {
                let s = &rows[k - SEQ_LEN + i];
                states[i] = [s.vx, s.vy, s.yaw_rate];
                let c = &rows[k - SEQ_LEN + 1 + i];
                controls[i] = [c.v, c.delta];
            }
            let target = &rows[k];
            TrainingSample {
                history: HistoryBuffer { states, controls },
                target: [target.vx, target.vy, target.yaw_rate],
                prev_pose: rows[k - 1].pose,
                dt: CONTROL_DT,
                traj_id: t.traj_id,
                step: k,
            }
        })
        .collect()
}

impl Dataset {
    pub fn windows(&self) -> Vec<TrainingSample> {
        self.trajectories.iter().flat_map(trajectory_windows).collect()
    }

    pub fn window_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.rows.len().saturating_sub(SEQ_LEN)).sum()
    }

    /// Largest |a_y| seen in the data, in g.
    pub fn ay_quantile_g(&self, q: f64, g: f64) -> f64 {
        let mut ay: Vec<f64> = self.trajectories.iter().flat_map(|t| t.rows.iter().map(|r| r.ay.abs() / g)).collect();
        if ay.is_empty() {
            return 0.0;
        }
        ay.sort_by(f64::total_cmp);
        let idx = ((ay.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
        ay[idx]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(DATASET_HEADER);
        out.push('\n');
        for t in &self.trajectories {
            for (step, r) in t.rows.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{},{},{}", t.traj_id, step, r.vx, r.vy, r.yaw_rate, r.v, r.delta);
            }
        }
        out
    }

    /// Parses the dataset CSV. Pose, torque and a_y columns are not part of
    /// the file format and come back zeroed.
    pub fn from_csv(text: &str, normalizer: Normalizer, seed: u64) -> Result<Self, DatasetError> {
        let (header, lines) = crate::csvutil::split_header(text)
            .ok_or(DatasetError::Parse { line: 1, msg: "empty dataset".into() })?;
        if header != DATASET_HEADER {
            return Err(DatasetError::Parse { line: 1, msg: format!("expected header `{DATASET_HEADER}`") });
        }
        let mut trajectories: Vec<RawTrajectory> = Vec::new();
        for (line, l) in lines {
            let v = crate::csvutil::parse_f64_row(l, 7).map_err(|msg| DatasetError::Parse { line, msg })?;
            let (id, step) = (v[0], v[1]);
            if id < 0.0 || id.fract() != 0.0 || step < 0.0 || step.fract() != 0.0 || id > u32::MAX as f64 {
                return Err(DatasetError::Parse { line, msg: "traj_id and step must be non-negative integers".into() });
            }
            let (id, step) = (id as u64, step as usize);
            let row = RawRow { vx: v[2], vy: v[3], yaw_rate: v[4], v: v[5], delta: v[6], ..RawRow::default() };
            match trajectories.last_mut() {
                Some(t) if t.traj_id == id => {
                    if step != t.rows.len() {
                        return Err(DatasetError::Parse { line, msg: format!("expected step {}", t.rows.len()) });
                    }
                    t.rows.push(row);
                }
                last => {
                    if last.is_some_and(|t| t.traj_id >= id) {
                        return Err(DatasetError::Parse { line, msg: "trajectory ids must increase".into() });
                    }
                    if step != 0 {
                        return Err(DatasetError::Parse { line, msg: "trajectory must start at step 0".into() });
                    }
                    trajectories.push(RawTrajectory { traj_id: id, rows: vec![row] });
                }
            }
        }
        Ok(Self { trajectories, normalizer, divergences: 0, seed })
    }

    /// Sidecar metadata as `key=value` lines.
    pub fn metadata(&self, params: &VehicleParams, csv: &str) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "seed={}\nn_traj={}\nparams_hash={}\ndataset_sha256={}\ndivergences={}\nnorm_offset={}\nnorm_scale={}\n",
            self.seed,
            self.trajectories.len(),
            params_fingerprint(params),
            sha256_hex(csv.as_bytes()),
            self.divergences,
            join(&self.normalizer.offset),
            join(&self.normalizer.scale),
        )
    }
}

pub const DATASET_HEADER: &str = "traj_id,step,vx,vy,yaw_rate,v_cmd,delta_cmd";

/// Parsed sidecar metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_traj: usize,
    pub params_hash: String,
    pub dataset_sha256: String,
    pub divergences: usize,
    pub normalizer: Normalizer,
}

pub fn parse_metadata(text: &str) -> Result<DatasetMeta, DatasetError> {
    let mut get = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| DatasetError::Metadata(format!("malformed line `{line}`")))?;
        get.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |k: &str| get.get(k).cloned().ok_or_else(|| DatasetError::Metadata(format!("missing `{k}`")));
    let num = |k: &str| -> Result<u64, DatasetError> {
        field(k)?.parse().map_err(|_| DatasetError::Metadata(format!("`{k}` is not an integer")))
    };
    let vec5 = |k: &str| -> Result<[f64; INPUT_DIM], DatasetError> {
        let s = field(k)?;
        let v = crate::csvutil::parse_f64_row(&s, INPUT_DIM).map_err(|m| DatasetError::Metadata(format!("`{k}`: {m}")))?;
        Ok([v[0], v[1], v[2], v[3], v[4]])
    };
    let normalizer = Normalizer { offset: vec5("norm_offset")?, scale: vec5("norm_scale")? };
    if normalizer.scale.iter().any(|s| *s <= 0.0) {
        return Err(DatasetError::Metadata("scales must be positive".into()));
    }
    Ok(DatasetMeta {
        seed: num("seed")?,
        n_traj: num("n_traj")? as usize,
        params_hash: field("params_hash")?,
        dataset_sha256: field("dataset_sha256")?,
        divergences: num("divergences")? as usize,
        normalizer,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable fingerprint of a parameter set.
pub fn params_fingerprint(params: &VehicleParams) -> String {
    sha256_hex(format!("{params:?}").as_bytes())[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torque_bands_respected() {
        let p = VehicleParams::default();
        let policy = ExcitationPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let low = sample_controls(5.0, &policy, &p, &mut rng);
            assert!((0.0..=800.0).contains(&low.total_torque()));
            assert!(low.torque.iter().all(|t| *t >= 0.0));
            let high = sample_controls(35.0, &policy, &p, &mut rng);
            assert!(high.total_torque() <= 0.0 && high.total_torque() >= -1000.0 - 1e-9);
            let mid = sample_controls(20.0, &policy, &p, &mut rng);
            assert!(mid.total_torque() >= -1000.0 - 1e-9 && mid.total_torque() <= 800.0);
            assert!(mid.delta.abs() <= 0.5);
        }
    }

    #[test]
    fn band_edges() {
        let policy = ExcitationPolicy::default();
        assert_eq!(policy.torque_range(9.999), (0.0, 800.0));
        assert_eq!(policy.torque_range(10.0), (-1000.0, 800.0));
        assert_eq!(policy.torque_range(30.0), (-1000.0, 800.0));
        assert_eq!(policy.torque_range(30.001), (-1000.0, 0.0));
    }

    #[test]
    fn trajectory_shape_and_holds() {
        let p = VehicleParams::default();
        let policy = ExcitationPolicy::default();
        let mut rng = trajectory_rng(4, 0);
        let t = generate_trajectory(0, &p, &policy, &mut rng).unwrap();
        assert_eq!(t.rows.len(), TRAJECTORY_STEPS);
        let runs = t.hold_runs();
        assert_eq!(runs.iter().sum::<usize>(), TRAJECTORY_STEPS - 1);
        assert!(runs.iter().all(|&r| (1..=100).contains(&r)), "{runs:?}");
        let again = generate_trajectory(0, &p, &policy, &mut trajectory_rng(4, 0)).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn windows_align_with_log() {
        let p = VehicleParams::default();
        let ds = build_dataset(2, &ExcitationPolicy::default(), &p, 9).unwrap();
        let windows = ds.windows();
        assert_eq!(windows.len(), 2 * WINDOWS_PER_TRAJECTORY);
        assert_eq!(ds.window_count(), windows.len());
        for w in windows.iter().step_by(37) {
            let rows = &ds.trajectories[w.traj_id as usize].rows;
            let k = w.step;
            assert_eq!(w.target, [rows[k].vx, rows[k].vy, rows[k].yaw_rate]);
            assert_eq!(w.history.current_control(), [rows[k].v, rows[k].delta]);
            assert_eq!(w.history.states[0], [rows[k - 10].vx, rows[k - 10].vy, rows[k - 10].yaw_rate]);
            assert_eq!(w.history.states[9], [rows[k - 1].vx, rows[k - 1].vy, rows[k - 1].yaw_rate]);
            assert_eq!(w.history.controls[0], [rows[k - 9].v, rows[k - 9].delta]);
        }
    }

    #[test]
    fn csv_and_metadata_round_trip() {
        let p = VehicleParams::default();
        let ds = build_dataset(3, &ExcitationPolicy::default(), &p, 2).unwrap();
        let csv = ds.to_csv();
        let meta = parse_metadata(&ds.metadata(&p, &csv)).unwrap();
        assert_eq!(meta.n_traj, 3);
        assert_eq!(meta.normalizer, ds.normalizer);
        assert_eq!(meta.dataset_sha256, sha256_hex(csv.as_bytes()));
        let back = Dataset::from_csv(&csv, meta.normalizer, meta.seed).unwrap();
        assert_eq!(back.windows().iter().map(|w| (w.history, w.target)).collect::<Vec<_>>(),
            ds.windows().iter().map(|w| (w.history, w.target)).collect::<Vec<_>>());
        assert!(Dataset::from_csv("traj_id,step\n", meta.normalizer, 0).is_err());
        let gap = format!("{DATASET_HEADER}\n0,0,1,0,0,1,0\n0,2,1,0,0,1,0\n");
        assert!(Dataset::from_csv(&gap, meta.normalizer, 0).is_err());
    }

    #[test]
    fn dataset_is_reproducible() {
        let p = VehicleParams::default();
        let a = build_dataset(4, &ExcitationPolicy::default(), &p, 17).unwrap().to_csv();
        let b = build_dataset(4, &ExcitationPolicy::default(), &p, 17).unwrap().to_csv();
        assert_eq!(sha256_hex(a.as_bytes()), sha256_hex(b.as_bytes()));
        let c = build_dataset(4, &ExcitationPolicy::default(), &p, 18).unwrap().to_csv();
        assert_ne!(a, c);
    }
}

//! Sampling-based model predictive path integral planner.
//!
//! Each plan perturbs the warm-started command sequence with `K` bounded
//! noise draws, rolls every perturbation through a [`RolloutModel`],
//! and moves the sequence towards the softmin-weighted average perturbation.
//! The result is smoothed with a Savitzky-Golay filter and clamped to the
//! actuator envelope.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bicycle::{ebm_derivative, integrate_step, kbm_derivative};
use crate::slipnet::{forward_batch, HistoryBuffer, NetworkWeights};
use crate::vehicle::{nearest_path_point, wrap_to_pi, BicycleControl, BicycleState, PathRef, VehicleParams};

#[derive(Clone, Debug, PartialEq)]
pub struct MppiParams {
    /// Softmin temperature.
    pub lambda: f64,
    /// Exploration factor in the control cost.
    pub nu: f64,
    pub samples: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of the control weight `R` for `(V, delta)`.
    pub r: [f64; 2],
    /// Diagonal of the pose weight for `(X, Y, psi)`.
    pub q_z: [f64; 3],
    pub q_v: f64,
    pub noise_v: (f64, f64),
    pub noise_delta: (f64, f64),
    pub noise_law: NoiseLaw,
    /// Consecutive steps that share one noise draw.
    pub noise_hold: usize,
    pub sg_window: usize,
    pub sg_order: usize,
    pub sg_edge: EdgeMode,
    pub v_max: f64,
    pub delta_max: f64,
    /// Commands executed between consecutive plans.
    pub controls_per_plan: usize,
    pub seed: u64,
}

impl Default for MppiParams {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            nu: 1000.0,
            samples: 1024,
            horizon: 100,
            dt: 0.01,
            r: [1e-2, 1e-2],
            q_z: [4.0, 4.0, 40.0],
            q_v: 3.0,
            noise_v: (-0.08, 0.05),
            noise_delta: (-0.02, 0.02),
            noise_law: NoiseLaw::default(),
            noise_hold: 10,
            sg_window: 11,
            sg_order: 3,
            sg_edge: EdgeMode::Interp,
            v_max: 40.0,
            delta_max: BicycleControl::MAX_STEER,
            controls_per_plan: 5,
            seed: 0,
        }
    }
}

/// Distribution of the exploration noise inside its bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseLaw {
    #[default]
    Uniform,
    /// Gaussian centred on the middle of the range with a standard deviation
    /// of a quarter of its width, resampled until it falls inside.
    TruncatedGaussian,
}

#[derive(Debug, Error, PartialEq)]
pub enum MppiError {
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("vehicle has reached the end of an open path")]
    DegeneratePath,
}

impl MppiParams {
    /// Desk-scale sample count.
    pub fn desk() -> Self {
        Self { samples: 256, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), MppiError> {
        let bad = |m: &str| Err(MppiError::InvalidParams(m.into()));
        if self.samples == 0 || self.horizon == 0 {
            return bad("sample count and horizon must be at least 1");
        }
        if !(self.lambda > 0.0) || !(self.nu > 0.0) || !(self.dt > 0.0) {
            return bad("lambda, nu and dt must be positive");
        }
        if self.r.iter().any(|r| !(*r > 0.0)) {
            return bad("R must be positive definite");
        }
        if self.q_z.iter().chain([&self.q_v]).any(|q| !(*q >= 0.0)) {
            return bad("state weights must be non-negative");
        }
        if !(self.noise_v.0 <= self.noise_v.1) || !(self.noise_delta.0 <= self.noise_delta.1) {
            return bad("noise ranges must be non-empty");
        }
        if self.noise_hold == 0 {
            return bad("noise hold must be at least one step");
        }
        if self.controls_per_plan == 0 || self.controls_per_plan > self.horizon {
            return bad("controls per plan must lie in 1..=horizon");
        }
        if self.sg_window > self.horizon {
            return bad("smoothing window longer than the horizon");
        }
        savgol_coefficients(self.sg_window, self.sg_order, self.sg_window / 2)?;
        Ok(())
    }

    fn clamp(&self, v: f64, delta: f64) -> BicycleControl {
        BicycleControl { v: v.clamp(0.0, self.v_max), delta: delta.clamp(-self.delta_max, self.delta_max) }
    }
}

/// Planned `(V, delta)` commands, one per planner step.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<BicycleControl>,
}

impl ControlSequence {
    pub fn constant(control: BicycleControl, n: usize) -> Self {
        Self { controls: vec![control; n] }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Drops the first `n` commands and repeats the last one to keep the length.
    pub fn shift(&mut self, n: usize) {
        let Some(&last) = self.controls.last() else { return };
        let n = n.min(self.controls.len());
        self.controls.drain(..n);
        self.controls.extend(std::iter::repeat(last).take(n));
    }
}

/// Dynamics used inside the planner rollouts. Every rollout carries its own
/// context; stepping is batched so that learned models can evaluate all
/// rollouts in one pass.
pub trait RolloutModel {
    type Context: Clone;

    fn step_batch(&self, poses: &mut [BicycleState], contexts: &mut [Self::Context], controls: &[BicycleControl], dt: f64);
}

/// Kinematic bicycle rollouts.
pub struct KbmModel {
    pub params: VehicleParams,
}

impl RolloutModel for KbmModel {
    type Context = ();

    fn step_batch(&self, poses: &mut [BicycleState], _: &mut [()], controls: &[BicycleControl], dt: f64) {
        for (pose, u) in poses.iter_mut().zip(controls) {
            *pose = integrate_step(pose, &kbm_derivative(pose, u, &self.params), dt);
        }
    }
}

/// Extended bicycle rollouts with learned slip angles. The history state
/// channels are filled with the model's own body-frame velocities.
pub struct HebmModel<'a> {
    pub params: VehicleParams,
    pub weights: &'a NetworkWeights,
}

impl RolloutModel for HebmModel<'_> {
    type Context = HistoryBuffer;

    fn step_batch(&self, poses: &mut [BicycleState], contexts: &mut [HistoryBuffer], controls: &[BicycleControl], dt: f64) {
        for (h, u) in contexts.iter_mut().zip(controls) {
            h.push_control([u.v, u.delta]);
        }
        let slips = forward_batch(contexts, self.weights);
        for ((pose, h), (u, s)) in poses.iter_mut().zip(contexts.iter_mut()).zip(controls.iter().zip(&slips)) {
            let d = ebm_derivative(pose, u, s, &self.params);
            let (vx, vy) = d.body_velocity(u.v);
            h.push_state([vx, vy, d.psi_dot]);
            *pose = integrate_step(pose, &d, dt);
        }
    }
}

/// Pose and speed tracking cost against a path sample.
pub fn state_cost(z: &BicycleState, v_cmd: f64, reference: &crate::vehicle::PathSample, v_ref: f64, p: &MppiParams) -> f64 {
    let ex = z.x - reference.x;
    let ey = z.y - reference.y;
    let epsi = wrap_to_pi(z.psi - reference.psi);
    let ev = v_cmd - v_ref;
    p.q_z[0] * ex * ex + p.q_z[1] * ey * ey + p.q_z[2] * epsi * epsi + p.q_v * ev * ev
}

/// Control part of the running cost for nominal command `u` and noise `du`.
pub fn control_cost(u: &BicycleControl, du: [f64; 2], p: &MppiParams) -> f64 {
    let uu = [u.v, u.delta];
    let mut noise = 0.0;
    let mut cross = 0.0;
    let mut nominal = 0.0;
    for i in 0..2 {
        noise += du[i] * p.r[i] * du[i];
        cross += uu[i] * p.r[i] * du[i];
        nominal += uu[i] * p.r[i] * uu[i];
    }
    0.5 * (1.0 - 1.0 / p.nu) * noise + cross + 0.5 * nominal
}

/// Running cost of pose `z` reached under nominal command `u` plus noise
/// `du`. Returns the cost and the nearest path index, to be reused as the
/// next search hint.
pub fn running_cost(
    z: &BicycleState,
    u: &BicycleControl,
    du: [f64; 2],
    path: &PathRef,
    hint: usize,
    p: &MppiParams,
) -> (f64, usize) {
    let (idx, _) = nearest_path_point(path, z.x, z.y, hint);
    let applied = p.clamp(u.v + du[0], u.delta + du[1]);
    (state_cost(z, applied.v, path.sample(idx), path.v_desired, p) + control_cost(u, du, p), idx)
}

/// Accumulated cost of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutCost<C> {
    pub running: f64,
    pub terminal: f64,
    pub pose: BicycleState,
    pub context: C,
    pub hint: usize,
    pub trajectory: Vec<BicycleState>,
}

impl<C> RolloutCost<C> {
    pub fn total(&self) -> f64 {
        self.running + self.terminal
    }
}

/// Rolls `controls + noise` through `model` from one start pose, adding
/// the running cost after each step and the terminal cost at the end.
pub fn rollout<M: RolloutModel>(
    model: &M,
    z0: BicycleState,
    context: M::Context,
    controls: &[BicycleControl],
    noise: &[[f64; 2]],
    path: &PathRef,
    hint: usize,
    p: &MppiParams,
) -> RolloutCost<M::Context> {
    assert_eq!(controls.len(), noise.len());
    let mut pose = [z0];
    let mut ctx = [context];
    let mut hint = hint;
    let mut running = 0.0;
    let mut trajectory = Vec::with_capacity(controls.len() + 1);
    trajectory.push(z0);
    let mut last_v = path.v_desired;
    for (u, du) in controls.iter().zip(noise) {
        let applied = p.clamp(u.v + du[0], u.delta + du[1]);
        model.step_batch(&mut pose, &mut ctx, &[applied], p.dt);
        let (c, idx) = running_cost(&pose[0], u, *du, path, hint, p);
        running += c;
        hint = idx;
        last_v = applied.v;
        trajectory.push(pose[0]);
    }
    let (idx, _) = nearest_path_point(path, pose[0].x, pose[0].y, hint);
    let terminal = state_cost(&pose[0], last_v, path.sample(idx), path.v_desired, p);
    let [context] = ctx;
    RolloutCost { running, terminal, pose: pose[0], context, hint: idx, trajectory }
}

/// Normalised softmin weights `exp(-(S_k - S_min) / lambda)`.
pub fn softmin_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - min) / lambda).exp()).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    w
}

/// Adds the softmin-weighted average noise to every command. `noises[k][t]`
/// is the perturbation of sample `k` at step `t`.
pub fn mppi_update(costs: &[f64], noises: &[Vec<[f64; 2]>], controls: &ControlSequence, lambda: f64) -> ControlSequence {
    assert!(!costs.is_empty() && costs.len() == noises.len());
    let w = softmin_weights(costs, lambda);
    let mut out = controls.clone();
    for (t, u) in out.controls.iter_mut().enumerate() {
        let (mut dv, mut dd) = (0.0, 0.0);
        for (wk, n) in w.iter().zip(noises) {
            dv += wk * n[t][0];
            dd += wk * n[t][1];
        }
        u.v += dv;
        u.delta += dd;
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid Savitzky-Golay filter: window {window}, order {order}, length {len}")]
    InvalidFilterSpec { window: usize, order: usize, len: usize },
}

/// Least-squares weights that evaluate, at offset `at` inside a window of
/// `window` samples, the degree-`order` polynomial fitted to that window.
pub fn savgol_coefficients(window: usize, order: usize, at: usize) -> Result<Vec<f64>, FilterError> {
    if window % 2 == 0 || order >= window || at >= window {
        return Err(FilterError::InvalidFilterSpec { window, order, len: window });
    }
    let half = (window / 2) as f64;
    let m = order + 1;
    let xs: Vec<f64> = (0..window).map(|i| (i as f64 - half) / half.max(1.0)).collect();
    let powers = |x: f64| (0..m).map(move |j| x.powi(j as i32));
    // normal matrix A^T A, solved against e(at) to get weights = A (A^T A)^-1 e(at)
    let mut ata = vec![vec![0.0; m]; m];
    for &x in &xs {
        let p: Vec<f64> = powers(x).collect();
        for r in 0..m {
            for c in 0..m {
                ata[r][c] += p[r] * p[c];
            }
        }
    }
    let rhs: Vec<f64> = powers(xs[at]).collect();
    let y = solve_small(ata, rhs);
    Ok(xs.iter().map(|&x| powers(x).zip(&y).map(|(a, b)| a * b).sum()).collect())
}

/// Gaussian elimination with partial pivoting for the tiny normal systems.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// How the first and last `window / 2` samples are filtered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeMode {
    /// Evaluate the polynomial fitted to the nearest full window.
    #[default]
    Interp,
    /// Reflect the signal about the end samples and convolve.
    Mirror,
}

/// Savitzky-Golay smoothing of one channel.
pub fn savitzky_golay(xs: &[f64], window: usize, order: usize, mode: EdgeMode) -> Result<Vec<f64>, FilterError> {
    let n = xs.len();
    if window % 2 == 0 || order >= window || n < window {
        return Err(FilterError::InvalidFilterSpec { window, order, len: n });
    }
    let half = window / 2;
    let centre = savgol_coefficients(window, order, half)?;
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = centre.iter().zip(&xs[i - half..=i + half]).map(|(c, x)| c * x).sum();
    }
    match mode {
        EdgeMode::Interp => {
            for j in 0..half {
                let c = savgol_coefficients(window, order, j)?;
                out[j] = c.iter().zip(&xs[..window]).map(|(c, x)| c * x).sum();
                let c = savgol_coefficients(window, order, window - 1 - j)?;
                out[n - 1 - j] = c.iter().zip(&xs[n - window..]).map(|(c, x)| c * x).sum();
            }
        }
        EdgeMode::Mirror => {
            let at = |k: isize| -> f64 {
                let last = n as isize - 1;
                let idx = if k < 0 { -k } else if k > last { 2 * last - k } else { k };
                xs[idx as usize]
            };
            for i in (0..half).chain(n - half..n) {
                out[i] = centre.iter().enumerate().map(|(j, c)| c * at(i as isize + j as isize - half as isize)).sum();
            }
        }
    }
    Ok(out)
}

/// One noise draw inside `range` under `law`.
pub fn bounded_noise<R: Rng>(range: (f64, f64), law: NoiseLaw, rng: &mut R) -> f64 {
    let (lo, hi) = range;
    if hi <= lo {
        return lo;
    }
    if law == NoiseLaw::Uniform {
        return rng.gen_range(lo..hi);
    }
    let mid = 0.5 * (lo + hi);
    let sigma = (hi - lo) / 4.0;
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mid + sigma * z;
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

/// Per-plan diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutput {
    /// Commands to execute before the next plan.
    pub controls: Vec<BicycleControl>,
    /// Full smoothed and clamped sequence.
    pub sequence: ControlSequence,
    pub cost_min: f64,
    pub cost_mean: f64,
    /// Cost of the updated sequence before smoothing, rolled out without noise.
    pub updated_cost: f64,
    /// Noise-free rollout of `sequence`.
    pub trajectory: Vec<BicycleState>,
}

/// Planner state carried between plans.
#[derive(Clone, Debug)]
pub struct Planner {
    pub params: MppiParams,
    pub sequence: ControlSequence,
    pub iteration: u64,
    hint: usize,
}

impl Planner {
    pub fn new(params: MppiParams, initial: BicycleControl) -> Result<Self, MppiError> {
        params.validate()?;
        let sequence = ControlSequence::constant(params.clamp(initial.v, initial.delta), params.horizon);
        Ok(Self { params, sequence, iteration: 0, hint: 0 })
    }

    fn draw_noise(&self) -> Vec<Vec<[f64; 2]>> {
        let p = &self.params;
        (0..p.samples as u64)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ self.iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                rng.set_stream(k);
                let mut out = Vec::with_capacity(p.horizon);
                while out.len() < p.horizon {
                    let draw = [bounded_noise(p.noise_v, p.noise_law, &mut rng), bounded_noise(p.noise_delta, p.noise_law, &mut rng)];
                    let n = p.noise_hold.min(p.horizon - out.len());
                    out.extend(std::iter::repeat(draw).take(n));
                }
                out
            })
            .collect()
    }

    /// Runs one plan from the measured pose and model context, then shifts
    /// the warm start by `controls_per_plan`.
    pub fn plan<M: RolloutModel>(
        &mut self,
        model: &M,
        pose: BicycleState,
        context: &M::Context,
        path: &PathRef,
    ) -> Result<PlanOutput, MppiError> {
        let p = self.params.clone();
        let (hint, _) = nearest_path_point(path, pose.x, pose.y, self.hint);
        if !path.is_closed() && hint + 1 >= path.len() {
            return Err(MppiError::DegeneratePath);
        }
        self.hint = hint;
        let noises = self.draw_noise();
        let k = p.samples;
        let mut poses = vec![pose; k];
        let mut contexts = vec![context.clone(); k];
        let mut hints = vec![hint; k];
        let mut costs = vec![0.0; k];
        let mut last_v = vec![path.v_desired; k];
        let mut applied = vec![BicycleControl::default(); k];
        for t in 0..p.horizon {
            let u = self.sequence.controls[t];
            for (a, n) in applied.iter_mut().zip(&noises) {
                *a = p.clamp(u.v + n[t][0], u.delta + n[t][1]);
            }
            model.step_batch(&mut poses, &mut contexts, &applied, p.dt);
            for j in 0..k {
                let (c, idx) = running_cost(&poses[j], &u, noises[j][t], path, hints[j], &p);
                costs[j] += c;
                hints[j] = idx;
                last_v[j] = applied[j].v;
            }
        }
        for j in 0..k {
            let (idx, _) = nearest_path_point(path, poses[j].x, poses[j].y, hints[j]);
            costs[j] += state_cost(&poses[j], last_v[j], path.sample(idx), path.v_desired, &p);
        }
        let cost_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let cost_mean = costs.iter().sum::<f64>() / k as f64;

        let updated = mppi_update(&costs, &noises, &self.sequence, p.lambda);
        let zeros = vec![[0.0; 2]; p.horizon];
        let updated_cost = rollout(model, pose, context.clone(), &updated.controls, &zeros, path, hint, &p).total();

        let v: Vec<f64> = updated.controls.iter().map(|c| c.v).collect();
        let d: Vec<f64> = updated.controls.iter().map(|c| c.delta).collect();
        let v = savitzky_golay(&v, p.sg_window, p.sg_order, p.sg_edge)?;
        let d = savitzky_golay(&d, p.sg_window, p.sg_order, p.sg_edge)?;
        let sequence = ControlSequence { controls: v.iter().zip(&d).map(|(&v, &d)| p.clamp(v, d)).collect() };
        let trajectory = rollout(model, pose, context.clone(), &sequence.controls, &zeros, path, hint, &p).trajectory;

        let controls = sequence.controls[..p.controls_per_plan].to_vec();
        self.sequence = sequence.clone();
        self.sequence.shift(p.controls_per_plan);
        self.iteration += 1;
        Ok(PlanOutput { controls, sequence, cost_min, cost_mean, updated_cost, trajectory })
    }
}

/// One planner log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanLogRow {
    pub iter: u64,
    pub t: f64,
    pub cost_min: f64,
    pub cost_mean: f64,
    pub v_cmd0: f64,
    pub delta_cmd0: f64,
}

pub const PLAN_LOG_HEADER: &str = "iter,t,cost_min,cost_mean,v_cmd0,delta_cmd0";

pub fn plan_log_to_csv(rows: &[PlanLogRow]) -> String {
    let mut out = format!("{PLAN_LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.iter, r.t, r.cost_min, r.cost_mean, r.v_cmd0, r.delta_cmd0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::PathSample;

    fn straight(v: f64) -> PathRef {
        let pts: Vec<(f64, f64)> = (0..=200).map(|i| (i as f64, 0.0)).collect();
        PathRef::from_polyline(&pts, v).unwrap()
    }

    #[test]
    fn cost_examples() {
        let p = MppiParams::default();
        let s = PathSample { s: 0.0, x: 0.0, y: 0.0, psi: 0.0, kappa: 0.0 };
        assert_eq!(state_cost(&BicycleState::new(0.0, 0.0, 0.0), 5.0, &s, 5.0, &p), 0.0);
        assert_eq!(state_cost(&BicycleState::new(0.0, 1.0, 0.0), 0.0, &s, 0.0, &p), 4.0);
        assert_eq!(control_cost(&BicycleControl::default(), [0.0; 2], &p), 0.0);
        let path = straight(0.0);
        let (c, _) = running_cost(&BicycleState::new(50.0, 1.0, 0.0), &BicycleControl::default(), [0.0; 2], &path, 0, &p);
        assert!((c - 4.0).abs() < 1e-12);
        // heading error wraps: 2 pi - 0.1 is a -0.1 error
        let e = state_cost(&BicycleState::new(0.0, 0.0, std::f64::consts::TAU - 0.1), 0.0, &s, 0.0, &p);
        assert!((e - 40.0 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn control_cost_terms() {
        let p = MppiParams::default();
        let u = BicycleControl::new(10.0, 0.1);
        let du = [0.05, -0.01];
        let expected = 0.5 * (1.0 - 1e-3) * 1e-2 * (0.05f64.powi(2) + 0.01f64.powi(2))
            + 1e-2 * (10.0 * 0.05 + 0.1 * -0.01)
            + 0.5 * 1e-2 * (100.0 + 0.01);
        assert!((control_cost(&u, du, &p) - expected).abs() < 1e-15);
    }

    #[test]
    fn rollout_edge_cases() {
        let mut p = MppiParams::default();
        let path = straight(10.0);
        let model = KbmModel { params: VehicleParams::default() };
        let z0 = BicycleState::new(10.0, 0.5, 0.0);
        let r = rollout(&model, z0, (), &[], &[], &path, 0, &p);
        assert_eq!(r.running, 0.0);
        assert!((r.terminal - 4.0 * 0.25).abs() < 1e-12);
        // on path at the reference speed, only control terms remain
        // on path at the reference speed, landing on path samples: only the
        // control terms remain
        p.q_v = 3.0;
        let u = vec![BicycleControl::new(10.0, 0.0); 50];
        let r = rollout(&model, BicycleState::new(10.0, 0.0, 0.0), (), &u, &vec![[0.0; 2]; 50], &path, 0, &p);
        assert!((r.running - 50.0 * 0.5 * 1e-2 * 100.0).abs() < 1e-9, "{}", r.running);
        assert!(r.terminal.abs() < 1e-12);
    }

    #[test]
    fn rollout_is_additive() {
        let p = MppiParams::default();
        let path = straight(8.0);
        let model = KbmModel { params: VehicleParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<_> = (0..40).map(|_| BicycleControl::new(rng.gen_range(5.0..10.0), rng.gen_range(-0.1..0.1))).collect();
        let n: Vec<_> = (0..40).map(|_| [rng.gen_range(-0.05..0.05), rng.gen_range(-0.02..0.02)]).collect();
        let z0 = BicycleState::new(20.0, 0.3, 0.05);
        let full = rollout(&model, z0, (), &u, &n, &path, 0, &p);
        let a = rollout(&model, z0, (), &u[..17], &n[..17], &path, 0, &p);
        let b = rollout(&model, a.pose, (), &u[17..], &n[17..], &path, a.hint, &p);
        assert!((full.running - (a.running + b.running)).abs() < 1e-9);
        assert_eq!(full.pose, b.pose);
    }

    #[test]
    fn update_hand_cases() {
        let seq = ControlSequence::constant(BicycleControl::new(1.0, 0.0), 1);
        let one = mppi_update(&[7.0], &[vec![[0.1, 0.2]]], &seq, 0.3);
        assert!((one.controls[0].v - 1.1).abs() < 1e-15 && (one.controls[0].delta - 0.2).abs() < 1e-15);
        let two = mppi_update(&[0.0, 1e300], &[vec![[0.1, 0.0]], vec![[5.0, 0.0]]], &seq, 0.3);
        assert_eq!(two.controls[0].v, 1.1);
        let noises = vec![vec![[0.1, 0.0]], vec![[-0.1, 0.0]], vec![[0.3, 0.0]]];
        let three = mppi_update(&[1.0, 2.0, 3.0], &noises, &seq, 0.3);
        let w = [1.0, (-1.0f64 / 0.3).exp(), (-2.0f64 / 0.3).exp()];
        let expected = (0.1 * w[0] - 0.1 * w[1] + 0.3 * w[2]) / w.iter().sum::<f64>();
        assert!((three.controls[0].v - 1.0 - expected).abs() < 1e-15);
    }

    #[test]
    fn sg_polynomials_and_oracle() {
        let cubic: Vec<f64> = (0..40).map(|i| {
            let x = i as f64 * 0.3 - 4.0;
            0.5 * x * x * x - 2.0 * x * x + x - 7.0
        }).collect();
        let out = savitzky_golay(&cubic, 11, 3, EdgeMode::Interp).unwrap();
        for (a, b) in out.iter().zip(&cubic) {
            assert!((a - b).abs() < 1e-9);
        }
        let flat = vec![2.5; 20];
        for mode in [EdgeMode::Interp, EdgeMode::Mirror] {
            for v in savitzky_golay(&flat, 11, 3, mode).unwrap() {
                assert!((v - 2.5).abs() < 1e-12);
            }
        }
        assert!(savitzky_golay(&flat, 10, 3, EdgeMode::Interp).is_err());
        assert!(savitzky_golay(&flat, 11, 11, EdgeMode::Interp).is_err());
        assert!(savitzky_golay(&flat[..5], 11, 3, EdgeMode::Interp).is_err());
    }

    #[test]
    fn bounded_noise_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for law in [NoiseLaw::Uniform, NoiseLaw::TruncatedGaussian] {
            let mut sum = 0.0;
            for _ in 0..10_000 {
                let x = bounded_noise((-0.08, 0.05), law, &mut rng);
                assert!((-0.08..=0.05).contains(&x));
                sum += x;
            }
            assert!((sum / 1e4 + 0.015).abs() < 2e-3);
            assert_eq!(bounded_noise((0.0, 0.0), law, &mut rng), 0.0);
        }
    }

    #[test]
    fn zero_noise_returns_smoothed_warm_start() {
        let p = MppiParams { samples: 8, noise_v: (0.0, 0.0), noise_delta: (0.0, 0.0), ..MppiParams::default() };
        let path = straight(5.0);
        let model = KbmModel { params: VehicleParams::default() };
        let mut planner = Planner::new(p, BicycleControl::new(4.0, 0.01)).unwrap();
        let out = planner.plan(&model, BicycleState::new(5.0, 0.0, 0.0), &(), &path).unwrap();
        for c in &out.sequence.controls {
            assert!((c.v - 4.0).abs() < 1e-12 && (c.delta - 0.01).abs() < 1e-12);
        }
        assert_eq!(out.controls.len(), 5);
    }

    #[test]
    fn planner_is_deterministic_and_recovers_offset() {
        let p = MppiParams { samples: 64, ..MppiParams::default() };
        let path = straight(5.0);
        let params = VehicleParams::default();
        let model = KbmModel { params: params.clone() };
        let run = || {
            let mut planner = Planner::new(p.clone(), BicycleControl::new(5.0, 0.0)).unwrap();
            let mut z = BicycleState::new(5.0, 0.6, 0.0);
            let mut offsets = vec![z.y.abs()];
            for _ in 0..60 {
                let out = planner.plan(&model, z, &(), &path).unwrap();
                for u in &out.controls {
                    z = integrate_step(&z, &kbm_derivative(&z, u, &params), 0.01);
                }
                offsets.push(z.y.abs());
            }
            offsets
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.last().unwrap() < &(0.5 * a[0]), "{a:?}");
    }

    #[test]
    fn degenerate_path() {
        let path = straight(5.0);
        let model = KbmModel { params: VehicleParams::default() };
        let mut planner = Planner::new(MppiParams { samples: 4, ..MppiParams::default() }, BicycleControl::default()).unwrap();
        assert_eq!(planner.plan(&model, BicycleState::new(250.0, 0.0, 0.0), &(), &path), Err(MppiError::DegeneratePath));
    }

    #[test]
    fn shift_repeats_last() {
        let mut s = ControlSequence { controls: (0..8).map(|i| BicycleControl::new(i as f64, 0.0)).collect() };
        s.shift(5);
        assert_eq!(s.controls.iter().map(|c| c.v).collect::<Vec<_>>(), vec![5.0, 6.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0]);
    }
}

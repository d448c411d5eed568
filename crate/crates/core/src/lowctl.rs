//! Low-level tracking at the 100 Hz control rate: a speed PID that produces
//! wheel torques and a steering PID on the heading error projected a few
//! steps ahead with the planner's own model.

use crate::mppi::RolloutModel;
use crate::refsim::{FullControl, TORQUE_MAX, TORQUE_MIN};
use crate::vehicle::{nearest_path_point, wrap_to_pi, BicycleControl, BicycleState, PathRef, VehicleParams};

/// Steps the lateral controller projects ahead.
pub const PROJECTION_STEPS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct PidState {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub out_min: f64,
    pub out_max: f64,
    pub dt: f64,
}

impl PidState {
    pub fn new(kp: f64, kd: f64, ki: f64, out_min: f64, out_max: f64, dt: f64) -> Self {
        assert!(dt > 0.0 && out_min <= out_max);
        Self { kp, kd, ki, integral: 0.0, prev_error: 0.0, out_min, out_max, dt }
    }

    /// Speed loop: error in m/s, output total torque in N·m.
    pub fn longitudinal(dt: f64) -> Self {
        Self::new(500.0, 20.0, 15.0, TORQUE_MIN, TORQUE_MAX, dt)
    }

    /// Heading loop: error in rad, output steering correction in rad.
    pub fn lateral(dt: f64) -> Self {
        Self::new(0.2, 0.01, 0.005, -BicycleControl::MAX_STEER, BicycleControl::MAX_STEER, dt)
    }

    fn integral_limit(&self) -> f64 {
        self.out_min.abs().max(self.out_max.abs()) / self.ki.abs().max(1e-12)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = 0.0;
    }
}

/// One PID update with derivative on the error, rectangle-rule integral
/// clamped for anti-windup, and a clamped output.
pub fn pid_step(pid: &mut PidState, error: f64) -> f64 {
    let limit = pid.integral_limit();
    pid.integral = (pid.integral + error * pid.dt).clamp(-limit, limit);
    let derivative = (error - pid.prev_error) / pid.dt;
    pid.prev_error = error;
    (pid.kp * error + pid.kd * derivative + pid.ki * pid.integral).clamp(pid.out_min, pid.out_max)
}

/// Total torque demand for the speed error and its split across the wheels.
pub fn longitudinal_control(pid: &mut PidState, v_ref: f64, v_measured: f64, params: &VehicleParams) -> (f64, [f64; 4]) {
    let total = pid_step(pid, v_ref - v_measured).clamp(TORQUE_MIN, TORQUE_MAX);
    (total, FullControl::from_total(total, 0.0, params).torque)
}

/// Output of one lateral update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LateralOutput {
    pub delta: f64,
    pub projected_error: f64,
    pub path_index: usize,
}

/// Rolls `model` [`PROJECTION_STEPS`] steps under `(v_ref, delta_ref)` from
/// the current pose, compares the reached heading with the path heading at
/// the reached point, and corrects the open-loop steering with the PID.
pub fn lateral_control<M: RolloutModel>(
    pid: &mut PidState,
    delta_ref: f64,
    v_ref: f64,
    pose: BicycleState,
    context: &M::Context,
    model: &M,
    path: &PathRef,
    hint: usize,
) -> LateralOutput {
    let mut poses = [pose];
    let mut ctx = [context.clone()];
    let u = [BicycleControl::new(v_ref, delta_ref)];
    for _ in 0..PROJECTION_STEPS {
        model.step_batch(&mut poses, &mut ctx, &u, pid.dt);
    }
    let (idx, _) = nearest_path_point(path, poses[0].x, poses[0].y, hint);
    let error = wrap_to_pi(poses[0].psi - path.sample(idx).psi);
    let correction = pid_step(pid, error);
    LateralOutput {
        delta: (delta_ref - correction).clamp(-BicycleControl::MAX_STEER, BicycleControl::MAX_STEER),
        projected_error: error,
        path_index: idx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mppi::KbmModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_error_zero_output() {
        let mut pid = PidState::longitudinal(0.01);
        for _ in 0..5 {
            assert_eq!(pid_step(&mut pid, 0.0), 0.0);
        }
    }

    #[test]
    fn hand_stepped_pid() {
        let mut pid = PidState::new(500.0, 20.0, 15.0, -1e9, 1e9, 0.01);
        let o1 = pid_step(&mut pid, 1.0);
        assert!((o1 - (500.0 + 20.0 / 0.01 + 15.0 * 0.01)).abs() < 1e-9);
        let o2 = pid_step(&mut pid, 1.0);
        assert!((o2 - (500.0 + 15.0 * 0.02)).abs() < 1e-9);
        let o3 = pid_step(&mut pid, 1.0);
        assert!((o3 - o2 - 0.15).abs() < 1e-9);
    }

    #[test]
    fn clamp_and_windup() {
        let mut pid = PidState::longitudinal(0.01);
        assert_eq!(pid_step(&mut pid, 1e6), TORQUE_MAX);
        for _ in 0..10_000 {
            pid_step(&mut pid, 1e6);
        }
        assert!(pid.integral <= 1000.0 / 15.0 + 1e-12);
        assert_eq!(pid_step(&mut pid, -1e6), TORQUE_MIN);
    }

    #[test]
    fn longitudinal_split_and_bands() {
        let p = VehicleParams::default();
        let mut pid = PidState::longitudinal(0.01);
        assert_eq!(longitudinal_control(&mut pid, 10.0, 10.0, &p).0, 0.0);
        let mut pid = PidState::longitudinal(0.01);
        let (total, torque) = longitudinal_control(&mut pid, 1.0, 0.0, &p);
        assert_eq!(total, TORQUE_MAX);
        assert_eq!(torque, [400.0, 400.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pid = PidState::longitudinal(0.01);
        for _ in 0..10_000 {
            let (total, torque) = longitudinal_control(&mut pid, rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), &p);
            assert!((TORQUE_MIN..=TORQUE_MAX).contains(&total));
            assert!((torque.iter().sum::<f64>() - total).abs() < 1e-9);
        }
    }

    #[test]
    fn positive_error_from_rest_never_brakes() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let mut pid = PidState::longitudinal(0.01);
            let v = rng.gen_range(1e-6..40.0);
            assert!(longitudinal_control(&mut pid, v, 0.0, &p).0 > 0.0);
        }
    }

    fn straight() -> PathRef {
        let pts: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64, 0.0)).collect();
        PathRef::from_polyline(&pts, 10.0).unwrap()
    }

    #[test]
    fn lateral_on_path_is_open_loop() {
        let model = KbmModel { params: VehicleParams::default() };
        let mut pid = PidState::lateral(0.01);
        let out = lateral_control(&mut pid, 0.0, 10.0, BicycleState::new(5.0, 0.0, 0.0), &(), &model, &straight(), 0);
        assert_eq!(out.delta, 0.0);
        assert_eq!(out.projected_error, 0.0);
    }

    #[test]
    fn lateral_heading_error_correction() {
        let model = KbmModel { params: VehicleParams::default() };
        let mut pid = PidState::lateral(0.01);
        let out = lateral_control(&mut pid, 0.0, 10.0, BicycleState::new(5.0, 0.0, 0.1), &(), &model, &straight(), 0);
        assert!((out.projected_error - 0.1).abs() < 1e-12);
        let expected = -(0.2 * 0.1 + 0.01 * 0.1 / 0.01 + 0.005 * 0.1 * 0.01);
        assert!((out.delta - expected).abs() < 1e-12);
        let mut pid = PidState::lateral(0.01);
        let out = lateral_control(&mut pid, 0.0, 10.0, BicycleState::new(5.0, 0.0, -1.5), &(), &model, &straight(), 0);
        assert_eq!(out.delta, 0.5);
    }
}

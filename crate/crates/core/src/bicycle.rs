//! Single-track planar models: the kinematic bicycle (no wheel slip) and the
//! extended bicycle, which adds front and rear slip angles.

use crate::vehicle::{BicycleControl, BicycleState, VehicleParams};

/// Front and rear wheel slip angles (rad). Positive values follow the tire
/// convention: the wheel points to the left of its velocity vector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlipPair {
    pub alpha_f: f64,
    pub alpha_r: f64,
}

impl SlipPair {
    pub const ZERO: Self = Self { alpha_f: 0.0, alpha_r: 0.0 };

    pub fn new(alpha_f: f64, alpha_r: f64) -> Self {
        Self { alpha_f, alpha_r }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BicycleDerivative {
    pub x_dot: f64,
    pub y_dot: f64,
    pub psi_dot: f64,
    /// Side-slip angle at the centre of gravity.
    pub beta: f64,
}

impl BicycleDerivative {
    /// Velocity of the centre of gravity in the body frame of the pose the
    /// derivative was evaluated at.
    pub fn body_velocity(&self, v: f64) -> (f64, f64) {
        let (s, c) = self.beta.sin_cos();
        (v * c, v * s)
    }
}

pub fn kbm_derivative(state: &BicycleState, control: &BicycleControl, params: &VehicleParams) -> BicycleDerivative {
    let l = params.wheelbase();
    let tan_d = control.delta.tan();
    let beta = (params.l_r * tan_d / l).atan();
    let heading = state.psi + beta;
    BicycleDerivative {
        x_dot: control.v * heading.cos(),
        y_dot: control.v * heading.sin(),
        psi_dot: control.v * tan_d * beta.cos() / l,
        beta,
    }
}

pub fn ebm_derivative(
    state: &BicycleState,
    control: &BicycleControl,
    slips: &SlipPair,
    params: &VehicleParams,
) -> BicycleDerivative {
    let l = params.wheelbase();
    let tan_front = (control.delta - slips.alpha_f).tan();
    let tan_rear = slips.alpha_r.tan();
    let beta = ((params.l_r * tan_front - params.l_f * tan_rear) / l).atan();
    let heading = state.psi + beta;
    BicycleDerivative {
        x_dot: control.v * heading.cos(),
        y_dot: control.v * heading.sin(),
        psi_dot: control.v * beta.cos() * (tan_front + tan_rear) / l,
        beta,
    }
}

/// Explicit Euler step, the same update the planner uses for its rollouts.
#[inline]
pub fn integrate_step(state: &BicycleState, deriv: &BicycleDerivative, dt: f64) -> BicycleState {
    BicycleState {
        x: state.x + deriv.x_dot * dt,
        y: state.y + deriv.y_dot * dt,
        psi: state.psi + deriv.psi_dot * dt,
    }
}

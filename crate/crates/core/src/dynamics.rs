//! Speed tracking and kinematic bicycle integration.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Pose2D};
use crate::scenario::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose2D,
    pub speed: f64,
}

/// Reference speed and steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v_ref: f64,
    pub sigma: f64,
}

impl Action {
    pub fn new(v_ref: f64, sigma: f64) -> Self {
        Self { v_ref, sigma }
    }

    /// Clamp into `[0, v_max] x [-sigma_max, sigma_max]`. NaN components
    /// become zero.
    pub fn clamped(&self, params: &VehicleParams) -> Action {
        let v = if self.v_ref.is_nan() { 0.0 } else { self.v_ref };
        let s = if self.sigma.is_nan() { 0.0 } else { self.sigma };
        Action {
            v_ref: v.clamp(0.0, params.v_max),
            sigma: s.clamp(-params.sigma_max, params.sigma_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric acceleration bound (m/s^2).
    pub accel_max: f64,
}

impl PidParams {
    /// Proportional gain equal to `1/dt`: below saturation the speed error is
    /// removed in a single step.
    pub fn for_step(dt: f64, accel_max: f64) -> Self {
        Self {
            kp: 1.0 / dt,
            ki: 0.0,
            kd: 0.0,
            accel_max,
        }
    }
}

impl Default for PidParams {
    fn default() -> Self {
        Self::for_step(DEFAULT_DT, 5.0)
    }
}

pub const DEFAULT_DT: f64 = 0.1;

/// Integral and previous-error record of one agent's speed controller.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerMemory {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

pub fn pid_speed_control(
    state: &VehicleState,
    v_ref: f64,
    pid: &PidParams,
    memory: &mut ControllerMemory,
    dt: f64,
) -> f64 {
    let error = v_ref - state.speed;
    memory.integral += error * dt;
    let derivative = match memory.prev_error {
        Some(prev) => (error - prev) / dt,
        None => 0.0,
    };
    memory.prev_error = Some(error);
    (pid.kp * error + pid.ki * memory.integral + pid.kd * derivative)
        .clamp(-pid.accel_max, pid.accel_max)
}

/// One explicit-Euler step of the kinematic bicycle model. Position and
/// heading integrate with the pre-step speed; speed is clamped to
/// `[0, v_max]`.
pub fn bicycle_step(
    state: &VehicleState,
    accel: f64,
    sigma: f64,
    dt: f64,
    params: &VehicleParams,
) -> VehicleState {
    let v = state.speed;
    let (s, c) = state.pose.theta.sin_cos();
    let theta = state.pose.theta + v * sigma.tan() / params.wheelbase * dt;
    VehicleState {
        pose: Pose2D {
            x: state.pose.x + v * c * dt,
            y: state.pose.y + v * s * dt,
            theta: normalize_angle(theta),
        },
        speed: (v + accel * dt).clamp(0.0, params.v_max),
    }
}

//! Vehicle kinematics and HV position belief propagation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::hv::VelocityHistory;

/// Longitudinal position (m) and velocity (m/s) of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
}

impl VehicleState {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }
}

/// Forward-Euler double integrator. The position update uses the velocity
/// from before the step.
pub fn av_step(state: VehicleState, accel: f64, dt: f64) -> VehicleState {
    VehicleState {
        position: state.position + dt * state.velocity,
        velocity: state.velocity + dt * accel,
    }
}

/// HV position mean one step ahead: `μ + dt·v + dt·μ_d`.
pub fn propagate_hv_mean(mean: f64, hv_velocity: f64, gp_mean: f64, dt: f64) -> f64 {
    mean + dt * hv_velocity + dt * gp_mean
}

/// HV position variance one step ahead: `Σ + dt²·Σ_d`. The covariance between
/// position and velocity is ignored.
pub fn propagate_hv_variance(variance: f64, gp_variance: f64, dt: f64) -> f64 {
    variance + dt * dt * gp_variance
}

/// Everything the controller needs at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    /// Leader first.
    pub avs: Vec<VehicleState>,
    pub hv_position_mean: f64,
    pub hv_position_variance: f64,
    pub hv_velocity: f64,
    pub history: VelocityHistory,
}

impl PlatoonState {
    /// Vehicles at rest, leader at the origin, every following vehicle
    /// (the HV included) `gap` meters behind its predecessor.
    pub fn at_rest(n_av: usize, gap: f64) -> Result<Self> {
        if n_av == 0 {
            return Err(Error::Input("platoon needs at least one AV".into()));
        }
        if !(gap.is_finite() && gap > 0.0) {
            return Err(Error::Input(format!("initial gap must be positive, got {gap}")));
        }
        let avs = (0..n_av)
            .map(|i| VehicleState::new(-(i as f64) * gap, 0.0))
            .collect();
        Ok(Self {
            avs,
            hv_position_mean: -(n_av as f64) * gap,
            hv_position_variance: 0.0,
            hv_velocity: 0.0,
            history: VelocityHistory::constant(0.0, 0.0),
        })
    }

    pub fn n_av(&self) -> usize {
        self.avs.len()
    }

    pub fn last_av(&self) -> &VehicleState {
        self.avs.last().expect("platoon has at least one AV")
    }

    /// Gaps between consecutive AVs, leader pair first.
    pub fn av_gaps(&self) -> Vec<f64> {
        self.avs
            .windows(2)
            .map(|w| w[0].position - w[1].position)
            .collect()
    }

    pub fn hv_gap(&self) -> f64 {
        self.last_av().position - self.hv_position_mean
    }

    pub fn validate(&self) -> Result<()> {
        if self.avs.is_empty() {
            return Err(Error::Input("platoon needs at least one AV".into()));
        }
        for (i, av) in self.avs.iter().enumerate() {
            ensure_finite(&format!("AV {i} position"), av.position)?;
            ensure_finite(&format!("AV {i} velocity"), av.velocity)?;
        }
        ensure_finite("HV position", self.hv_position_mean)?;
        ensure_finite("HV velocity", self.hv_velocity)?;
        if !(self.hv_position_variance.is_finite() && self.hv_position_variance >= 0.0) {
            return Err(Error::Input(format!(
                "HV position variance must be ≥ 0, got {}",
                self.hv_position_variance
            )));
        }
        self.history.validate()
    }
}

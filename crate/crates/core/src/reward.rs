//! Individual, socially composed, adversarial and attacker rewards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward weights must satisfy omega2 >= 10 * omega1 > 0 (got omega1={omega1}, omega2={omega2})")]
    WeightRatio { omega1: f64, omega2: f64 },
    #[error("social composition needs at least one other agent")]
    EmptyOthers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub omega1: f64,
    pub omega2: f64,
}

impl RewardWeights {
    pub fn new(omega1: f64, omega2: f64) -> Result<Self, RewardError> {
        let w = Self { omega1, omega2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let ok = self.omega1.is_finite()
            && self.omega2.is_finite()
            && self.omega1 > 0.0
            && self.omega2 >= 10.0 * self.omega1;
        if ok {
            Ok(())
        } else {
            Err(RewardError::WeightRatio {
                omega1: self.omega1,
                omega2: self.omega2,
            })
        }
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            omega1: 1.0,
            omega2: 100.0,
        }
    }
}

/// Per-agent, per-step reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_speed: f64,
    pub r_fail: f64,
    pub individual: f64,
    pub composed: f64,
    /// Zero-sum adversary reward, present only in ego-vs-flow episodes.
    pub adversary_signal: Option<f64>,
}

/// Speed term in `[-1, 1]` and failure term in `{-1, 0}`. `composed` is
/// initialised to the individual reward.
pub fn individual_reward(speed: f64, v_max: f64, failed: bool, w: &RewardWeights) -> RewardBreakdown {
    let r_speed = 2.0 * speed / v_max - 1.0;
    let r_fail = if failed { -1.0 } else { 0.0 };
    let individual = w.omega1 * r_speed + w.omega2 * r_fail;
    RewardBreakdown {
        r_speed,
        r_fail,
        individual,
        composed: individual,
        adversary_signal: None,
    }
}

/// `cos(c) * own + sin(c) * mean(others)` with `c` in degrees. The endpoints
/// 0 and 90 degrees return `own` and the mean exactly.
pub fn socially_composed_reward(own: f64, others: &[f64], c_deg: f64) -> Result<f64, RewardError> {
    if others.is_empty() {
        return Err(RewardError::EmptyOthers);
    }
    let mean = others.iter().sum::<f64>() / others.len() as f64;
    Ok(compose(own, mean, c_deg))
}

/// Composition with a precomputed mean of the others' rewards.
pub fn compose(own: f64, others_mean: f64, c_deg: f64) -> f64 {
    if c_deg == 0.0 {
        return own;
    }
    if c_deg == 90.0 {
        return others_mean;
    }
    let (s, c) = c_deg.to_radians().sin_cos();
    c * own + s * others_mean
}

/// Zero-sum adversary reward.
pub fn adversary_reward(ego_individual: f64) -> f64 {
    -ego_individual
}

/// Attacker weight `alpha >= 0` expressed as an SVO angle in `[-90, 0)`
/// degrees; `alpha = 0` is pure attack.
pub fn alpha_to_svo(alpha: f64) -> f64 {
    if alpha == 0.0 {
        return -90.0;
    }
    -(1.0 / alpha).atan().to_degrees()
}

/// Attacker individual reward: collisions are not penalised, so the
/// collision indicator cancels the failure term for that case.
pub fn failmaker_individual_reward(
    speed: f64,
    v_max: f64,
    failed: bool,
    collided: bool,
    w: &RewardWeights,
) -> f64 {
    let base = individual_reward(speed, v_max, failed, w).individual;
    base + if collided { w.omega2 } else { 0.0 }
}

/// `cos(c) * own + sin(c) * ego` for an attacker angle `c` in `[-90, 0)`.
pub fn failmaker_background_reward(own: f64, ego: f64, c_deg: f64) -> f64 {
    if c_deg == -90.0 {
        return -ego;
    }
    let (s, c) = c_deg.to_radians().sin_cos();
    c * own + s * ego
}

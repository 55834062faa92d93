//! Upper-level context delivery: constant, self-visible, fully visible and
//! adversarial (mistaken ego context) communication.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::ObservationFrame;

/// Delivered value of an entry the receiver cannot see.
pub const INVISIBLE_SVO: f64 = -1.0;

/// Index of the ego agent in the joint context.
pub const EGO_INDEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommMode {
    Constant { value: f64 },
    SelfVisible,
    FullyVisibleGenuine,
    /// Ego entry replaced by a mistaken value; the source is supplied to
    /// [`communicate`].
    Adversarial,
}

impl fmt::Display for CommMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommMode::Constant { value } => write!(f, "constant:{value}"),
            CommMode::SelfVisible => f.write_str("self_visible"),
            CommMode::FullyVisibleGenuine => f.write_str("fully_visible"),
            CommMode::Adversarial => f.write_str("adversarial"),
        }
    }
}

impl FromStr for CommMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "self_visible" => Ok(CommMode::SelfVisible),
            "fully_visible" | "fully_visible_genuine" => Ok(CommMode::FullyVisibleGenuine),
            "adversarial" => Ok(CommMode::Adversarial),
            _ => {
                let value = s
                    .strip_prefix("constant:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| {
                        format!("unknown comm mode '{s}' (expected constant:C, self_visible, fully_visible, adversarial)")
                    })?;
                if !(0.0..=90.0).contains(&value) {
                    return Err(format!("constant context {value} outside [0, 90]"));
                }
                Ok(CommMode::Constant { value })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Genuine,
    Mistaken,
    Invisible,
    Constant,
}

/// Joint context as seen by one receiver. Entry `i` belongs to agent id
/// `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredContext {
    pub entries: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl DeliveredContext {
    pub fn value(&self, id: u32) -> Option<f64> {
        self.entries.get((id as usize).checked_sub(1)?).copied()
    }

    pub fn genuine(genuine: &[f64]) -> Self {
        Self {
            entries: genuine.to_vec(),
            provenance: vec![Provenance::Genuine; genuine.len()],
        }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            entries: vec![value; n],
            provenance: vec![Provenance::Constant; n],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("adversarial delivery needs an adversary observation and source while the ego is in range")]
    MissingAdversaryObservation,
    #[error("context {0} outside [0, 90] degrees")]
    ContextOutOfRange(f64),
    #[error("receiver {0} outside the context")]
    UnknownReceiver(usize),
}

/// Producer of mistaken ego contexts from an adversary observation.
pub trait MistakenSource {
    fn mistaken_svo(&self, obs: &ObservationFrame) -> f64;
}

impl<F: Fn(&ObservationFrame) -> f64> MistakenSource for F {
    fn mistaken_svo(&self, obs: &ObservationFrame) -> f64 {
        self(obs)
    }
}

/// Inputs of the adversarial branch of [`communicate`].
#[derive(Clone, Copy)]
pub struct AdversaryInput<'a> {
    pub source: Option<&'a dyn MistakenSource>,
    pub observation: Option<&'a ObservationFrame>,
    pub ego_distance: f64,
    pub clip_radius: f64,
}

/// Context delivered to `receiver` (0-based) under `mode`.
pub fn communicate(
    mode: &CommMode,
    receiver: usize,
    genuine: &[f64],
    adversary: Option<AdversaryInput<'_>>,
) -> Result<DeliveredContext, CommError> {
    if receiver >= genuine.len() {
        return Err(CommError::UnknownReceiver(receiver));
    }
    match *mode {
        CommMode::Constant { value } => Ok(DeliveredContext::constant(genuine.len(), value)),
        CommMode::SelfVisible => {
            let mut ctx = DeliveredContext {
                entries: vec![INVISIBLE_SVO; genuine.len()],
                provenance: vec![Provenance::Invisible; genuine.len()],
            };
            ctx.entries[receiver] = genuine[receiver];
            ctx.provenance[receiver] = Provenance::Genuine;
            Ok(ctx)
        }
        CommMode::FullyVisibleGenuine => Ok(DeliveredContext::genuine(genuine)),
        CommMode::Adversarial => {
            let mut ctx = DeliveredContext::genuine(genuine);
            let Some(adv) = adversary else {
                return Err(CommError::MissingAdversaryObservation);
            };
            if adv.ego_distance > adv.clip_radius {
                return Ok(ctx);
            }
            let (Some(source), Some(obs)) = (adv.source, adv.observation) else {
                return Err(CommError::MissingAdversaryObservation);
            };
            let value = source.mistaken_svo(obs);
            if !(0.0..=90.0).contains(&value) {
                return Err(CommError::ContextOutOfRange(value));
            }
            ctx.entries[EGO_INDEX] = value;
            ctx.provenance[EGO_INDEX] = Provenance::Mistaken;
            Ok(ctx)
        }
    }
}

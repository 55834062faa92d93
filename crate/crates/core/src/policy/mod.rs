//! Lower-level policies (scripted IDM path followers, neural policies) and
//! the neural adversary that emits mistaken ego contexts.

mod network;
pub mod weights;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use network::{insert_meta, Architecture, OutputKind, WeightBundle};
pub use weights::{Tensor, TensorMap, WeightError};

use crate::dynamics::Action;
use crate::env::{Environment, WorldState};
use crate::idm::{find_leader_on_path, idm_acceleration, idm_free_road, LeaderCandidate};
use crate::observation::{ObservationFrame, SerializedObservation};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy role mismatch: {0}")]
    RoleMismatch(String),
    #[error("observation shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("policy needs an observation")]
    MissingObservation,
    #[error("agent {0} is terminated or unknown")]
    AgentTerminated(u32),
    #[error(transparent)]
    Weights(#[from] WeightError),
}

/// Scripted path follower: IDM longitudinal control and pure-pursuit
/// steering along the agent's own global path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmPolicy {
    /// Pure-pursuit lookahead distance along the path (m).
    pub lookahead: f64,
}

impl Default for IdmPolicy {
    fn default() -> Self {
        Self { lookahead: 5.0 }
    }
}

impl IdmPolicy {
    pub fn act(&self, env: &Environment, world: &WorldState, id: u32) -> Result<Action, PolicyError> {
        let agent = world
            .agent(id)
            .filter(|a| a.is_alive())
            .ok_or(PolicyError::AgentTerminated(id))?;
        let scenario = env.scenario();
        let vp = &scenario.vehicle_params[agent.vehicle];
        let path = scenario.path(agent.path);
        let v = agent.state.speed;

        let mut candidates = Vec::with_capacity(world.agents.len());
        let mut own_slot = None;
        for other in world.agents.iter().filter(|a| a.is_alive()) {
            if other.id == id {
                own_slot = Some(candidates.len());
            }
            candidates.push(LeaderCandidate {
                x: other.state.pose.x,
                y: other.state.pose.y,
                speed: other.state.speed,
                length: scenario.vehicle_params[other.vehicle].length,
                width: scenario.vehicle_params[other.vehicle].width,
            });
        }
        let accel = match find_leader_on_path(path, agent.progress, vp.length, &candidates, own_slot) {
            Some(leader) => idm_acceleration(v, leader.speed, leader.gap, &scenario.idm),
            None => idm_free_road(v, &scenario.idm),
        };
        let v_ref = (v + accel * env.config().dt).clamp(0.0, vp.v_max);

        let target = path.pose_at(agent.progress + self.lookahead);
        let local = target.transform_to_frame(&agent.state.pose);
        let dist = local.x.hypot(local.y);
        let sigma = if dist > 1e-9 {
            let alpha = local.y.atan2(local.x);
            (2.0 * vp.wheelbase * alpha.sin() / dist).atan()
        } else {
            0.0
        };
        Ok(Action::new(v_ref, sigma.clamp(-vp.sigma_max, vp.sigma_max)))
    }
}

/// A policy shared by every agent it drives.
#[derive(Debug, Clone)]
pub enum PolicyHandle {
    IdmScripted(IdmPolicy),
    NeuralLower(Arc<WeightBundle>),
    NeuralAdversary(Arc<WeightBundle>),
    ConstantAction(Action),
}

impl fmt::Display for PolicyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyHandle::IdmScripted(_) => "idm_scripted",
            PolicyHandle::NeuralLower(_) => "neural_lower",
            PolicyHandle::NeuralAdversary(_) => "neural_adversary",
            PolicyHandle::ConstantAction(_) => "constant_action",
        })
    }
}

impl PolicyHandle {
    pub fn idm() -> Self {
        PolicyHandle::IdmScripted(IdmPolicy::default())
    }

    /// Lower-level policy from a bundle, checking its role.
    pub fn neural_lower(bundle: Arc<WeightBundle>) -> Result<Self, PolicyError> {
        if bundle.output() != OutputKind::Action || bundle.input_dim() != 6 {
            return Err(PolicyError::RoleMismatch(format!(
                "lower-level policy needs an action head over length-6 vectors, bundle has {:?} over length {}",
                bundle.output(),
                bundle.input_dim()
            )));
        }
        Ok(PolicyHandle::NeuralLower(bundle))
    }

    /// Adversary from a bundle, checking its role.
    pub fn neural_adversary(bundle: Arc<WeightBundle>) -> Result<Self, PolicyError> {
        if bundle.output() != OutputKind::Svo || bundle.input_dim() != 5 {
            return Err(PolicyError::RoleMismatch(format!(
                "adversary needs an svo head over length-5 vectors, bundle has {:?} over length {}",
                bundle.output(),
                bundle.input_dim()
            )));
        }
        Ok(PolicyHandle::NeuralAdversary(bundle))
    }

    /// Every handle serves all of its agents with one parameter set.
    pub fn parameter_shared(&self) -> bool {
        true
    }

    pub fn needs_observation(&self) -> bool {
        matches!(self, PolicyHandle::NeuralLower(_) | PolicyHandle::NeuralAdversary(_))
    }

    /// Lower-level action of agent `id`. Neural policies read `obs`, which
    /// must carry contexts.
    pub fn act(
        &self,
        env: &Environment,
        world: &WorldState,
        id: u32,
        obs: Option<&ObservationFrame>,
    ) -> Result<Action, PolicyError> {
        match self {
            PolicyHandle::ConstantAction(a) => Ok(*a),
            PolicyHandle::IdmScripted(p) => p.act(env, world, id),
            PolicyHandle::NeuralLower(b) => {
                let obs = obs.ok_or(PolicyError::MissingObservation)?;
                let out = act_on(b, &obs.serialize())?;
                Ok(Action::new(out[0], out[1]))
            }
            PolicyHandle::NeuralAdversary(_) => Err(PolicyError::RoleMismatch(
                "an adversary cannot drive an agent".into(),
            )),
        }
    }

    /// Mistaken ego context in degrees from an adversary observation.
    pub fn mistaken_svo(&self, obs: &ObservationFrame) -> Result<f64, PolicyError> {
        match self {
            PolicyHandle::NeuralAdversary(b) => Ok(act_on(b, &obs.serialize())?[0]),
            other => Err(PolicyError::RoleMismatch(format!("{other} does not emit contexts"))),
        }
    }
}

fn act_on(bundle: &WeightBundle, obs: &SerializedObservation) -> Result<Vec<f64>, PolicyError> {
    if obs.dynamic_width != bundle.input_dim() {
        return Err(PolicyError::RoleMismatch(format!(
            "observation vectors have length {}, policy expects {}",
            obs.dynamic_width,
            bundle.input_dim()
        )));
    }
    bundle.forward(obs)
}

/// Attended feature vector of an observation.
pub fn encode_observation(obs: &ObservationFrame, bundle: &WeightBundle) -> Result<Vec<f64>, PolicyError> {
    bundle.encode(&obs.serialize())
}

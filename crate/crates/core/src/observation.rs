//! Agent-centric observations: clipped polylines in a local frame, with
//! optional SVO contexts appended to the dynamic vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::communication::DeliveredContext;
use crate::env::{AgentRecord, Environment, WorldState};
use crate::geometry::{DynamicPolyline, DynamicVector, Polyline, PolylineKind, Pose2D, StaticPolyline, StaticVector};

#[derive(Debug, Error, PartialEq)]
pub enum ObservationError {
    #[error("agent {0} is terminated or unknown")]
    AgentTerminated(u32),
    #[error("the ego agent is terminated or absent")]
    EgoTerminated,
    #[error("no delivered context for agent {0}")]
    MissingContext(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub agent_polylines: Vec<DynamicPolyline>,
    /// Agent id of each entry of `agent_polylines`.
    pub agent_ids: Vec<u32>,
    pub static_polylines: Vec<StaticPolyline>,
    pub frame: Pose2D,
    /// Position of the observing agent's polyline.
    pub self_index: usize,
    /// Position of the ego agent's polyline when it is visible.
    pub ego_index: Option<usize>,
}

/// Flat float32 view of an observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedObservation {
    /// Dynamic vector length (5 without contexts, 6 with).
    pub dynamic_width: usize,
    pub history_len: usize,
    /// One `history_len x dynamic_width` row-major block per agent.
    pub dynamic: Vec<Vec<f32>>,
    /// One `K x 5` row-major block per static polyline.
    pub statics: Vec<Vec<f32>>,
    pub self_index: usize,
}

impl ObservationFrame {
    /// Serialized length of the dynamic vectors (5 or 6).
    pub fn dynamic_width(&self) -> usize {
        self.agent_polylines
            .first()
            .and_then(|p| p.vectors.first())
            .map_or(5, |v| v.serialized_len())
    }

    pub fn serialize(&self) -> SerializedObservation {
        let dynamic = self
            .agent_polylines
            .iter()
            .map(|p| {
                let mut out = Vec::new();
                for v in &p.vectors {
                    v.write_f32(&mut out);
                }
                out
            })
            .collect();
        let statics = self
            .static_polylines
            .iter()
            .map(|p| p.vectors.iter().flat_map(|v| v.to_array().map(|x| x as f32)).collect())
            .collect();
        SerializedObservation {
            dynamic_width: self.dynamic_width(),
            history_len: self.agent_polylines.first().map_or(0, |p| p.len()),
            dynamic,
            statics,
            self_index: self.self_index,
        }
    }
}

fn within(p: [f64; 2], center: &Pose2D, radius: f64) -> bool {
    (p[0] - center.x).hypot(p[1] - center.y) <= radius
}

fn agent_polyline(agent: &AgentRecord, frame: &Pose2D) -> DynamicPolyline {
    let vectors = agent
        .history
        .iter()
        .enumerate()
        .map(|(h, s)| {
            let local = s.pose.transform_to_frame(frame);
            DynamicVector {
                x: local.x,
                y: local.y,
                theta: local.theta,
                speed: s.speed,
                history_index: h as u32 + 1,
                svo: None,
            }
        })
        .collect();
    Polyline {
        kind: PolylineKind::AgentHistory,
        vectors,
    }
}

fn clip_static(poly: &StaticPolyline, center: &Pose2D, radius: f64, frame: &Pose2D) -> Option<StaticPolyline> {
    let vectors: Vec<StaticVector> = poly
        .vectors
        .iter()
        .filter(|v| within([v.x, v.y], center, radius))
        .map(|v| {
            let local = Pose2D::new(v.x, v.y, v.theta).transform_to_frame(frame);
            StaticVector {
                x: local.x,
                y: local.y,
                theta: local.theta,
                lane_width: v.lane_width,
                index: v.index,
            }
        })
        .collect();
    (!vectors.is_empty()).then_some(Polyline {
        kind: poly.kind,
        vectors,
    })
}

/// Content visible from `observer`, expressed in `frame`.
fn build(env: &Environment, world: &WorldState, observer: &AgentRecord, frame: Pose2D) -> ObservationFrame {
    let radius = env.config().clip_radius;
    let center = observer.state.pose;
    let mut agent_polylines = vec![agent_polyline(observer, &frame)];
    let mut agent_ids = vec![observer.id];
    for other in &world.agents {
        if other.id == observer.id || !other.is_alive() {
            continue;
        }
        if within([other.state.pose.x, other.state.pose.y], &center, radius) {
            agent_polylines.push(agent_polyline(other, &frame));
            agent_ids.push(other.id);
        }
    }
    let scenario = env.scenario();
    let static_polylines = scenario
        .centerlines
        .iter()
        .chain(&scenario.sidelines)
        .chain(std::iter::once(&scenario.candidate_paths[observer.path]))
        .filter_map(|p| clip_static(p, &center, radius, &frame))
        .collect();
    let ego_index = agent_ids
        .iter()
        .position(|&id| world.agent(id).is_some_and(|a| a.is_ego));
    ObservationFrame {
        agent_polylines,
        agent_ids,
        static_polylines,
        frame,
        self_index: 0,
        ego_index,
    }
}

/// Observation of agent `id` in its own frame. Ordering: self first, then
/// visible agents by ascending id, then centerlines, sidelines and the
/// observer's global path.
pub fn build_observation(env: &Environment, world: &WorldState, id: u32) -> Result<ObservationFrame, ObservationError> {
    let agent = world
        .agent(id)
        .filter(|a| a.is_alive())
        .ok_or(ObservationError::AgentTerminated(id))?;
    Ok(build(env, world, agent, agent.state.pose))
}

/// What background agent `id` sees, expressed in the ego agent's frame and
/// without contexts.
pub fn build_adversary_observation(
    env: &Environment,
    world: &WorldState,
    id: u32,
) -> Result<ObservationFrame, ObservationError> {
    let ego = world
        .ego()
        .filter(|a| a.is_alive())
        .ok_or(ObservationError::EgoTerminated)?;
    let agent = world
        .agent(id)
        .filter(|a| a.is_alive())
        .ok_or(ObservationError::AgentTerminated(id))?;
    Ok(build(env, world, agent, ego.state.pose))
}

/// Append each visible agent's delivered SVO to its dynamic vectors.
pub fn attach_context(obs: &ObservationFrame, delivered: &DeliveredContext) -> Result<ObservationFrame, ObservationError> {
    let mut out = obs.clone();
    for (poly, &id) in out.agent_polylines.iter_mut().zip(&obs.agent_ids) {
        let svo = delivered
            .value(id)
            .ok_or(ObservationError::MissingContext(id))?;
        for v in &mut poly.vectors {
            v.svo = Some(svo);
        }
    }
    Ok(out)
}

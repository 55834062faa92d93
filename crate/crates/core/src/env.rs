//! The multi-agent engine: reset, simultaneous step, termination and rewards.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{bicycle_step, pid_speed_control, Action, ControllerMemory, PidParams, VehicleState};
use crate::geometry::{boxes_overlap, normalize_angle, OrientedBox, Pose2D};
use crate::reward::{adversary_reward, compose, individual_reward, RewardBreakdown, RewardError, RewardWeights};
use crate::scenario::{CaseSpec, ScenarioName, ScenarioSpec};
use crate::seed::{derive_seed, splitmix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationStatus {
    Alive,
    Success,
    Collision,
    OffRoad,
    OffRoute,
    WrongLane,
    Timeout,
}

impl TerminationStatus {
    pub const TERMINAL: [TerminationStatus; 6] = [
        TerminationStatus::Success,
        TerminationStatus::Collision,
        TerminationStatus::OffRoad,
        TerminationStatus::OffRoute,
        TerminationStatus::WrongLane,
        TerminationStatus::Timeout,
    ];

    pub fn is_terminal(self) -> bool {
        self != TerminationStatus::Alive
    }

    /// Catastrophic failures: collision, off road, off route, wrong lane.
    pub fn is_failure(self) -> bool {
        matches!(
            self,
            TerminationStatus::Collision
                | TerminationStatus::OffRoad
                | TerminationStatus::OffRoute
                | TerminationStatus::WrongLane
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminationStatus::Alive => "alive",
            TerminationStatus::Success => "success",
            TerminationStatus::Collision => "collision",
            TerminationStatus::OffRoad => "off_road",
            TerminationStatus::OffRoute => "off_route",
            TerminationStatus::WrongLane => "wrong_lane",
            TerminationStatus::Timeout => "timeout",
        }
    }
}

impl fmt::Display for TerminationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    /// Every agent is a flow agent.
    Flow,
    /// Agent 1 is the ego; the rest are background flow agents.
    EgoVsFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub max_steps: u32,
    pub clip_radius: f64,
    pub history_len: usize,
    pub off_route_threshold: f64,
    pub wrong_lane_angle_deg: f64,
    pub wrong_lane_steps: u32,
    pub reward: RewardWeights,
    /// Constant context of the ego agent, degrees.
    pub ego_context: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_steps: 500,
            clip_radius: 30.0,
            history_len: 10,
            off_route_threshold: 4.0,
            wrong_lane_angle_deg: 120.0,
            wrong_lane_steps: 10,
            reward: RewardWeights::default(),
            ego_context: 0.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field: &str, why: &str| Err(EnvError::Config(format!("{field}: {why}")));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("episode.dt", "must be positive");
        }
        if self.max_steps == 0 {
            return bad("episode.max_steps", "must be >= 1");
        }
        if !(self.clip_radius > 0.0) {
            return bad("episode.clip_radius", "must be positive");
        }
        if self.history_len == 0 {
            return bad("episode.history_len", "must be >= 1");
        }
        if !(self.off_route_threshold > 0.0) {
            return bad("episode.off_route_threshold", "must be positive");
        }
        if !(0.0..=180.0).contains(&self.wrong_lane_angle_deg) {
            return bad("episode.wrong_lane_angle_deg", "must lie in [0, 180]");
        }
        if !(0.0..=90.0).contains(&self.ego_context) {
            return bad("episode.ego_context", "must lie in [0, 90]");
        }
        self.reward
            .validate()
            .map_err(|e| EnvError::Config(format!("reward: {e}")))
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("case targets scenario {case} but the environment runs {loaded}")]
    CaseMismatch { case: ScenarioName, loaded: ScenarioName },
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("no action for alive agent {0}")]
    MissingAction(u32),
    #[error("step called after the episode finished")]
    AlreadyDone,
    #[error("agent {0} is terminated")]
    AgentTerminated(u32),
    #[error("the ego agent is terminated")]
    EgoTerminated,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Raw history sample; turned into a dynamic vector when observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySample {
    pub pose: Pose2D,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    /// 1-based agent id.
    pub id: u32,
    pub vehicle: usize,
    pub path: usize,
    pub state: VehicleState,
    pub controller: ControllerMemory,
    pub genuine_svo: f64,
    pub status: TerminationStatus,
    pub terminated_at: Option<u32>,
    /// Newest sample first; always exactly `history_len` long.
    pub history: VecDeque<HistorySample>,
    /// Arclength of the agent's projection onto its own path.
    pub progress: f64,
    pub lateral_offset: f64,
    pub wrong_lane_count: u32,
    pub is_ego: bool,
}

impl AgentRecord {
    pub fn is_alive(&self) -> bool {
        self.status == TerminationStatus::Alive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scenario: ScenarioName,
    pub mode: EnvMode,
    pub agents: Vec<AgentRecord>,
    pub step_count: u32,
    pub rng_state: u64,
}

impl WorldState {
    pub fn agent(&self, id: u32) -> Option<&AgentRecord> {
        self.agents.get((id as usize).checked_sub(1)?)
    }

    pub fn is_done(&self) -> bool {
        self.agents.iter().all(|a| !a.is_alive())
    }

    pub fn alive_count(&self) -> usize {
        self.agents.iter().filter(|a| a.is_alive()).count()
    }

    pub fn ego(&self) -> Option<&AgentRecord> {
        self.agents.iter().find(|a| a.is_ego)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub status: TerminationStatus,
    /// Absent for agents already terminated before this step.
    pub reward: Option<RewardBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub agents: Vec<AgentOutcome>,
    pub episode_done: bool,
}

/// Indexed by agent position (id - 1); entries of terminated agents are
/// ignored.
pub type JointAction = [Option<Action>];

const PROGRESS_BACK: f64 = 5.0;
const PROGRESS_AHEAD: f64 = 20.0;

/// An engine bound to one scenario and episode configuration.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: Arc<ScenarioSpec>,
    config: EpisodeConfig,
    pid: Vec<PidParams>,
}

impl Environment {
    pub fn new(scenario: Arc<ScenarioSpec>, config: EpisodeConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let pid = scenario
            .vehicle_params
            .iter()
            .map(|vp| PidParams::for_step(config.dt, vp.accel_max))
            .collect();
        Ok(Self { scenario, config, pid })
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<ScenarioSpec> {
        &self.scenario
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn reset(&self, case: &CaseSpec, mode: EnvMode, seed: u64) -> Result<WorldState, EnvError> {
        if case.scenario != self.scenario.name {
            return Err(EnvError::CaseMismatch {
                case: case.scenario,
                loaded: self.scenario.name,
            });
        }
        case.validate(&self.scenario)
            .map_err(|e| EnvError::InvalidCase(e.to_string()))?;
        let h = self.config.history_len;
        let agents = case
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let path = self.scenario.path(a.path);
                let proj = path.project([a.pose.x, a.pose.y]);
                let sample = HistorySample {
                    pose: a.pose,
                    speed: a.speed,
                };
                AgentRecord {
                    id: i as u32 + 1,
                    vehicle: a.vehicle,
                    path: a.path,
                    state: VehicleState {
                        pose: a.pose,
                        speed: a.speed,
                    },
                    controller: ControllerMemory::default(),
                    genuine_svo: a.svo,
                    status: TerminationStatus::Alive,
                    terminated_at: None,
                    history: std::iter::repeat(sample).take(h).collect(),
                    progress: proj.arclength,
                    lateral_offset: proj.lateral_offset,
                    wrong_lane_count: 0,
                    is_ego: mode == EnvMode::EgoVsFlow && i == 0,
                }
            })
            .collect();
        Ok(WorldState {
            scenario: self.scenario.name,
            mode,
            agents,
            step_count: 0,
            rng_state: derive_seed(seed, &[case.case_id as u64]),
        })
    }

    pub fn footprint(&self, agent: &AgentRecord) -> OrientedBox {
        let vp = &self.scenario.vehicle_params[agent.vehicle];
        OrientedBox::new(agent.state.pose, vp.length, vp.width)
    }

    /// Advance all alive agents simultaneously.
    pub fn step(&self, world: &mut WorldState, actions: &JointAction) -> Result<StepOutcome, EnvError> {
        let order: Vec<usize> = (0..world.agents.len()).collect();
        self.step_in_order(world, actions, &order)
    }

    /// [`Environment::step`] with an explicit agent iteration order. Every
    /// order yields the same result; exposed for testing that claim.
    #[doc(hidden)]
    pub fn step_in_order(
        &self,
        world: &mut WorldState,
        actions: &JointAction,
        order: &[usize],
    ) -> Result<StepOutcome, EnvError> {
        if world.is_done() {
            return Err(EnvError::AlreadyDone);
        }
        for a in world.agents.iter().filter(|a| a.is_alive()) {
            if actions.get(a.id as usize - 1).copied().flatten().is_none() {
                return Err(EnvError::MissingAction(a.id));
            }
        }
        let dt = self.config.dt;
        let was_alive: Vec<bool> = world.agents.iter().map(|a| a.is_alive()).collect();

        // Each agent's transition only reads its own pre-step record.
        for &i in order {
            if !was_alive[i] {
                continue;
            }
            let agent = &mut world.agents[i];
            let vp = &self.scenario.vehicle_params[agent.vehicle];
            let action = actions[i].unwrap().clamped(vp);
            let accel = pid_speed_control(&agent.state, action.v_ref, &self.pid[agent.vehicle], &mut agent.controller, dt);
            agent.state = bicycle_step(&agent.state, accel, action.sigma, dt, vp);
            agent.history.pop_back();
            agent.history.push_front(HistorySample {
                pose: agent.state.pose,
                speed: agent.state.speed,
            });
        }
        world.step_count += 1;
        world.rng_state = splitmix64(world.rng_state);

        let statuses = self.classify_all(world, &was_alive);
        let rewards = self.rewards(world, &was_alive, &statuses);

        for (i, agent) in world.agents.iter_mut().enumerate() {
            if was_alive[i] && statuses[i].is_terminal() {
                agent.status = statuses[i];
                agent.terminated_at = Some(world.step_count);
            }
        }
        let agents = world
            .agents
            .iter()
            .zip(rewards)
            .map(|(a, reward)| AgentOutcome {
                status: a.status,
                reward,
            })
            .collect();
        Ok(StepOutcome {
            agents,
            episode_done: world.is_done(),
        })
    }

    /// Termination status of one alive agent against the current world,
    /// without mutating tracking state.
    pub fn classify_termination(&self, agent: &AgentRecord, world: &WorldState) -> TerminationStatus {
        let alive: Vec<bool> = world.agents.iter().map(|a| a.is_alive()).collect();
        let footprints: Vec<OrientedBox> = world.agents.iter().map(|a| self.footprint(a)).collect();
        let collided = self.collisions(world, &alive, &footprints);
        let i = agent.id as usize - 1;
        let mut probe = agent.clone();
        let wrong_now = self.in_wrong_lane(&probe);
        probe.wrong_lane_count = if wrong_now { probe.wrong_lane_count + 1 } else { 0 };
        self.classify(&probe, &footprints[i], collided[i], world.step_count)
    }

    fn classify_all(&self, world: &mut WorldState, was_alive: &[bool]) -> Vec<TerminationStatus> {
        let footprints: Vec<OrientedBox> = world.agents.iter().map(|a| self.footprint(a)).collect();
        let collided = self.collisions(world, was_alive, &footprints);
        let mut out = vec![TerminationStatus::Alive; world.agents.len()];
        for (i, agent) in world.agents.iter_mut().enumerate() {
            if !was_alive[i] {
                out[i] = agent.status;
                continue;
            }
            let path = self.scenario.path(agent.path);
            let p = [agent.state.pose.x, agent.state.pose.y];
            let proj = path.project_window(p, agent.progress - PROGRESS_BACK, agent.progress + PROGRESS_AHEAD);
            agent.progress = proj.arclength;
            agent.lateral_offset = proj.lateral_offset;
            agent.wrong_lane_count = if self.in_wrong_lane(agent) {
                agent.wrong_lane_count + 1
            } else {
                0
            };
            out[i] = self.classify(agent, &footprints[i], collided[i], world.step_count);
        }
        out
    }

    fn classify(&self, agent: &AgentRecord, footprint: &OrientedBox, collided: bool, step: u32) -> TerminationStatus {
        if collided {
            return TerminationStatus::Collision;
        }
        if footprint.corners().iter().any(|&c| !self.scenario.is_drivable(c)) {
            return TerminationStatus::OffRoad;
        }
        if agent.lateral_offset.abs() > self.config.off_route_threshold {
            return TerminationStatus::OffRoute;
        }
        if agent.wrong_lane_count >= self.config.wrong_lane_steps {
            return TerminationStatus::WrongLane;
        }
        if agent.progress >= self.scenario.zone_exit(agent.path) {
            return TerminationStatus::Success;
        }
        if step >= self.config.max_steps {
            return TerminationStatus::Timeout;
        }
        TerminationStatus::Alive
    }

    fn collisions(&self, world: &WorldState, alive: &[bool], footprints: &[OrientedBox]) -> Vec<bool> {
        let n = world.agents.len();
        let mut hit = vec![false; n];
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if !alive[j] {
                    continue;
                }
                let (a, b) = (&footprints[i], &footprints[j]);
                let reach = a.bounding_radius() + b.bounding_radius();
                if a.center.distance_to(&b.center) > reach {
                    continue;
                }
                if boxes_overlap(a, b) {
                    hit[i] = true;
                    hit[j] = true;
                }
            }
        }
        hit
    }

    /// Whether the agent's center lies in a lane corridor pointing against
    /// its heading.
    fn in_wrong_lane(&self, agent: &AgentRecord) -> bool {
        let p = [agent.state.pose.x, agent.state.pose.y];
        let limit = self.config.wrong_lane_angle_deg.to_radians();
        self.scenario.centerline_geometry().iter().any(|cl| {
            let half = 0.5 * cl.lane_width();
            if cl.bbox_distance(p) > half {
                return false;
            }
            let proj = cl.project(p);
            !proj.clamped
                && proj.lateral_offset.abs() <= half
                && normalize_angle(agent.state.pose.theta - proj.segment_heading).abs() > limit
        })
    }

    fn rewards(
        &self,
        world: &WorldState,
        was_alive: &[bool],
        statuses: &[TerminationStatus],
    ) -> Vec<Option<RewardBreakdown>> {
        let w = &self.config.reward;
        let mut out: Vec<Option<RewardBreakdown>> = world
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                was_alive[i].then(|| {
                    let v_max = self.scenario.vehicle_params[a.vehicle].v_max;
                    individual_reward(a.state.speed, v_max, statuses[i].is_failure(), w)
                })
            })
            .collect();
        let individual: Vec<f64> = out.iter().map(|r| r.map_or(0.0, |r| r.individual)).collect();
        let n = out.len();
        let ego_individual = world
            .agents
            .iter()
            .position(|a| a.is_ego)
            .and_then(|e| out[e].map(|r| r.individual));
        for (i, slot) in out.iter_mut().enumerate() {
            let Some(r) = slot else { continue };
            let agent = &world.agents[i];
            let c = if agent.is_ego {
                self.config.ego_context
            } else {
                agent.genuine_svo
            };
            if n > 1 {
                // terminated agents contribute zero to the others' mean
                let others: f64 = individual
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, v)| v)
                    .sum();
                r.composed = compose(r.individual, others / (n - 1) as f64, c);
            }
            r.adversary_signal = ego_individual.map(adversary_reward);
        }
        out
    }
}

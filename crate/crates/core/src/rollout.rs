//! Episode execution, batch runs, episode logs and replay.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::communication::{communicate, AdversaryInput, CommError, CommMode, DeliveredContext, MistakenSource};
use crate::dynamics::Action;
use crate::env::{EnvError, EnvMode, Environment, EpisodeConfig, TerminationStatus, WorldState};
use crate::geometry::Pose2D;
use crate::observation::{attach_context, build_adversary_observation, build_observation, ObservationError, ObservationFrame};
use crate::policy::{PolicyError, PolicyHandle};
use crate::reward::RewardBreakdown;
use crate::scenario::CaseSpec;
use crate::seed::derive_seed;

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout arguments: {0}")]
    Argument(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error("episode log error: {0}")]
    Log(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Policies and communication of one rollout.
#[derive(Debug, Clone)]
pub struct Participants {
    pub flow: PolicyHandle,
    pub comm: CommMode,
    /// Present iff the episode runs in ego-vs-flow mode.
    pub ego: Option<PolicyHandle>,
    /// Mistaken-context source, required by adversarial communication.
    pub adversary: Option<PolicyHandle>,
}

impl Participants {
    pub fn flow_only(flow: PolicyHandle, comm: CommMode) -> Self {
        Self {
            flow,
            comm,
            ego: None,
            adversary: None,
        }
    }

    pub fn mode(&self) -> EnvMode {
        if self.ego.is_some() {
            EnvMode::EgoVsFlow
        } else {
            EnvMode::Flow
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        let arg = |m: &str| Err(RolloutError::Argument(m.to_string()));
        if matches!(self.flow, PolicyHandle::NeuralAdversary(_)) {
            return arg("flow policy cannot be an adversary");
        }
        if matches!(self.ego, Some(PolicyHandle::NeuralAdversary(_))) {
            return arg("ego policy cannot be an adversary");
        }
        if self.comm == CommMode::Adversarial {
            if self.ego.is_none() {
                return arg("adversarial communication needs an ego policy (ego_vs_flow mode)");
            }
            if !matches!(self.adversary, Some(PolicyHandle::NeuralAdversary(_))) {
                return arg("adversarial communication needs an adversary policy");
            }
        }
        if let CommMode::Constant { value } = self.comm {
            if !(0.0..=90.0).contains(&value) {
                return arg("constant context outside [0, 90]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogDetail {
    /// Header, every step record and the terminal summary.
    Full,
    /// Header and terminal summary only.
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub schema_version: u32,
    pub engine_version: String,
    pub case: CaseSpec,
    pub repeat: u32,
    pub seed: u64,
    pub mode: EnvMode,
    pub comm_mode: CommMode,
    pub flow_policy: String,
    pub ego_policy: Option<String>,
    /// Full engine configuration the episode ran with.
    pub episode: EpisodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub id: u32,
    /// Action as emitted by the policy (before clamping).
    pub action: Action,
    /// Post-step pose and speed.
    pub pose: Pose2D,
    pub speed: f64,
    /// Context delivered for the agent's own entry.
    pub delivered_svo: Option<f64>,
    /// Mistaken ego context this agent received, if any.
    pub mistaken_ego_svo: Option<f64>,
    pub reward: RewardBreakdown,
    pub status: TerminationStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub agents: Vec<AgentStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: u32,
    pub is_ego: bool,
    pub status: TerminationStatus,
    pub terminated_at: Option<u32>,
    pub v_max: f64,
    /// Sum of post-step speeds over the steps the agent was alive.
    pub speed_sum: f64,
    pub alive_steps: u32,
    pub return_individual: f64,
    pub return_composed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub summary: Vec<AgentSummary>,
    pub wall_time_s: f64,
}

/// Wall time is excluded from equality.
impl PartialEq for EpisodeLog {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.steps == other.steps && self.summary == other.summary
    }
}

impl EpisodeLog {
    pub fn key(&self) -> (u32, u32) {
        (self.header.case.case_id, self.header.repeat)
    }

    pub fn step_count(&self) -> u32 {
        self.summary.iter().filter_map(|a| a.terminated_at).max().unwrap_or(0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(EpisodeHeader),
    Step(StepRecord),
    Summary {
        agents: Vec<AgentSummary>,
        wall_time_s: f64,
    },
}

struct Adversary<'a> {
    env: &'a Environment,
    world: &'a WorldState,
    policy: &'a PolicyHandle,
}

impl Adversary<'_> {
    /// Mistaken ego context produced for background agent `id`.
    fn for_agent(&self, id: u32) -> Result<Option<(ObservationFrame, f64)>, RolloutError> {
        let Some(ego) = self.world.ego().filter(|e| e.is_alive()) else {
            return Ok(None);
        };
        let me = self.world.agent(id).expect("alive agent");
        if me.state.pose.distance_to(&ego.state.pose) > self.env.config().clip_radius {
            return Ok(None);
        }
        let obs = build_adversary_observation(self.env, self.world, id)?;
        let value = self.policy.mistaken_svo(&obs)?;
        Ok(Some((obs, value)))
    }
}

fn delivered_for(
    env: &Environment,
    world: &WorldState,
    parts: &Participants,
    genuine: &[f64],
    id: u32,
) -> Result<DeliveredContext, RolloutError> {
    let agent = world.agent(id).expect("alive agent");
    if agent.is_ego {
        return Ok(DeliveredContext::constant(genuine.len(), env.config().ego_context));
    }
    let receiver = id as usize - 1;
    if parts.comm != CommMode::Adversarial {
        return Ok(communicate(&parts.comm, receiver, genuine, None)?);
    }
    let adversary = Adversary {
        env,
        world,
        policy: parts.adversary.as_ref().expect("validated"),
    };
    let clip_radius = env.config().clip_radius;
    match adversary.for_agent(id)? {
        Some((obs, value)) => {
            let source = move |_: &ObservationFrame| value;
            let input = AdversaryInput {
                source: Some(&source as &dyn MistakenSource),
                observation: Some(&obs),
                ego_distance: 0.0,
                clip_radius,
            };
            Ok(communicate(&parts.comm, receiver, genuine, Some(input))?)
        }
        None => {
            let input = AdversaryInput {
                source: None,
                observation: None,
                ego_distance: f64::INFINITY,
                clip_radius,
            };
            Ok(communicate(&parts.comm, receiver, genuine, Some(input))?)
        }
    }
}

/// Run one episode to completion.
pub fn run_episode(
    env: &Environment,
    case: &CaseSpec,
    parts: &Participants,
    seed: u64,
    detail: LogDetail,
) -> Result<EpisodeLog, RolloutError> {
    run_episode_repeat(env, case, parts, seed, 0, detail)
}

fn run_episode_repeat(
    env: &Environment,
    case: &CaseSpec,
    parts: &Participants,
    seed: u64,
    repeat: u32,
    detail: LogDetail,
) -> Result<EpisodeLog, RolloutError> {
    parts.validate()?;
    let started = Instant::now();
    let mode = parts.mode();
    let mut world = env.reset(case, mode, seed)?;
    let n = world.agents.len();
    let genuine: Vec<f64> = world.agents.iter().map(|a| a.genuine_svo).collect();
    let header = EpisodeHeader {
        schema_version: LOG_SCHEMA_VERSION,
        engine_version: ENGINE_VERSION.to_string(),
        case: case.clone(),
        repeat,
        seed,
        mode,
        comm_mode: parts.comm,
        flow_policy: parts.flow.to_string(),
        ego_policy: parts.ego.as_ref().map(|p| p.to_string()),
        episode: *env.config(),
    };
    let mut summary: Vec<AgentSummary> = world
        .agents
        .iter()
        .map(|a| AgentSummary {
            id: a.id,
            is_ego: a.is_ego,
            status: TerminationStatus::Alive,
            terminated_at: None,
            v_max: env.scenario().vehicle_params[a.vehicle].v_max,
            speed_sum: 0.0,
            alive_steps: 0,
            return_individual: 0.0,
            return_composed: 0.0,
        })
        .collect();
    let mut steps = Vec::new();
    let full = detail == LogDetail::Full;

    while !world.is_done() {
        let mut actions: Vec<Option<Action>> = vec![None; n];
        let mut contexts: Vec<Option<DeliveredContext>> = vec![None; n];
        for agent in world.agents.iter().filter(|a| a.is_alive()) {
            let i = agent.id as usize - 1;
            let policy = if agent.is_ego {
                parts.ego.as_ref().expect("ego mode")
            } else {
                &parts.flow
            };
            let obs = if policy.needs_observation() || full {
                let delivered = delivered_for(env, &world, parts, &genuine, agent.id)?;
                let obs = if policy.needs_observation() {
                    let raw = build_observation(env, &world, agent.id)?;
                    Some(attach_context(&raw, &delivered)?)
                } else {
                    None
                };
                contexts[i] = Some(delivered);
                obs
            } else {
                None
            };
            actions[i] = Some(policy.act(env, &world, agent.id, obs.as_ref())?);
        }
        let outcome = env.step(&mut world, &actions)?;
        let mut records = Vec::new();
        for (i, out) in outcome.agents.iter().enumerate() {
            let Some(reward) = out.reward else { continue };
            let agent = &world.agents[i];
            let s = &mut summary[i];
            s.speed_sum += agent.state.speed;
            s.alive_steps += 1;
            s.return_individual += reward.individual;
            s.return_composed += reward.composed;
            if full {
                let ctx = contexts[i].as_ref();
                records.push(AgentStep {
                    id: agent.id,
                    action: actions[i].expect("alive agent acted"),
                    pose: agent.state.pose,
                    speed: agent.state.speed,
                    delivered_svo: ctx.map(|c| c.entries[i]),
                    mistaken_ego_svo: ctx.and_then(|c| {
                        (c.provenance[0] == crate::communication::Provenance::Mistaken).then(|| c.entries[0])
                    }),
                    reward,
                    status: out.status,
                });
            }
        }
        if full {
            steps.push(StepRecord {
                step: world.step_count,
                agents: records,
            });
        }
    }
    for (s, a) in summary.iter_mut().zip(&world.agents) {
        s.status = a.status;
        s.terminated_at = a.terminated_at;
    }
    Ok(EpisodeLog {
        header,
        steps,
        summary,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Seed of repeat `repeat` of case `case_id`.
pub fn episode_seed(master: u64, case_id: u32, repeat: u32) -> u64 {
    derive_seed(master, &[case_id as u64, repeat as u64])
}

/// Run `repeats` episodes of every case on `workers` threads. Results are
/// ordered by (case position, repeat) and do not depend on `workers`.
pub fn run_batch(
    env: &Environment,
    cases: &[CaseSpec],
    repeats: u32,
    master_seed: u64,
    parts: &Participants,
    workers: usize,
    detail: LogDetail,
) -> Result<Vec<EpisodeLog>, RolloutError> {
    if repeats == 0 {
        return Err(RolloutError::Argument("repeats must be >= 1".into()));
    }
    if workers == 0 {
        return Err(RolloutError::Argument("workers must be >= 1".into()));
    }
    parts.validate()?;
    let jobs: Vec<(&CaseSpec, u32)> = cases
        .iter()
        .flat_map(|c| (0..repeats).map(move |r| (c, r)))
        .collect();
    let run = |&(case, repeat): &(&CaseSpec, u32)| {
        let seed = episode_seed(master_seed, case.case_id, repeat);
        run_episode_repeat(env, case, parts, seed, repeat, detail)
    };
    if workers == 1 {
        return jobs.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RolloutError::Argument(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RolloutError + '_ {
    move |source| RolloutError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Write one log as JSON lines (gzip-compressed when the path ends in `.gz`).
pub fn write_log(path: &Path, log: &EpisodeLog) -> Result<(), RolloutError> {
    write_logs(path, std::slice::from_ref(log))
}

/// Write several logs back to back into one JSON-lines stream.
pub fn write_logs(path: &Path, logs: &[EpisodeLog]) -> Result<(), RolloutError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut sink: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    write_logs_to(&mut sink, logs).map_err(io_err(path))?;
    sink.flush().map_err(io_err(path))
}

pub fn write_logs_to(sink: &mut dyn Write, logs: &[EpisodeLog]) -> std::io::Result<()> {
    for log in logs {
        let mut line = |l: &LogLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut *sink, l)?;
            sink.write_all(b"\n")
        };
        line(&LogLine::Header(log.header.clone()))?;
        for s in &log.steps {
            line(&LogLine::Step(s.clone()))?;
        }
        line(&LogLine::Summary {
            agents: log.summary.clone(),
            wall_time_s: log.wall_time_s,
        })?;
    }
    Ok(())
}

pub fn read_logs(path: &Path) -> Result<Vec<EpisodeLog>, RolloutError> {
    let file = File::open(path).map_err(io_err(path))?;
    let source: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    read_logs_from(BufReader::new(source))
}

pub fn read_logs_from(reader: impl BufRead) -> Result<Vec<EpisodeLog>, RolloutError> {
    let mut logs = Vec::new();
    let mut current: Option<(EpisodeHeader, Vec<StepRecord>)> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RolloutError::Log(format!("line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| RolloutError::Log(format!("line {}: {e}", n + 1)))?;
        match parsed {
            LogLine::Header(h) => {
                if current.is_some() {
                    return Err(RolloutError::Log(format!("line {}: header before summary", n + 1)));
                }
                if h.schema_version != LOG_SCHEMA_VERSION {
                    return Err(RolloutError::Log(format!(
                        "unsupported log schema version {}",
                        h.schema_version
                    )));
                }
                current = Some((h, Vec::new()));
            }
            LogLine::Step(s) => match current.as_mut() {
                Some((_, steps)) => steps.push(s),
                None => return Err(RolloutError::Log(format!("line {}: step without header", n + 1))),
            },
            LogLine::Summary { agents, wall_time_s } => {
                let (header, steps) = current
                    .take()
                    .ok_or_else(|| RolloutError::Log(format!("line {}: summary without header", n + 1)))?;
                logs.push(EpisodeLog {
                    header,
                    steps,
                    summary: agents,
                    wall_time_s,
                });
            }
        }
    }
    if current.is_some() {
        return Err(RolloutError::Log("log ends inside an episode".into()));
    }
    Ok(logs)
}

/// First divergence found while replaying a log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    pub step: u32,
    pub id: u32,
    pub what: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub steps: u32,
    pub mismatches: Vec<ReplayMismatch>,
    /// World state after the requested dump step, if any.
    pub dump: Option<WorldState>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Feed a full log's recorded actions back through the engine and compare
/// every recorded pose, speed and status bitwise.
pub fn replay(env: &Environment, log: &EpisodeLog, dump_step: Option<u32>) -> Result<ReplayReport, RolloutError> {
    if log.steps.is_empty() && !log.summary.is_empty() {
        return Err(RolloutError::Log("log has no step records (summary detail)".into()));
    }
    let h = &log.header;
    if h.episode != *env.config() {
        return Err(RolloutError::Log("log was recorded with a different episode configuration".into()));
    }
    if h.case.scenario != env.scenario().name {
        return Err(RolloutError::Log(format!(
            "log is for scenario {}, engine runs {}",
            h.case.scenario,
            env.scenario().name
        )));
    }
    let mut world = env.reset(&h.case, h.mode, h.seed)?;
    let n = world.agents.len();
    let mut mismatches = Vec::new();
    let mut dump = (dump_step == Some(0)).then(|| world.clone());
    for record in &log.steps {
        let mut actions = vec![None; n];
        for a in &record.agents {
            let slot = actions
                .get_mut(a.id as usize - 1)
                .ok_or_else(|| RolloutError::Log(format!("step {}: unknown agent {}", record.step, a.id)))?;
            *slot = Some(a.action);
        }
        let outcome = env.step(&mut world, &actions)?;
        for a in &record.agents {
            let live = &world.agents[a.id as usize - 1];
            let mut diff = |what: &str| {
                mismatches.push(ReplayMismatch {
                    step: record.step,
                    id: a.id,
                    what: what.to_string(),
                })
            };
            let p = live.state.pose;
            if p.x.to_bits() != a.pose.x.to_bits()
                || p.y.to_bits() != a.pose.y.to_bits()
                || p.theta.to_bits() != a.pose.theta.to_bits()
            {
                diff("pose");
            }
            if live.state.speed.to_bits() != a.speed.to_bits() {
                diff("speed");
            }
            if outcome.agents[a.id as usize - 1].status != a.status {
                diff("status");
            }
        }
        if dump_step == Some(world.step_count) {
            dump = Some(world.clone());
        }
    }
    Ok(ReplayReport {
        steps: world.step_count,
        mismatches,
        dump,
    })
}

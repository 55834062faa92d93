use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{boxes_overlap, OrientedBox, Pose2D};
use crate::seed::derive_seed;

use super::{ScenarioName, ScenarioSpec, FORMAT_VERSION};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
const SPAWN_JITTER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvoMode {
    /// i.i.d. uniform on [0, 90] degrees per agent.
    Uniform,
    Fixed(f64),
}

impl std::str::FromStr for SvoMode {
    type Err = String;

    /// `uniform` or `fixed:<degrees>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "uniform" {
            return Ok(SvoMode::Uniform);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let deg: f64 = v.parse().map_err(|_| format!("bad svo degrees `{v}`"))?;
            if !(0.0..=90.0).contains(&deg) {
                return Err(format!("fixed svo {deg} outside [0, 90]"));
            }
            return Ok(SvoMode::Fixed(deg));
        }
        Err(format!("unknown svo mode `{s}` (expected uniform or fixed:C)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseAgent {
    pub path: usize,
    pub pose: Pose2D,
    pub speed: f64,
    /// Genuine SVO in degrees.
    pub svo: f64,
    pub vehicle: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub case_id: u32,
    pub scenario: ScenarioName,
    pub seed: u64,
    pub agents: Vec<CaseAgent>,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case {case_id}: no collision-free placement after {attempts} attempts")]
    Placement { case_id: u32, attempts: usize },
    #[error("invalid case request: {0}")]
    InvalidArgument(String),
    #[error("case {case_id} invalid: {reason}")]
    Invalid { case_id: u32, reason: String },
    #[error("failed to parse case file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CaseSpec {
    pub fn footprint(&self, i: usize, scenario: &ScenarioSpec) -> OrientedBox {
        let a = &self.agents[i];
        let vp = &scenario.vehicle_params[a.vehicle];
        OrientedBox::new(a.pose, vp.length, vp.width)
    }

    /// Check the case against its scenario.
    pub fn validate(&self, scenario: &ScenarioSpec) -> Result<(), CaseError> {
        let fail = |reason: String| CaseError::Invalid {
            case_id: self.case_id,
            reason,
        };
        if self.scenario != scenario.name {
            return Err(fail(format!(
                "case targets {} but scenario is {}",
                self.scenario, scenario.name
            )));
        }
        if self.agents.is_empty() {
            return Err(fail("agent count must be >= 1".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(0.0..=90.0).contains(&a.svo) {
                return Err(fail(format!("agent {} svo {} outside [0, 90]", i + 1, a.svo)));
            }
            if a.path >= scenario.candidate_paths.len() {
                return Err(fail(format!("agent {} references unknown path {}", i + 1, a.path)));
            }
            let Some(vp) = scenario.vehicle_params.get(a.vehicle) else {
                return Err(fail(format!("agent {} references unknown vehicle {}", i + 1, a.vehicle)));
            };
            if !(0.0..=vp.v_max).contains(&a.speed) {
                return Err(fail(format!("agent {} speed {} outside [0, v_max]", i + 1, a.speed)));
            }
        }
        let boxes: Vec<OrientedBox> = (0..self.agents.len()).map(|i| self.footprint(i, scenario)).collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if boxes_overlap(&boxes[i], &boxes[j]) {
                    return Err(fail(format!("agents {} and {} overlap", i + 1, j + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Generate `n` cases with the scenario's default agent count.
pub fn generate_cases(
    scenario: &ScenarioSpec,
    n: usize,
    master_seed: u64,
    svo_mode: SvoMode,
) -> Result<Vec<CaseSpec>, CaseError> {
    generate_cases_with_count(scenario, n, master_seed, svo_mode, scenario.default_agent_count)
}

pub fn generate_cases_with_count(
    scenario: &ScenarioSpec,
    n: usize,
    master_seed: u64,
    svo_mode: SvoMode,
    agent_count: usize,
) -> Result<Vec<CaseSpec>, CaseError> {
    if n == 0 {
        return Err(CaseError::InvalidArgument("case count must be >= 1".into()));
    }
    if agent_count == 0 {
        return Err(CaseError::InvalidArgument("agent count must be >= 1".into()));
    }
    if let SvoMode::Fixed(c) = svo_mode {
        if !(0.0..=90.0).contains(&c) {
            return Err(CaseError::InvalidArgument(format!("fixed svo {c} outside [0, 90]")));
        }
    }
    (0..n as u32)
        .map(|case_id| {
            let seed = derive_seed(master_seed, &[case_id as u64]);
            generate_one(scenario, case_id, seed, svo_mode, agent_count)
        })
        .collect()
}

fn generate_one(
    scenario: &ScenarioSpec,
    case_id: u32,
    seed: u64,
    svo_mode: SvoMode,
    agent_count: usize,
) -> Result<CaseSpec, CaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vehicle = 0;
    let vp = scenario.vehicle_params[vehicle];
    let mut agents: Vec<CaseAgent> = Vec::with_capacity(agent_count);
    let mut boxes: Vec<OrientedBox> = Vec::with_capacity(agent_count);
    let mut attempts = 0;
    while agents.len() < agent_count {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(CaseError::Placement { case_id, attempts });
        }
        attempts += 1;
        let slot_idx = rng.gen_range(0..scenario.spawn_slots.len());
        let jitter = rng.gen_range(-SPAWN_JITTER..=SPAWN_JITTER);
        let slot = scenario.spawn_slots[slot_idx];
        let path = scenario.path(slot.path);
        let s = (scenario.slot_arclength(slot_idx) + jitter).clamp(0.0, path.total_length());
        let pose = path.pose_at(s);
        let fp = OrientedBox::new(pose, vp.length, vp.width);
        if boxes.iter().any(|b| boxes_overlap(b, &fp)) {
            continue;
        }
        let speed = rng.gen_range(0.0..=0.5 * vp.v_max);
        let svo = match svo_mode {
            SvoMode::Uniform => rng.gen_range(0.0..=90.0),
            SvoMode::Fixed(c) => c,
        };
        boxes.push(fp);
        agents.push(CaseAgent {
            path: slot.path,
            pose,
            speed,
            svo,
            vehicle,
        });
    }
    Ok(CaseSpec {
        case_id,
        scenario: scenario.name,
        seed,
        agents,
    })
}

/// On-disk case list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub format_version: u32,
    pub scenario: ScenarioName,
    pub cases: Vec<CaseSpec>,
}

pub fn save_cases(path: &Path, scenario: ScenarioName, cases: &[CaseSpec]) -> Result<(), CaseError> {
    let file = CaseFile {
        format_version: FORMAT_VERSION,
        scenario,
        cases: cases.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_cases(path: &Path) -> Result<CaseFile, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CaseFile = serde_json::from_str(&text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(CaseError::InvalidArgument(format!(
            "unsupported case file format_version {}",
            file.format_version
        )));
    }
    Ok(file)
}

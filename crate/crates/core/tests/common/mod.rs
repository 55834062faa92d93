#![allow(dead_code)]

use std::sync::Arc;

use svoflow::env::{EpisodeConfig, Environment};
use svoflow::geometry::Pose2D;
use svoflow::scenario::{CaseAgent, CaseSpec, ScenarioName, ScenarioSpec};

pub fn scenario(name: ScenarioName) -> Arc<ScenarioSpec> {
    Arc::new(ScenarioSpec::bundled(name))
}

pub fn env(name: ScenarioName) -> Environment {
    Environment::new(scenario(name), EpisodeConfig::default()).unwrap()
}

pub fn env_with(name: ScenarioName, config: EpisodeConfig) -> Environment {
    Environment::new(scenario(name), config).unwrap()
}

pub fn agent(path: usize, x: f64, y: f64, theta: f64, speed: f64, svo: f64) -> CaseAgent {
    CaseAgent {
        path,
        pose: Pose2D::new(x, y, theta),
        speed,
        svo,
        vehicle: 0,
    }
}

/// Case on the merge map; path 0 runs along y = 0 in +x from x = -90.
pub fn merge_case(agents: Vec<CaseAgent>) -> CaseSpec {
    CaseSpec {
        case_id: 0,
        scenario: ScenarioName::Merge,
        seed: 0,
        agents,
    }
}

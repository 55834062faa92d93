//! Run a small IDM batch on the merge map and print its metrics.
//!
//! cargo run --release -p svoflow-core --example quickstart

use std::sync::Arc;

use svoflow::communication::CommMode;
use svoflow::env::{EpisodeConfig, Environment};
use svoflow::metrics::{aggregate_metrics, format_table, EfficiencyMode, MetricScope};
use svoflow::policy::PolicyHandle;
use svoflow::rollout::{run_batch, LogDetail, Participants};
use svoflow::scenario::{generate_cases, ScenarioName, ScenarioSpec, SvoMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Arc::new(ScenarioSpec::bundled(ScenarioName::Merge));
    let cases = generate_cases(&scenario, 20, 1, SvoMode::Uniform)?;
    let env = Environment::new(scenario, EpisodeConfig::default())?;
    let parts = Participants::flow_only(PolicyHandle::idm(), CommMode::FullyVisibleGenuine);
    let logs = run_batch(&env, &cases, 1, 7, &parts, 1, LogDetail::Summary)?;
    let report = aggregate_metrics(&logs, MetricScope::Flow, EfficiencyMode::NormalizedSpeed)?;
    print!("{}", format_table(&[("idm".to_string(), report)]));
    Ok(())
}

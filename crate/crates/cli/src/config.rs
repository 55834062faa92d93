//! TOML run configuration and its resolution into engine objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use svoflow::communication::CommMode;
use svoflow::env::{EpisodeConfig, Environment};
use svoflow::metrics::EfficiencyMode;
use svoflow::policy::{PolicyHandle, WeightBundle};
use svoflow::rollout::LogDetail;
use svoflow::scenario::{generate_cases_with_count, load_cases, resolve_scenario, CaseSpec, ScenarioSpec, SvoMode};

use crate::CliError;

/// Default output directory when neither the flag nor the config sets one.
pub const OUT_ENV: &str = "SVOFLOW_OUT";
const DEFAULT_OUT: &str = "svoflow-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled scenario name or path to a scenario JSON file.
    pub scenario: String,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "one")]
    pub repeats: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "summary")]
    pub log_detail: LogDetail,
    #[serde(default)]
    pub cases: CasesConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    pub ego: Option<WeightsConfig>,
    pub adversary: Option<WeightsConfig>,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn one() -> u32 {
    1
}

fn summary() -> LogDetail {
    LogDetail::Summary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CasesConfig {
    /// Case file; cases are generated from `count`/`seed`/`svo` when absent.
    pub file: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub svo: String,
    /// Agents per case; the scenario default when absent.
    pub agents: Option<usize>,
}

impl Default for CasesConfig {
    fn default() -> Self {
        Self {
            file: None,
            count: 200,
            seed: 0,
            svo: "uniform".into(),
            agents: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// `idm` or `neural:<weights path>`.
    pub policy: String,
    /// `constant:C`, `self_visible`, `fully_visible` or `adversarial`.
    pub comm_mode: String,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            policy: "idm".into(),
            comm_mode: "fully_visible".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub efficiency: EfficiencyMode,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    /// Parse a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let raw = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw).map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok((config, raw))
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if looks_like_path(&self.scenario) {
            self.scenario = base.join(&self.scenario).display().to_string();
        }
        if let Some(p) = self.output_dir.as_mut() {
            join(p);
        }
        if let Some(p) = self.cases.file.as_mut() {
            join(p);
        }
        for w in [self.ego.as_mut(), self.adversary.as_mut()].into_iter().flatten() {
            join(&mut w.weights);
        }
        if let Some(rest) = self.flow.policy.strip_prefix("neural:") {
            if Path::new(rest).is_relative() {
                self.flow.policy = format!("neural:{}", base.join(rest).display());
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.repeats == 0 {
            return Err(config_err("repeats", "must be >= 1"));
        }
        self.episode.validate().map_err(|e| config_err("episode", e))?;
        self.comm_mode()?;
        if self.cases.file.is_none() {
            if self.cases.count == 0 {
                return Err(config_err("cases.count", "must be >= 1"));
            }
            self.svo_mode()?;
        }
        Ok(())
    }

    pub fn comm_mode(&self) -> Result<CommMode, CliError> {
        self.flow.comm_mode.parse().map_err(|e| config_err("flow.comm_mode", e))
    }

    fn svo_mode(&self) -> Result<SvoMode, CliError> {
        self.cases.svo.parse().map_err(|e| config_err("cases.svo", e))
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(default_out_dir)
    }

    pub fn scenario_spec(&self) -> Result<Arc<ScenarioSpec>, CliError> {
        resolve_scenario(&self.scenario)
            .map(Arc::new)
            .map_err(|e| config_err("scenario", e))
    }

    pub fn environment(&self, scenario: Arc<ScenarioSpec>) -> Result<Environment, CliError> {
        Environment::new(scenario, self.episode).map_err(|e| config_err("episode", e))
    }

    pub fn load_or_generate_cases(&self, scenario: &ScenarioSpec) -> Result<Vec<CaseSpec>, CliError> {
        match &self.cases.file {
            Some(path) => {
                let file = load_cases(path).map_err(|e| config_err("cases.file", e))?;
                if file.scenario != scenario.name {
                    return Err(config_err(
                        "cases.file",
                        format!("cases are for {}, scenario is {}", file.scenario, scenario.name),
                    ));
                }
                for c in &file.cases {
                    c.validate(scenario).map_err(|e| config_err("cases.file", e))?;
                }
                Ok(file.cases)
            }
            None => {
                let agents = self.cases.agents.unwrap_or(scenario.default_agent_count);
                generate_cases_with_count(scenario, self.cases.count, self.cases.seed, self.svo_mode()?, agents)
                    .map_err(|e| config_err("cases", e))
            }
        }
    }

    pub fn weights(field: &str, path: &Path) -> Result<Arc<WeightBundle>, CliError> {
        WeightBundle::load(path).map(Arc::new).map_err(|e| config_err(field, e))
    }
}

fn looks_like_path(s: &str) -> bool {
    s.contains('/') || s.contains('\\') || s.ends_with(".json")
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// A named flow policy: `idm`, `neural:<path>` or `<label>=<either>`.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub label: String,
    pub spec: String,
    pub weights: Option<PathBuf>,
}

impl FlowSpec {
    pub fn parse(field: &str, text: &str) -> Result<Self, CliError> {
        let (label, spec) = match text.split_once('=') {
            Some((l, s)) if !l.is_empty() => (Some(l.to_string()), s),
            _ => (None, text),
        };
        if spec == "idm" {
            return Ok(Self {
                label: label.unwrap_or_else(|| "idm".into()),
                spec: spec.into(),
                weights: None,
            });
        }
        let Some(path) = spec.strip_prefix("neural:") else {
            return Err(config_err(field, format!("unknown policy `{spec}` (expected idm or neural:<path>)")));
        };
        let path = PathBuf::from(path);
        let label = label.unwrap_or_else(|| path.file_stem().map_or("neural".into(), |s| s.to_string_lossy().into_owned()));
        Ok(Self {
            label,
            spec: spec.into(),
            weights: Some(path),
        })
    }

    pub fn handle(&self, field: &str) -> Result<PolicyHandle, CliError> {
        match &self.weights {
            None => Ok(PolicyHandle::idm()),
            Some(path) => {
                let bundle = RunConfig::weights(field, path)?;
                PolicyHandle::neural_lower(bundle).map_err(|e| config_err(field, e))
            }
        }
    }
}

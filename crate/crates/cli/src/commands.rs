//! Subcommand implementations.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use svoflow::communication::CommMode;
use svoflow::env::Environment;
use svoflow::metrics::{aggregate_metrics, format_table, paired_comparison, MetricScope, MetricsReport};
use svoflow::policy::PolicyHandle;
use svoflow::rollout::{read_logs, replay as replay_log, run_batch, write_logs, EpisodeLog, LogDetail, Participants};
use svoflow::scenario::{generate_cases_with_count, resolve_scenario, save_cases, ScenarioSpec, SvoMode};

use crate::config::{default_out_dir, FlowSpec, RunConfig};
use crate::output::{create_dir, metrics_csv, sha256_hex, write_text, Manifest};
use crate::{CliError, CompareArgs, DetailArg, EvaluateArgs, GenCasesArgs, ReplayArgs, RolloutArgs, RunOverrides, ScopeArg};

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn gen_cases(a: GenCasesArgs) -> Result<(), CliError> {
    let scenario = resolve_scenario(&a.scenario).map_err(|e| CliError::Config(format!("--scenario: {e}")))?;
    let svo: SvoMode = a.svo.parse().map_err(|e| CliError::Config(format!("--svo: {e}")))?;
    let agents = a.agents.unwrap_or(scenario.default_agent_count);
    let cases = generate_cases_with_count(&scenario, a.n, a.seed, svo, agents)
        .map_err(|e| CliError::Config(format!("--n/--agents: {e}")))?;
    let path = a.out.unwrap_or_else(|| {
        default_out_dir().join(format!("cases-{}-n{}-seed{}.json", scenario.name, a.n, a.seed))
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_cases(&path, scenario.name, &cases).map_err(runtime)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        scenario: &'a str,
        n: usize,
        seed: u64,
        svo: &'a str,
        agents: usize,
    }
    let resolved = Resolved {
        scenario: &a.scenario,
        n: a.n,
        seed: a.seed,
        svo: &a.svo,
        agents,
    };
    let mut manifest = Manifest::new("gen-cases", &resolved, 1)?;
    manifest.add_file("cases", &path)?;
    manifest.write(&path.with_extension("manifest.json"))?;
    println!("wrote {} cases to {}", cases.len(), path.display());
    Ok(())
}

fn apply_overrides(config: &mut RunConfig, o: &RunOverrides) {
    if let Some(r) = o.repeats {
        config.repeats = r;
    }
    if let Some(s) = o.seed {
        config.master_seed = s;
    }
    if let Some(c) = &o.comm_mode {
        config.flow.comm_mode = c.clone();
    }
    if let Some(d) = o.log_detail {
        config.log_detail = match d {
            DetailArg::Full => LogDetail::Full,
            DetailArg::Summary => LogDetail::Summary,
        };
    }
}

fn workers(o: &RunOverrides) -> Result<usize, CliError> {
    match o.workers {
        Some(0) => Err(CliError::Config("--workers: must be >= 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Shared setup of `rollout` and `evaluate`.
struct Prepared {
    config: RunConfig,
    raw: Vec<u8>,
    scenario: Arc<ScenarioSpec>,
    env: Environment,
    out: PathBuf,
    workers: usize,
}

fn prepare(config_path: &Path, overrides: &RunOverrides, edit: impl FnOnce(&mut RunConfig)) -> Result<Prepared, CliError> {
    let (mut config, raw) = RunConfig::load(config_path)?;
    apply_overrides(&mut config, overrides);
    edit(&mut config);
    config.validate()?;
    let workers = workers(overrides)?;
    let scenario = config.scenario_spec()?;
    let env = config.environment(scenario.clone())?;
    let out = config.output_dir(overrides.out.as_deref());
    Ok(Prepared {
        config,
        raw,
        scenario,
        env,
        out,
        workers,
    })
}

fn start_manifest(command: &str, p: &Prepared, config_path: &Path, resolved: &impl Serialize) -> Result<Manifest, CliError> {
    let mut m = Manifest::new(command, resolved, p.workers)?;
    m.config_file = Some(config_path.to_path_buf());
    m.config_file_sha256 = Some(sha256_hex(&p.raw));
    Ok(m)
}

fn write_run_logs(dir: &Path, name: &str, logs: &[EpisodeLog], manifest: &mut Manifest) -> Result<(), CliError> {
    let path = dir.join(name);
    write_logs(&path, logs).map_err(runtime)?;
    manifest.add_file(name, &path)
}

fn finish(dir: &Path, rows: &[(String, MetricsReport)], manifest: &mut Manifest) -> Result<(), CliError> {
    let csv = dir.join("metrics.csv");
    write_text(&csv, &metrics_csv(rows))?;
    manifest.add_file("metrics.csv", &csv)?;
    let table = format_table(rows);
    let txt = dir.join("metrics.txt");
    write_text(&txt, &table)?;
    manifest.add_file("metrics.txt", &txt)?;
    manifest.write(&dir.join("manifest.json"))?;
    print!("{table}");
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn rollout(a: RolloutArgs) -> Result<(), CliError> {
    let p = prepare(&a.config, &a.overrides, |c| {
        if let Some(f) = &a.flow {
            c.flow.policy = f.clone();
        }
    })?;
    let config = &p.config;
    if config.ego.is_some() || config.adversary.is_some() {
        return Err(CliError::Config(
            "ego: rollout runs flow-only episodes; use evaluate for ego and adversary runs".into(),
        ));
    }
    let comm = config.comm_mode()?;
    if comm == CommMode::Adversarial {
        return Err(CliError::Config("flow.comm_mode: adversarial communication needs an ego; use evaluate".into()));
    }
    let flow = FlowSpec::parse("flow.policy", &config.flow.policy)?;
    let handle = flow.handle("flow.policy")?;
    let cases = config.load_or_generate_cases(&p.scenario)?;

    create_dir(&p.out)?;
    let mut manifest = start_manifest("rollout", &p, &a.config, config)?;
    if let Some(w) = &flow.weights {
        manifest.add_file("flow_weights", w)?;
    }
    let cases_path = p.out.join("cases.json");
    save_cases(&cases_path, p.scenario.name, &cases).map_err(runtime)?;
    manifest.add_file("cases.json", &cases_path)?;

    let parts = Participants::flow_only(handle, comm);
    let logs = run_batch(&p.env, &cases, config.repeats, config.master_seed, &parts, p.workers, config.log_detail)
        .map_err(runtime)?;
    manifest.add_logs(&flow.label, &logs);
    write_run_logs(&p.out, "logs.jsonl.gz", &logs, &mut manifest)?;
    let report = aggregate_metrics(&logs, MetricScope::Flow, config.metrics.efficiency).map_err(runtime)?;
    finish(&p.out, &[(flow.label, report)], &mut manifest)
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let p = prepare(&a.config, &a.overrides, |c| {
        if let Some(w) = &a.ego_weights {
            c.ego = Some(crate::config::WeightsConfig { weights: w.clone() });
        }
    })?;
    let config = &p.config;
    let ego_path = config
        .ego
        .as_ref()
        .map(|e| e.weights.clone())
        .ok_or_else(|| CliError::Config("ego.weights: required (set [ego] weights or pass --ego-weights)".into()))?;
    let ego_bundle = RunConfig::weights("ego.weights", &ego_path)?;
    let ego = PolicyHandle::neural_lower(ego_bundle).map_err(|e| CliError::Config(format!("ego.weights: {e}")))?;
    let comm = config.comm_mode()?;
    let adversary = match (&config.adversary, comm) {
        (Some(adv), CommMode::Adversarial) => {
            let bundle = RunConfig::weights("adversary.weights", &adv.weights)?;
            Some(PolicyHandle::neural_adversary(bundle).map_err(|e| CliError::Config(format!("adversary.weights: {e}")))?)
        }
        (None, CommMode::Adversarial) => {
            return Err(CliError::Config("adversary.weights: required by flow.comm_mode = adversarial".into()))
        }
        (Some(_), _) => {
            return Err(CliError::Config("adversary: only used with flow.comm_mode = adversarial".into()))
        }
        (None, _) => None,
    };
    let flow_texts = if a.flows.is_empty() {
        vec![config.flow.policy.clone()]
    } else {
        a.flows.clone()
    };
    let flows = flow_texts
        .iter()
        .map(|t| FlowSpec::parse("--flows", t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut labels = BTreeSet::new();
    for f in &flows {
        if !labels.insert(f.label.clone()) {
            return Err(CliError::Config(format!("--flows: duplicate label `{}`; use label=policy", f.label)));
        }
    }
    let handles = flows
        .iter()
        .map(|f| f.handle("--flows"))
        .collect::<Result<Vec<_>, _>>()?;
    let cases = config.load_or_generate_cases(&p.scenario)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        config: &'a RunConfig,
        flows: Vec<String>,
    }
    let resolved = Resolved {
        config,
        flows: flows.iter().map(|f| format!("{}={}", f.label, f.spec)).collect(),
    };
    create_dir(&p.out)?;
    let mut manifest = start_manifest("evaluate", &p, &a.config, &resolved)?;
    manifest.add_file("ego_weights", &ego_path)?;
    if let Some(adv) = &config.adversary {
        manifest.add_file("adversary_weights", &adv.weights)?;
    }
    let cases_path = p.out.join("cases.json");
    save_cases(&cases_path, p.scenario.name, &cases).map_err(runtime)?;
    manifest.add_file("cases.json", &cases_path)?;

    let mut rows = Vec::new();
    for (flow, handle) in flows.iter().zip(handles) {
        if let Some(w) = &flow.weights {
            manifest.add_file(&format!("flow_weights.{}", flow.label), w)?;
        }
        let parts = Participants {
            flow: handle,
            comm,
            ego: Some(ego.clone()),
            adversary: adversary.clone(),
        };
        let logs = run_batch(&p.env, &cases, config.repeats, config.master_seed, &parts, p.workers, config.log_detail)
            .map_err(runtime)?;
        manifest.add_logs(&flow.label, &logs);
        write_run_logs(&p.out, &format!("logs-{}.jsonl.gz", flow.label), &logs, &mut manifest)?;
        let report = aggregate_metrics(&logs, MetricScope::EgoOnly, config.metrics.efficiency).map_err(runtime)?;
        rows.push((flow.label.clone(), report));
    }
    finish(&p.out, &rows, &mut manifest)
}

pub fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let logs = read_logs(&a.log).map_err(runtime)?;
    if logs.is_empty() {
        return Err(CliError::Runtime(format!("{} holds no episodes", a.log.display())));
    }
    let custom = match &a.scenario {
        Some(s) => Some(Arc::new(
            resolve_scenario(s).map_err(|e| CliError::Config(format!("--scenario: {e}")))?,
        )),
        None => None,
    };
    let dump_to_stdout = a.dump_step.is_some() && a.dump_out.is_none();
    let mut report_out: Box<dyn Write> = if dump_to_stdout {
        Box::new(std::io::stderr())
    } else {
        Box::new(std::io::stdout())
    };
    let mut dumps = Vec::new();
    let mut diverged = 0;
    for log in &logs {
        let scenario = custom
            .clone()
            .unwrap_or_else(|| Arc::new(ScenarioSpec::bundled(log.header.case.scenario)));
        let env = Environment::new(scenario, log.header.episode).map_err(runtime)?;
        let report = replay_log(&env, log, a.dump_step).map_err(runtime)?;
        let (case, repeat) = log.key();
        let verdict = match report.mismatches.first() {
            None => "exact".to_string(),
            Some(m) => {
                diverged += 1;
                format!(
                    "diverged ({} mismatches, first at step {} agent {}: {})",
                    report.mismatches.len(),
                    m.step,
                    m.id,
                    m.what
                )
            }
        };
        let _ = writeln!(report_out, "case {case} repeat {repeat}: {} steps, {verdict}", report.steps);
        match (a.dump_step, report.dump) {
            (Some(_), Some(world)) => dumps.push(serde_json::to_string(&world).map_err(runtime)?),
            (Some(t), None) => {
                let _ = writeln!(report_out, "case {case} repeat {repeat}: episode ended before step {t}, nothing dumped");
            }
            _ => {}
        }
    }
    if a.dump_step.is_some() {
        let text: String = dumps.iter().map(|d| format!("{d}\n")).collect();
        match &a.dump_out {
            Some(path) => write_text(path, &text)?,
            None => print!("{text}"),
        }
    }
    if diverged > 0 {
        return Err(CliError::Runtime(format!("{diverged} of {} episodes diverged on replay", logs.len())));
    }
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<(), CliError> {
    let la = read_logs(&a.a).map_err(runtime)?;
    let lb = read_logs(&a.b).map_err(runtime)?;
    let scope = match a.scope {
        ScopeArg::Flow => MetricScope::Flow,
        ScopeArg::Ego => MetricScope::EgoOnly,
    };
    let cmp = paired_comparison(&la, &lb, scope).map_err(runtime)?;
    println!("paired comparison over {} episodes (normal approximation, approximate)", cmp.pairs);
    println!("{:<12} {:>10} {:>10} {:>20}", "metric", "a", "b", "b - a");
    for m in &cmp.metrics {
        println!(
            "{:<12} {:>10.2} {:>10.2} {:>20}",
            m.name,
            m.mean_a,
            m.mean_b,
            format!("{:.2} ± {:.2}", m.mean_diff, m.ci95)
        );
    }
    Ok(())
}

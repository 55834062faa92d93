//! Batch metrics: terminal-status percentages, efficiency and normal
//! approximation confidence intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::TerminationStatus;
use crate::rollout::{AgentSummary, EpisodeLog};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no episodes to aggregate")]
    EmptyBatch,
    #[error("no agents in scope")]
    EmptyScope,
    #[error("no episodes could be paired")]
    NoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    /// Every agent of every episode.
    Flow,
    /// Only the ego agent.
    EgoOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencyMode {
    /// `100 * mean(speed / v_max)`.
    #[default]
    NormalizedSpeed,
    /// Mean speed in m/s.
    RawSpeed,
}

impl FromStr for EfficiencyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized_speed" => Ok(EfficiencyMode::NormalizedSpeed),
            "raw_speed" => Ok(EfficiencyMode::RawSpeed),
            _ => Err(format!("unknown efficiency mode '{s}' (expected normalized_speed or raw_speed)")),
        }
    }
}

/// Value with its 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: MetricScope,
    pub episode_count: usize,
    pub agent_count: usize,
    pub success_pct: Estimate,
    pub collision_pct: Estimate,
    pub off_road_pct: Estimate,
    pub off_route_pct: Estimate,
    pub wrong_lane_pct: Estimate,
    pub timeout_pct: Estimate,
    pub safety_pct: Estimate,
    pub efficiency_mode: EfficiencyMode,
    pub efficiency: Estimate,
    pub mean_speed: f64,
}

impl MetricsReport {
    /// Sum of the six terminal percentages (100 up to rounding).
    pub fn status_total(&self) -> f64 {
        self.success_pct.value
            + self.collision_pct.value
            + self.off_road_pct.value
            + self.off_route_pct.value
            + self.wrong_lane_pct.value
            + self.timeout_pct.value
    }

    pub const CSV_HEADER: &'static str = "label,episodes,agents,success,success_ci95,collision,collision_ci95,\
off_road,off_road_ci95,off_route,off_route_ci95,wrong_lane,wrong_lane_ci95,timeout,timeout_ci95,\
safety,safety_ci95,efficiency,efficiency_ci95,mean_speed";

    pub fn csv_row(&self, label: &str) -> String {
        let mut row = format!("{label},{},{}", self.episode_count, self.agent_count);
        for e in [
            self.success_pct,
            self.collision_pct,
            self.off_road_pct,
            self.off_route_pct,
            self.wrong_lane_pct,
            self.timeout_pct,
            self.safety_pct,
            self.efficiency,
        ] {
            write!(row, ",{},{}", e.value, e.ci95).unwrap();
        }
        write!(row, ",{}", self.mean_speed).unwrap();
        row
    }
}

fn status_index(s: TerminationStatus) -> Option<usize> {
    TerminationStatus::TERMINAL.iter().position(|&t| t == s)
}

struct EpisodeStats {
    counts: [usize; 6],
    agents: usize,
    ratio_sum: f64,
    speed_sum: f64,
    steps: u64,
}

fn episode_stats(log: &EpisodeLog, scope: MetricScope) -> EpisodeStats {
    let mut st = EpisodeStats {
        counts: [0; 6],
        agents: 0,
        ratio_sum: 0.0,
        speed_sum: 0.0,
        steps: 0,
    };
    let in_scope = |a: &&AgentSummary| scope == MetricScope::Flow || a.is_ego;
    for a in log.summary.iter().filter(in_scope) {
        st.agents += 1;
        if let Some(k) = status_index(a.status) {
            st.counts[k] += 1;
        }
        st.ratio_sum += a.speed_sum / a.v_max;
        st.speed_sum += a.speed_sum;
        st.steps += a.alive_steps as u64;
    }
    st
}

/// Mean and `1.96 * stderr`; a single sample has a zero interval.
fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Aggregate terminal statuses and speeds. Percentages pool every in-scope
/// agent; intervals use the spread of per-episode values.
pub fn aggregate_metrics(
    logs: &[EpisodeLog],
    scope: MetricScope,
    efficiency_mode: EfficiencyMode,
) -> Result<MetricsReport, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let stats: Vec<EpisodeStats> = logs.iter().map(|l| episode_stats(l, scope)).collect();
    let agents: usize = stats.iter().map(|s| s.agents).sum();
    if agents == 0 {
        return Err(MetricsError::EmptyScope);
    }
    let scored: Vec<&EpisodeStats> = stats.iter().filter(|s| s.agents > 0).collect();

    let pct = |k: usize| -> Estimate {
        let total: usize = stats.iter().map(|s| s.counts[k]).sum();
        let per_episode: Vec<f64> = scored
            .iter()
            .map(|s| 100.0 * s.counts[k] as f64 / s.agents as f64)
            .collect();
        Estimate {
            value: 100.0 * total as f64 / agents as f64,
            ci95: mean_ci(&per_episode).1,
        }
    };
    let [success, collision, off_road, off_route, wrong_lane, timeout] = std::array::from_fn(pct);

    let failures: usize = stats.iter().map(|s| s.counts[1..5].iter().sum::<usize>()).sum();
    let safety_episodes: Vec<f64> = scored
        .iter()
        .map(|s| 100.0 - 100.0 * s.counts[1..5].iter().sum::<usize>() as f64 / s.agents as f64)
        .collect();
    let safety = Estimate {
        value: 100.0 - 100.0 * failures as f64 / agents as f64,
        ci95: mean_ci(&safety_episodes).1,
    };

    let steps: u64 = stats.iter().map(|s| s.steps).sum();
    let ratio: f64 = stats.iter().map(|s| s.ratio_sum).sum();
    let speed: f64 = stats.iter().map(|s| s.speed_sum).sum();
    let per_step = |x: f64, n: u64| if n == 0 { 0.0 } else { x / n as f64 };
    let mean_speed = per_step(speed, steps);
    let (eff_value, eff_episodes): (f64, Vec<f64>) = match efficiency_mode {
        EfficiencyMode::NormalizedSpeed => (
            100.0 * per_step(ratio, steps),
            scored.iter().map(|s| 100.0 * per_step(s.ratio_sum, s.steps)).collect(),
        ),
        EfficiencyMode::RawSpeed => (
            mean_speed,
            scored.iter().map(|s| per_step(s.speed_sum, s.steps)).collect(),
        ),
    };
    Ok(MetricsReport {
        scope,
        episode_count: logs.len(),
        agent_count: agents,
        success_pct: success,
        collision_pct: collision,
        off_road_pct: off_road,
        off_route_pct: off_route,
        wrong_lane_pct: wrong_lane,
        timeout_pct: timeout,
        safety_pct: safety,
        efficiency_mode,
        efficiency: Estimate {
            value: eff_value,
            ci95: mean_ci(&eff_episodes).1,
        },
        mean_speed,
    })
}

/// Human-readable table: Success, Collision, Off Road, Off Route, Wrong Lane,
/// Efficiency, one row per labelled report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let headers = ["", "Success", "Collision", "Off Road", "Off Route", "Wrong Lane", "Efficiency"];
    let cell = |e: &Estimate| format!("{:.1} ± {:.1}", e.value, e.ci95);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            vec![
                label.clone(),
                cell(&r.success_pct),
                cell(&r.collision_pct),
                cell(&r.off_road_pct),
                cell(&r.off_route_pct),
                cell(&r.wrong_lane_pct),
                cell(&r.efficiency),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].chars().count())
                .chain([headers[c].len()])
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(headers.to_vec());
    for r in &body {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedMetric {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Mean of per-episode differences `b - a`.
    pub mean_diff: f64,
    pub ci95: f64,
}

/// Approximate paired comparison of two runs over the same episodes
/// (matched by case id and repeat), normal approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub pairs: usize,
    pub metrics: Vec<PairedMetric>,
}

pub fn paired_comparison(
    a: &[EpisodeLog],
    b: &[EpisodeLog],
    scope: MetricScope,
) -> Result<PairedComparison, MetricsError> {
    let index: BTreeMap<(u32, u32), &EpisodeLog> = b.iter().map(|l| (l.key(), l)).collect();
    let pairs: Vec<(EpisodeStats, EpisodeStats)> = a
        .iter()
        .filter_map(|la| index.get(&la.key()).map(|lb| (episode_stats(la, scope), episode_stats(lb, scope))))
        .filter(|(x, y)| x.agents > 0 && y.agents > 0)
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let per = |s: &EpisodeStats, k: usize| 100.0 * s.counts[k] as f64 / s.agents as f64;
    let eff = |s: &EpisodeStats| if s.steps == 0 { 0.0 } else { 100.0 * s.ratio_sum / s.steps as f64 };
    let mut metrics = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(&EpisodeStats) -> f64| {
        let xa: Vec<f64> = pairs.iter().map(|(x, _)| f(x)).collect();
        let xb: Vec<f64> = pairs.iter().map(|(_, y)| f(y)).collect();
        let diffs: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| q - p).collect();
        let (mean_diff, ci95) = mean_ci(&diffs);
        metrics.push(PairedMetric {
            name: name.to_string(),
            mean_a: mean_ci(&xa).0,
            mean_b: mean_ci(&xb).0,
            mean_diff,
            ci95,
        });
    };
    for (k, name) in ["success", "collision", "off_road", "off_route", "wrong_lane", "timeout"]
        .iter()
        .enumerate()
    {
        push(name, &|s| per(s, k));
    }
    push("efficiency", &eff);
    Ok(PairedComparison {
        pairs: pairs.len(),
        metrics,
    })
}

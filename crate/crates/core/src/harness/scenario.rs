use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::episode::{run_episode, EpisodeConfig, EpisodeResult, SceneKind};
use super::metrics::{aggregate, aggregate_outcomes, outcome_at_cutoff, MetricsRow};
use crate::world::{MotionKind, MotionPattern, WorkspaceName};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    SpeedSweep,
    TimeLimits,
    Workspace,
    TrackingLoss,
    Ablation,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::SpeedSweep,
        ScenarioName::TimeLimits,
        ScenarioName::Workspace,
        ScenarioName::TrackingLoss,
        ScenarioName::Ablation,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ScenarioName::SpeedSweep => "speed_sweep",
            ScenarioName::TimeLimits => "time_limits",
            ScenarioName::Workspace => "workspace",
            ScenarioName::TrackingLoss => "tracking_loss",
            ScenarioName::Ablation => "ablation",
        }
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.label() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

pub const SPEEDS_CM_S: [u32; 5] = [3, 6, 9, 12, 15];
pub const CUTOFFS_S: [u32; 7] = [35, 30, 25, 20, 15, 10, 5];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    pub sim: SimConfig,
    pub ekf_enabled: bool,
    pub stage: u8,
    pub scene: SceneKind,
    pub record_trace: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            ekf_enabled: true,
            stage: 5,
            scene: SceneKind::Regular,
            record_trace: false,
        }
    }
}

impl ScenarioOptions {
    pub fn variant(&self) -> &'static str {
        if self.ekf_enabled {
            "ekf"
        } else {
            "no_ekf"
        }
    }
}

/// One planned episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub group: String,
    pub workspace: WorkspaceName,
    pub pattern: MotionPattern,
}

/// 7 in 10 linear-regular, the rest random, by index.
fn mixed(i: usize) -> MotionPattern {
    if i % 10 < 7 {
        MotionPattern::linear_regular()
    } else {
        MotionPattern::random()
    }
}

fn group(label: String, n: usize, ws: WorkspaceName, f: impl Fn(usize) -> MotionPattern) -> Vec<EpisodeSpec> {
    (0..n)
        .map(|i| EpisodeSpec {
            group: label.clone(),
            workspace: ws,
            pattern: f(i),
        })
        .collect()
}

/// Episode list in seeding order. `n` counts episodes per group, except
/// for tracking loss where `n` is the disruptive count and the linear and
/// random groups are scaled 7:3:5 against it.
pub fn plan_scenario(name: ScenarioName, n: usize) -> Vec<EpisodeSpec> {
    let earl = WorkspaceName::Earl;
    match name {
        ScenarioName::SpeedSweep => {
            let mut v: Vec<EpisodeSpec> = SPEEDS_CM_S
                .iter()
                .flat_map(|&s| {
                    group(format!("speed_sweep/{s}cm_s"), n, earl, move |_| {
                        MotionPattern::linear_at(s as f64 / 100.0)
                    })
                })
                .collect();
            v.extend(group("speed_sweep/uniform".into(), n, earl, |_| MotionPattern {
                kind: MotionKind::LinearFast,
                speed_range: (0.0, 0.15),
                ..MotionPattern::linear_fast()
            }));
            v
        }
        ScenarioName::TimeLimits => group("time_limits".into(), n, earl, mixed),
        ScenarioName::Workspace => [WorkspaceName::A, WorkspaceName::B, WorkspaceName::Earl, WorkspaceName::Karl]
            .iter()
            .flat_map(|&ws| group(format!("workspace/{}", ws.label()), n, ws, mixed))
            .collect(),
        ScenarioName::TrackingLoss => {
            let linear = (n * 7).div_ceil(5);
            let random = (n * 3).div_ceil(5);
            let mut v = group("tracking_loss/linear".into(), linear, earl, |_| MotionPattern::linear_regular());
            v.extend(group("tracking_loss/random".into(), random, earl, |_| MotionPattern::random()));
            v.extend(group("tracking_loss/disruptive".into(), n, earl, |_| MotionPattern::disruptive()));
            v
        }
        ScenarioName::Ablation => group("ablation".into(), n, earl, |i| {
            if i % 10 < 7 {
                MotionPattern {
                    speed_range: (0.0, 0.15),
                    disrupt_prob: 0.3,
                    ..MotionPattern::linear_fast()
                }
            } else {
                MotionPattern::random()
            }
        }),
    }
}

fn episode_config(spec: &EpisodeSpec, opts: &ScenarioOptions) -> EpisodeConfig {
    EpisodeConfig {
        sim: opts.sim.clone(),
        workspace: spec.workspace,
        pattern: spec.pattern,
        ekf_enabled: opts.ekf_enabled,
        stage: opts.stage,
        scene: opts.scene,
        record_trace: opts.record_trace,
    }
}

/// Runs every planned episode with seed `master_seed + index`. Results come
/// back in plan order whatever the worker count.
pub fn run_plan(plan: &[EpisodeSpec], master_seed: u64, opts: &ScenarioOptions) -> Result<Vec<EpisodeResult>> {
    let run = |(i, spec): (usize, &EpisodeSpec)| {
        run_episode(&episode_config(spec, opts), master_seed.wrapping_add(i as u64))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        plan.par_iter().enumerate().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        plan.iter().enumerate().map(run).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub rows: Vec<MetricsRow>,
    pub plan: Vec<EpisodeSpec>,
    pub results: Vec<EpisodeResult>,
}

fn rows_for(name: ScenarioName, plan: &[EpisodeSpec], results: &[EpisodeResult], variant: &str) -> Vec<MetricsRow> {
    if name == ScenarioName::TimeLimits {
        return CUTOFFS_S
            .iter()
            .map(|&c| {
                aggregate_outcomes(
                    &format!("time_limits/{c}s"),
                    variant,
                    results.iter().map(|r| outcome_at_cutoff(r, c as f64)),
                )
            })
            .collect();
    }
    let mut groups: Vec<&str> = Vec::new();
    for s in plan {
        if !groups.contains(&s.group.as_str()) {
            groups.push(&s.group);
        }
    }
    let mut rows: Vec<MetricsRow> = groups
        .iter()
        .map(|g| {
            let members: Vec<EpisodeResult> = plan
                .iter()
                .zip(results)
                .filter(|(s, _)| s.group == *g)
                .map(|(_, r)| r.clone())
                .collect();
            aggregate(g, variant, &members)
        })
        .collect();
    if groups.len() > 1 && name == ScenarioName::TrackingLoss {
        rows.push(aggregate(&format!("{}/all", name.label()), variant, results));
    }
    rows
}

pub fn run_scenario(name: ScenarioName, n_episodes: usize, master_seed: u64, opts: &ScenarioOptions) -> Result<ScenarioRun> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("episode count must be at least 1".into()));
    }
    opts.sim.validate()?;
    let plan = plan_scenario(name, n_episodes);
    let results = run_plan(&plan, master_seed, opts)?;
    let rows = rows_for(name, &plan, &results, opts.variant());
    Ok(ScenarioRun { rows, plan, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        for n in ScenarioName::ALL {
            assert_eq!(n.label().parse::<ScenarioName>().unwrap(), n);
        }
        assert!(matches!("nope".parse::<ScenarioName>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn plan_sizes() {
        assert_eq!(plan_scenario(ScenarioName::SpeedSweep, 4).len(), 24);
        assert_eq!(plan_scenario(ScenarioName::Workspace, 3).len(), 12);
        let tl = plan_scenario(ScenarioName::TrackingLoss, 500);
        assert_eq!(tl.iter().filter(|s| s.group.ends_with("linear")).count(), 700);
        assert_eq!(tl.iter().filter(|s| s.group.ends_with("random")).count(), 300);
        assert_eq!(tl.iter().filter(|s| s.group.ends_with("disruptive")).count(), 500);
        let mix = plan_scenario(ScenarioName::TimeLimits, 100);
        assert_eq!(mix.iter().filter(|s| s.pattern.kind == MotionKind::Random).count(), 30);
    }

    #[test]
    fn zero_episodes_rejected() {
        assert!(run_scenario(ScenarioName::Ablation, 0, 0, &ScenarioOptions::default()).is_err());
    }

    #[test]
    fn cutoff_rows_are_monotone() {
        let run = run_scenario(ScenarioName::TimeLimits, 20, 3, &ScenarioOptions::default()).unwrap();
        assert_eq!(run.rows.len(), CUTOFFS_S.len());
        assert!(run.rows.windows(2).all(|w| w[1].success <= w[0].success));
        for r in &run.rows {
            assert_eq!(r.success + r.total_failure(), 10_000);
        }
    }
}

//! Run-to-failure maintenance MDP.
//!
//! An episode replays one recorded unit from cycle 1. Holding advances the
//! cycle; replacing ends the episode at cost `c_r / T_j`; reaching the failure
//! cycle `T_j` ends it at cost `(c_r + c_f) / T_j` whatever the action.
//! Observations are not produced here: a feature pipeline reads the unit and
//! cycle from [`EnvState`].

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RunToFailureDataset, UnitTrajectory};
use crate::error::{Error, Result};
use crate::stats::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Hold,
    Replace,
    Repair,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Hold, Action::Replace, Action::Repair];

    /// Output index in a Q-network.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("action index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Hold => "hold",
            Action::Replace => "replace",
            Action::Repair => "repair",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Cycles the unit is rolled back by.
    pub depth: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub c_r: f64,
    pub c_f: f64,
    /// `Some` enables the repair action.
    #[serde(default)]
    pub repair: Option<RepairConfig>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            c_r: 100.0,
            c_f: 1000.0,
            repair: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_r > 0.0) || !(self.c_f >= 0.0) || !self.c_r.is_finite() || !self.c_f.is_finite()
        {
            return Err(Error::invalid(format!(
                "costs must satisfy c_r > 0 and c_f >= 0 (got c_r = {}, c_f = {})",
                self.c_r, self.c_f
            )));
        }
        if let Some(r) = self.repair {
            if r.depth == 0 || !(r.cost >= 0.0) {
                return Err(Error::invalid(
                    "repair needs depth >= 1 and a nonnegative cost",
                ));
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        if self.repair.is_some() {
            3
        } else {
            2
        }
    }

    pub fn actions(&self) -> &'static [Action] {
        &Action::ALL[..self.n_actions()]
    }
}

/// Result of applying one action at cycle `t` of a unit with failure cycle `t_fail`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub next_t: usize,
    pub done: bool,
    pub failed: bool,
}

/// The reward and cycle dynamics of one decision.
pub fn transition(
    config: &EnvConfig,
    t: usize,
    t_fail: usize,
    action: Action,
) -> Result<Transition> {
    if t == 0 || t > t_fail {
        return Err(Error::invalid(format!("cycle {t} outside [1, {t_fail}]")));
    }
    let big_t = t_fail as f64;
    if t == t_fail {
        return Ok(Transition {
            reward: -(config.c_r + config.c_f) / big_t,
            next_t: t,
            done: true,
            failed: true,
        });
    }
    Ok(match action {
        Action::Hold => Transition {
            reward: 0.0,
            next_t: t + 1,
            done: false,
            failed: false,
        },
        Action::Replace => Transition {
            reward: -config.c_r / big_t,
            next_t: t,
            done: true,
            failed: false,
        },
        Action::Repair => {
            let r = config
                .repair
                .ok_or_else(|| Error::invalid("repair action is disabled"))?;
            Transition {
                reward: -r.cost / big_t,
                next_t: t.saturating_sub(r.depth).max(1),
                done: false,
                failed: false,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    /// Index into the dataset's unit list.
    pub unit_index: usize,
    pub unit_id: u32,
    /// Current cycle, `1..=t_fail`.
    pub t: usize,
    pub t_fail: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct MaintenanceEnv<'a> {
    data: &'a RunToFailureDataset,
    config: EnvConfig,
    state: Option<EnvState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub failed: bool,
}

impl<'a> MaintenanceEnv<'a> {
    pub fn new(data: &'a RunToFailureDataset, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if data.units.is_empty() {
            return Err(Error::invalid("environment pool is empty"));
        }
        Ok(MaintenanceEnv {
            data,
            config,
            state: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn data(&self) -> &'a RunToFailureDataset {
        self.data
    }

    pub fn state(&self) -> Option<EnvState> {
        self.state
    }

    pub fn unit(&self) -> Result<&'a UnitTrajectory> {
        let s = self
            .state
            .ok_or_else(|| Error::invalid("environment has not been reset"))?;
        Ok(&self.data.units[s.unit_index])
    }

    /// Draws a unit uniformly from the pool and starts at cycle 1.
    pub fn reset(&mut self, rng: &mut SeededRng) -> EnvState {
        let i = rng.gen_range(0..self.data.units.len());
        self.reset_to(i).expect("index drawn from the pool")
    }

    pub fn reset_to(&mut self, unit_index: usize) -> Result<EnvState> {
        let unit =
            self.data.units.get(unit_index).ok_or_else(|| {
                Error::invalid(format!("unit index {unit_index} outside the pool"))
            })?;
        if unit.is_empty() {
            return Err(Error::invalid(format!(
                "unit {} has no cycles",
                unit.unit_id
            )));
        }
        let s = EnvState {
            unit_index,
            unit_id: unit.unit_id,
            t: 1,
            t_fail: unit.len(),
            done: false,
        };
        self.state = Some(s);
        Ok(s)
    }

    /// Sensor row of the current cycle, straight from the dataset.
    pub fn observation(&self) -> Result<&'a [f64]> {
        let s = self
            .state
            .ok_or_else(|| Error::invalid("environment has not been reset"))?;
        Ok(&self.data.units[s.unit_index].sensors[s.t - 1])
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let s = self
            .state
            .ok_or_else(|| Error::invalid("environment has not been reset"))?;
        if s.done {
            return Err(Error::invalid("step called after the episode ended"));
        }
        let tr = transition(&self.config, s.t, s.t_fail, action)?;
        let next = EnvState {
            t: tr.next_t,
            done: tr.done,
            ..s
        };
        self.state = Some(next);
        Ok(StepOutcome {
            state: next,
            reward: tr.reward,
            done: tr.done,
            failed: tr.failed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub unit: u32,
    pub t: usize,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub unit_id: u32,
    pub t_fail: usize,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub failed: bool,
    pub replace_cycle: Option<usize>,
    /// `T_j - t_replace`, only for episodes ended by replacement.
    pub remaining_cycles: Option<usize>,
    pub total_cost: f64,
}

pub fn episode_stats(trace: &EpisodeTrace) -> Result<EpisodeStats> {
    let last = trace.records.last().filter(|r| r.done).ok_or_else(|| {
        Error::invalid(format!(
            "episode trace of unit {} is incomplete",
            trace.unit_id
        ))
    })?;
    let failed = last.t == trace.t_fail;
    let total_cost = -trace.records.iter().map(|r| r.reward).sum::<f64>();
    Ok(EpisodeStats {
        failed,
        replace_cycle: (!failed).then_some(last.t),
        remaining_cycles: (!failed).then(|| trace.t_fail - last.t),
        total_cost,
    })
}

/// Runs one episode on `unit_index` with `policy(state) -> action`.
pub fn run_episode(
    env: &mut MaintenanceEnv<'_>,
    unit_index: usize,
    mut policy: impl FnMut(&EnvState) -> Result<Action>,
) -> Result<EpisodeTrace> {
    let mut s = env.reset_to(unit_index)?;
    let mut records = Vec::with_capacity(s.t_fail);
    let guard = 20 * s.t_fail + 20;
    loop {
        let a = policy(&s).map_err(|e| Error::Policy {
            unit: s.unit_id,
            source: Box::new(e),
        })?;
        let out = env.step(a)?;
        records.push(TraceRecord {
            unit: s.unit_id,
            t: s.t,
            action: a,
            reward: out.reward,
            done: out.done,
        });
        if out.done {
            break;
        }
        if records.len() > guard {
            return Err(Error::Policy {
                unit: s.unit_id,
                source: Box::new(Error::invalid("episode did not terminate")),
            });
        }
        s = out.state;
    }
    Ok(EpisodeTrace {
        unit_id: s.unit_id,
        t_fail: s.t_fail,
        records,
    })
}

pub fn write_trace_csv(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "t", "action", "reward", "done"])?;
    for tr in traces {
        for r in &tr.records {
            w.write_record([
                r.unit.to_string(),
                r.t.to_string(),
                r.action.name().to_string(),
                r.reward.to_string(),
                r.done.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn pool(lengths: &[usize]) -> RunToFailureDataset {
        RunToFailureDataset {
            units: lengths
                .iter()
                .enumerate()
                .map(|(i, &n)| UnitTrajectory {
                    unit_id: i as u32 + 1,
                    sensors: (0..n).map(|t| vec![t as f64]).collect(),
                    op_settings: vec![vec![]; n],
                    input_symbols: None,
                })
                .collect(),
            sensor_names: vec!["s_1".into()],
            op_setting_names: vec![],
        }
    }

    #[test]
    fn reward_cases() {
        let c = EnvConfig::default();
        let r = transition(&c, 150, 200, Action::Replace).unwrap();
        assert_eq!((r.reward, r.done, r.failed), (-0.5, true, false));
        let r = transition(&c, 200, 200, Action::Hold).unwrap();
        assert_eq!((r.reward, r.done, r.failed), (-5.5, true, true));
        let r = transition(&c, 200, 200, Action::Replace).unwrap();
        assert_eq!((r.reward, r.done, r.failed), (-5.5, true, true));
        let r = transition(&c, 199, 200, Action::Hold).unwrap();
        assert_eq!((r.reward, r.next_t, r.done), (0.0, 200, false));
        assert!(transition(&c, 10, 200, Action::Repair).is_err());
    }

    #[test]
    fn repair_rolls_back() {
        let c = EnvConfig {
            repair: Some(RepairConfig {
                depth: 5,
                cost: 20.0,
            }),
            ..Default::default()
        };
        let r = transition(&c, 3, 100, Action::Repair).unwrap();
        assert_eq!((r.next_t, r.done), (1, false));
        assert!((r.reward + 0.2).abs() < 1e-15);
        assert_eq!(c.n_actions(), 3);
    }

    #[test]
    fn step_after_done_fails() {
        let data = pool(&[3]);
        let mut env = MaintenanceEnv::new(&data, EnvConfig::default()).unwrap();
        let mut rng = stats::seeded(0);
        let s = env.reset(&mut rng);
        assert_eq!((s.unit_index, s.t), (0, 1));
        env.step(Action::Replace).unwrap();
        assert!(env.step(Action::Hold).is_err());
    }

    #[test]
    fn reset_is_uniform() {
        let data = pool(&[5, 6, 7, 8]);
        let mut env = MaintenanceEnv::new(&data, EnvConfig::default()).unwrap();
        let mut rng = stats::seeded(11);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[env.reset(&mut rng).unit_index] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn episode_stats_examples() {
        let data = pool(&[200]);
        let mut env = MaintenanceEnv::new(&data, EnvConfig::default()).unwrap();
        let tr = run_episode(&mut env, 0, |s| {
            Ok(if s.t == 150 {
                Action::Replace
            } else {
                Action::Hold
            })
        })
        .unwrap();
        let st = episode_stats(&tr).unwrap();
        assert_eq!(st.remaining_cycles, Some(50));
        assert!((st.total_cost - 0.5).abs() < 1e-12);

        let tr = run_episode(&mut env, 0, |s| {
            Ok(if s.t == 199 {
                Action::Replace
            } else {
                Action::Hold
            })
        })
        .unwrap();
        assert_eq!(episode_stats(&tr).unwrap().remaining_cycles, Some(1));

        let tr = run_episode(&mut env, 0, |_| Ok(Action::Hold)).unwrap();
        let st = episode_stats(&tr).unwrap();
        assert!(st.failed);
        assert_eq!(st.remaining_cycles, None);
        assert!((st.total_cost - 5.5).abs() < 1e-12);

        let mut partial = tr.clone();
        partial.records.pop();
        assert!(episode_stats(&partial).is_err());
    }
}

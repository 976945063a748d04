//! Monte-Carlo remaining-useful-life estimation.
//!
//! From the last decoded state of an observed prefix, independent rollouts
//! sample the hidden chain forward until it enters a failure state; the RUL
//! is the mean number of transitions taken.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::UnitTrajectory;
use crate::error::{Error, Result};
use crate::iohmm::{sample_index, viterbi, IohmmParams, OnlineDecoder};
use crate::stats;

/// How the unobserved future operating conditions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPolicy {
    /// Repeat the last observed condition.
    HoldLast,
    /// Resample conditions from the prefix's empirical distribution.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulConfig {
    pub n_rollouts: usize,
    pub horizon_cap: usize,
    pub input_policy: InputPolicy,
    pub seed: u64,
}

impl Default for RulConfig {
    fn default() -> Self {
        RulConfig {
            n_rollouts: 100,
            horizon_cap: 500,
            input_policy: InputPolicy::HoldLast,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulEstimate {
    /// Length of the observed prefix.
    pub cycle: usize,
    pub mean_rul: f64,
    pub std_rul: f64,
    pub n_rollouts: usize,
    /// Fraction of rollouts stopped by the horizon cap (counted at the cap).
    pub truncated_fraction: f64,
}

impl RulEstimate {
    pub fn std_error(&self) -> f64 {
        self.std_rul / (self.n_rollouts as f64).sqrt()
    }
}

/// Rollout statistics from a known starting state.
pub fn rul_from_state(
    params: &IohmmParams,
    start: usize,
    prefix_u: &[usize],
    failure_states: &BTreeSet<usize>,
    config: &RulConfig,
) -> Result<(f64, f64, f64)> {
    if failure_states.is_empty() {
        return Err(Error::invalid(
            "RUL estimation needs at least one failure state",
        ));
    }
    if config.n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts must be positive"));
    }
    if prefix_u.is_empty() {
        return Err(Error::invalid("empty input prefix"));
    }
    params.check_state(start)?;
    if failure_states.contains(&start) {
        return Ok((0.0, 0.0, 0.0));
    }
    let last_u = *prefix_u.last().unwrap();
    params.check_input(last_u)?;
    let lengths: Vec<(usize, bool)> = (0..config.n_rollouts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stats::seeded_stream(config.seed, r as u64);
            let mut s = start;
            let mut steps = 0;
            while steps < config.horizon_cap {
                let u = match config.input_policy {
                    InputPolicy::HoldLast => last_u,
                    InputPolicy::Empirical => prefix_u[rng.gen_range(0..prefix_u.len())],
                };
                s = sample_index(&params.transitions[u][s], &mut rng);
                steps += 1;
                if failure_states.contains(&s) {
                    return (steps, false);
                }
            }
            (steps, true)
        })
        .collect();
    let xs: Vec<f64> = lengths.iter().map(|&(l, _)| l as f64).collect();
    let truncated = lengths.iter().filter(|&&(_, t)| t).count() as f64 / xs.len() as f64;
    Ok((stats::mean(&xs), stats::std_dev(&xs), truncated))
}

/// RUL after observing `(prefix_u, prefix_y)`, starting from the final state
/// of the prefix's Viterbi path.
pub fn estimate_rul(
    params: &IohmmParams,
    prefix_u: &[usize],
    prefix_y: &[Vec<f64>],
    failure_states: &BTreeSet<usize>,
    config: &RulConfig,
) -> Result<RulEstimate> {
    if prefix_y.is_empty() {
        return Err(Error::invalid("RUL estimation needs a nonempty prefix"));
    }
    if failure_states.is_empty() {
        return Err(Error::invalid(
            "RUL estimation needs at least one failure state",
        ));
    }
    let path = viterbi(params, prefix_u, prefix_y)?;
    let start = *path.states.last().unwrap();
    let (mean_rul, std_rul, truncated_fraction) =
        rul_from_state(params, start, prefix_u, failure_states, config)?;
    Ok(RulEstimate {
        cycle: prefix_y.len(),
        mean_rul,
        std_rul,
        n_rollouts: config.n_rollouts,
        truncated_fraction,
    })
}

/// Estimates at cycles `1, 1 + stride, ...` up to `T_j`. The Viterbi end state
/// of each prefix is tracked incrementally.
pub fn rul_trend(
    params: &IohmmParams,
    unit: &UnitTrajectory,
    stride: usize,
    failure_states: &BTreeSet<usize>,
    config: &RulConfig,
) -> Result<Vec<RulEstimate>> {
    if stride < 1 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if failure_states.is_empty() {
        return Err(Error::invalid(
            "RUL estimation needs at least one failure state",
        ));
    }
    let inputs = params.unit_inputs(unit)?;
    params.check_sequence(&inputs, &unit.sensors)?;
    let mut dec = OnlineDecoder::new(params);
    let mut out = Vec::new();
    for t in 0..unit.len() {
        let st = dec.push(inputs[t], &unit.sensors[t])?;
        if t % stride == 0 {
            let (mean_rul, std_rul, truncated_fraction) = rul_from_state(
                params,
                st.viterbi_state,
                &inputs[..=t],
                failure_states,
                config,
            )?;
            out.push(RulEstimate {
                cycle: t + 1,
                mean_rul,
                std_rul,
                n_rollouts: config.n_rollouts,
                truncated_fraction,
            });
        }
    }
    Ok(out)
}

pub fn write_rul_csv(path: &Path, rows: &[(u32, RulEstimate)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "cycle", "mean_rul", "std_rul", "truncated_fraction"])?;
    for (unit, e) in rows {
        w.write_record([
            unit.to_string(),
            e.cycle.to_string(),
            e.mean_rul.to_string(),
            e.std_rul.to_string(),
            e.truncated_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

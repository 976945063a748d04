//! State-gated agent.
//!
//! The Q-network is consulted only while the online-decoded IOHMM state lies
//! in the specialized set `X_s`; elsewhere the default action is emitted. A
//! safety net escalates to replacement whenever the filtered posterior mass
//! on failure states exceeds a threshold.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{act, greedy, MaintenancePolicy, PreparedUnit};
use crate::approximator::NetworkParams;
use crate::decoding::{posterior_failure_mass, StateAnnotation};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::iohmm::{IohmmParams, OnlineDecoder, OnlineState};
use crate::stats::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub specialized: BTreeSet<usize>,
    pub failure: BTreeSet<usize>,
    pub p_fail_threshold: f64,
    pub default_action: Action,
    pub safety_net: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateInfo {
    pub in_xs: bool,
    pub viterbi_state: usize,
    pub p_fail: f64,
    /// What the agent proposed, when it was consulted.
    pub agent_action: Option<Action>,
}

impl Gate {
    pub fn from_annotation(ann: &StateAnnotation) -> Self {
        Gate {
            specialized: ann.specialized_states.clone(),
            failure: ann.failure_states.clone(),
            p_fail_threshold: ann.p_fail_threshold,
            default_action: Action::Hold,
            safety_net: true,
        }
    }

    /// Applies the gate to one decoded step; `agent` is only called inside `X_s`.
    pub fn apply(
        &self,
        decoded: &OnlineState,
        agent: impl FnOnce() -> Result<Action>,
    ) -> Result<(Action, GateInfo)> {
        let in_xs = self.specialized.contains(&decoded.viterbi_state);
        let p_fail = posterior_failure_mass(&decoded.filtered, &self.failure);
        let agent_action = if in_xs { Some(agent()?) } else { None };
        let mut action = agent_action.unwrap_or(self.default_action);
        if self.safety_net && p_fail > self.p_fail_threshold {
            action = Action::Replace;
        }
        Ok((
            action,
            GateInfo {
                in_xs,
                viterbi_state: decoded.viterbi_state,
                p_fail,
                agent_action,
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct SrlaPolicy {
    pub model: IohmmParams,
    pub gate: Gate,
    pub q: NetworkParams,
    pub actions: Vec<Action>,
}

impl SrlaPolicy {
    pub fn new(
        model: IohmmParams,
        gate: Gate,
        q: NetworkParams,
        actions: &[Action],
    ) -> Result<Self> {
        if q.n_out() < actions.len() {
            return Err(Error::dims("Q-network has fewer outputs than actions"));
        }
        if let Some(&s) = gate
            .specialized
            .iter()
            .chain(&gate.failure)
            .find(|&&s| s >= model.n_states)
        {
            return Err(Error::invalid(format!(
                "gate references state {s} outside the model"
            )));
        }
        if !gate.failure.is_subset(&gate.specialized) {
            return Err(Error::InvariantViolation(
                "failure states must lie in the specialized set".into(),
            ));
        }
        Ok(SrlaPolicy {
            model,
            gate,
            q,
            actions: actions.to_vec(),
        })
    }

    /// Gated epsilon-greedy decision for an already decoded step.
    pub fn srla_act(
        &self,
        decoded: &OnlineState,
        features: &[f64],
        epsilon: f64,
        rng: &mut SeededRng,
    ) -> Result<(Action, GateInfo)> {
        self.gate.apply(decoded, || {
            act(&self.q, features, &self.actions, epsilon, rng)
        })
    }

    /// Streaming use: decodes each new cycle incrementally.
    pub fn session(&self) -> SrlaSession<'_> {
        SrlaSession {
            policy: self,
            decoder: OnlineDecoder::new(&self.model),
        }
    }
}

impl MaintenancePolicy for SrlaPolicy {
    fn name(&self) -> String {
        "srla".into()
    }

    fn decide(&self, unit: &PreparedUnit, t: usize) -> Result<(Action, Option<GateInfo>)> {
        let decoded = unit.decoded_at(t)?;
        let x = unit.features_at(t)?;
        let (a, info) = self
            .gate
            .apply(decoded, || greedy(&self.q, x, &self.actions))?;
        Ok((a, Some(info)))
    }
}

/// Running decoder over one episode.
pub struct SrlaSession<'a> {
    policy: &'a SrlaPolicy,
    decoder: OnlineDecoder<'a>,
}

impl SrlaSession<'_> {
    /// Feeds cycle `(u_t, y_t)`; `y_t` is both the decoder observation and
    /// the agent's feature vector.
    pub fn step(
        &mut self,
        u: usize,
        y: &[f64],
        epsilon: f64,
        rng: &mut SeededRng,
    ) -> Result<(Action, GateInfo)> {
        let decoded = self.decoder.push(u, y)?;
        self.policy.srla_act(&decoded, y, epsilon, rng)
    }

    pub fn reset(&mut self) {
        self.decoder.reset();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub unit: u32,
    pub t: usize,
    pub viterbi_state: usize,
    pub in_xs: bool,
    pub p_fail: f64,
    pub action: Action,
    pub agent_action: Option<Action>,
}

impl GateRecord {
    pub fn new(unit: u32, t: usize, action: Action, info: &GateInfo) -> Self {
        GateRecord {
            unit,
            t,
            viterbi_state: info.viterbi_state,
            in_xs: info.in_xs,
            p_fail: info.p_fail,
            action,
            agent_action: info.agent_action,
        }
    }
}

/// Replays a gate log and returns one message per record that breaks the
/// gating or safety-net rules.
pub fn audit_gate_log(records: &[GateRecord], gate: &Gate) -> Vec<String> {
    let mut bad = Vec::new();
    for r in records {
        let here = format!("unit {} cycle {}", r.unit, r.t);
        if r.in_xs != gate.specialized.contains(&r.viterbi_state) {
            bad.push(format!(
                "{here}: in_xs flag disagrees with state {}",
                r.viterbi_state
            ));
        }
        let escalate = gate.safety_net && r.p_fail > gate.p_fail_threshold;
        if escalate && r.action != Action::Replace {
            bad.push(format!(
                "{here}: p_fail {} above threshold but action {:?}",
                r.p_fail, r.action
            ));
        }
        if !escalate {
            if !r.in_xs && r.action != gate.default_action {
                bad.push(format!("{here}: outside X_s but action {:?}", r.action));
            }
            if r.in_xs && r.agent_action != Some(r.action) {
                bad.push(format!(
                    "{here}: inside X_s but action differs from the agent"
                ));
            }
        }
        if r.agent_action == Some(Action::Replace) && r.action != Action::Replace {
            bad.push(format!("{here}: agent replacement was suppressed"));
        }
        if !r.in_xs && r.agent_action.is_some() {
            bad.push(format!("{here}: agent consulted outside X_s"));
        }
    }
    bad
}

pub fn write_gate_csv(path: &Path, records: &[GateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "unit",
        "t",
        "viterbi_state",
        "in_Xs",
        "p_fail",
        "action",
        "agent_action",
    ])?;
    for r in records {
        w.write_record([
            r.unit.to_string(),
            r.t.to_string(),
            r.viterbi_state.to_string(),
            r.in_xs.to_string(),
            r.p_fail.to_string(),
            r.action.name().to_string(),
            r.agent_action.map(|a| a.name()).unwrap_or("").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate() -> Gate {
        Gate {
            specialized: [2, 3].into(),
            failure: [3].into(),
            p_fail_threshold: 0.5,
            default_action: Action::Hold,
            safety_net: true,
        }
    }

    fn decoded(state: usize, p3: f64) -> OnlineState {
        let mut f = vec![0.0; 4];
        f[3] = p3;
        f[state.min(2)] += 1.0 - p3;
        OnlineState {
            viterbi_state: state,
            filtered: f,
        }
    }

    #[test]
    fn gate_rules() {
        let g = gate();
        let (a, i) = g
            .apply(&decoded(0, 0.01), || panic!("agent must not be consulted"))
            .unwrap();
        assert_eq!((a, i.in_xs), (Action::Hold, false));
        let (a, i) = g.apply(&decoded(2, 0.0), || Ok(Action::Replace)).unwrap();
        assert_eq!((a, i.in_xs), (Action::Replace, true));
        let (a, _) = g.apply(&decoded(2, 0.9), || Ok(Action::Hold)).unwrap();
        assert_eq!(a, Action::Replace);
        let (a, _) = g.apply(&decoded(0, 0.9), || Ok(Action::Hold)).unwrap();
        assert_eq!(a, Action::Replace);
    }

    #[test]
    fn audit_flags_violations() {
        let g = gate();
        let ok = GateRecord {
            unit: 1,
            t: 1,
            viterbi_state: 0,
            in_xs: false,
            p_fail: 0.0,
            action: Action::Hold,
            agent_action: None,
        };
        assert!(audit_gate_log(&[ok], &g).is_empty());
        let bad = GateRecord {
            action: Action::Replace,
            ..ok
        };
        assert_eq!(audit_gate_log(&[bad], &g).len(), 1);
        let bad = GateRecord { p_fail: 0.7, ..ok };
        assert_eq!(audit_gate_log(&[bad], &g).len(), 1);
    }
}

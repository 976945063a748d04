//! Q-learning maintenance agents.
//!
//! * [`features`] turns units into per-cycle state features (raw sensors,
//!   sensors plus settings, or filtered state posteriors).
//! * [`train`] is the epsilon-greedy Q-learning loop with a frozen target
//!   network.
//! * [`expert`] provides the rule-based experts and behavior-cloning pretraining.
//! * [`srla`] gates the agent by the online-decoded hidden state.

pub mod expert;
pub mod features;
pub mod srla;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{argmax, NetworkParams, QSample, TrainConfig};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::stats::SeededRng;

pub use expert::{build_expert, pretrain_bc, BcReport, Expert, ExpertMode};
pub use features::{FeatureMode, FeaturePipeline, PreparedData, PreparedUnit};
pub use srla::{
    audit_gate_log, write_gate_csv, Gate, GateInfo, GateRecord, SrlaPolicy, SrlaSession,
};
pub use train::{train_dqn, TrainingLog, TrainingRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub batch_size: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 10_000,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon0: f64,
    /// Multiplicative decay applied after every episode.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub max_episodes: usize,
    pub loss_threshold: f64,
    /// Gradient steps between target-network refreshes; 1 bootstraps from
    /// the online network.
    pub target_refresh: usize,
    /// Episodes (with at least one update) averaged for the stopping rule.
    pub loss_window: usize,
    /// The stopping rule is not consulted before this many episodes.
    pub min_episodes: usize,
    #[serde(default)]
    pub replay: Option<ReplayConfig>,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.95,
            lr: 1e-4,
            epsilon0: 0.5,
            epsilon_decay: 0.99,
            epsilon_min: 0.01,
            max_episodes: 10_000,
            loss_threshold: 1e-4,
            target_refresh: 100,
            loss_window: 20,
            min_episodes: 100,
            replay: None,
            clip_norm: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        for (name, e) in [
            ("epsilon0", self.epsilon0),
            ("epsilon_min", self.epsilon_min),
            ("epsilon_decay", self.epsilon_decay),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid(format!("{name} = {e} outside [0, 1]")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.target_refresh == 0 || self.loss_window == 0 {
            return Err(Error::invalid(
                "target_refresh and loss_window must be positive",
            ));
        }
        if let Some(r) = self.replay {
            if r.capacity == 0 || r.batch_size == 0 {
                return Err(Error::invalid(
                    "replay capacity and batch size must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
        }
    }

    /// Exploration rate in effect during episode `episode` (0-based).
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        (self.epsilon0 * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_min)
    }
}

/// Action-value function over feature vectors.
pub trait QFunction {
    fn values(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// One regression step toward the samples' targets; returns the loss
    /// before the step.
    fn update(&mut self, batch: &[QSample], lr: f64) -> Result<f64>;
}

impl QFunction for NetworkParams {
    fn values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn update(&mut self, batch: &[QSample], lr: f64) -> Result<f64> {
        self.train_step(
            batch,
            &TrainConfig {
                lr,
                clip_norm: None,
            },
        )
    }
}

/// Lookup-table Q function; the feature vector's first entry is the state index.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub table: Vec<Vec<f64>>,
}

impl TabularQ {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        TabularQ {
            table: vec![vec![0.0; n_actions]; n_states],
        }
    }

    fn row(&self, x: &[f64]) -> Result<usize> {
        let s = x.first().copied().unwrap_or(-1.0);
        if s < 0.0 || s as usize >= self.table.len() || s.fract() != 0.0 {
            return Err(Error::invalid(format!("tabular state {s} out of range")));
        }
        Ok(s as usize)
    }
}

impl QFunction for TabularQ {
    fn values(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.table[self.row(x)?].clone())
    }

    /// `Q(s, a) += lr * (y - Q(s, a))` per sample.
    fn update(&mut self, batch: &[QSample], lr: f64) -> Result<f64> {
        let mut loss = 0.0;
        for s in batch {
            let r = self.row(&s.x)?;
            let q = &mut self.table[r][s.action];
            let err = s.target - *q;
            loss += err * err / batch.len() as f64;
            *q += lr * err;
        }
        Ok(loss)
    }
}

/// One observed transition. `next` is `None` for terminal transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub x: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next: Option<Vec<f64>>,
}

/// `r` for terminal transitions, `r + gamma * max_a' Q_target(s', a')` otherwise.
pub fn td_target<Q: QFunction + ?Sized>(target: &Q, e: &Experience, gamma: f64) -> Result<f64> {
    match &e.next {
        None => Ok(e.reward),
        Some(x) => {
            let q = target.values(x)?;
            Ok(e.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

pub fn td_samples<Q: QFunction + ?Sized>(
    target: &Q,
    batch: &[Experience],
    gamma: f64,
) -> Result<Vec<QSample>> {
    batch
        .iter()
        .map(|e| {
            Ok(QSample {
                x: e.x.clone(),
                action: e.action,
                target: td_target(target, e, gamma)?,
            })
        })
        .collect()
}

/// Epsilon-greedy over `actions`; greedy ties go to the earliest action (hold).
pub fn act<Q: QFunction + ?Sized>(
    q: &Q,
    features: &[f64],
    actions: &[Action],
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<Action> {
    if actions.is_empty() {
        return Err(Error::invalid("no actions available"));
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(actions[rng.gen_range(0..actions.len())]);
    }
    greedy(q, features, actions)
}

pub fn greedy<Q: QFunction + ?Sized>(
    q: &Q,
    features: &[f64],
    actions: &[Action],
) -> Result<Action> {
    let v = q.values(features)?;
    if v.len() < actions.len() {
        return Err(Error::dims(format!(
            "Q function has {} outputs for {} actions",
            v.len(),
            actions.len()
        )));
    }
    Ok(actions[argmax(&v[..actions.len()])])
}

/// `V(s) = max_a Q(s, a)`.
pub fn state_value<Q: QFunction + ?Sized>(q: &Q, features: &[f64]) -> Result<f64> {
    Ok(q.values(features)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// A decision rule evaluated on prepared units.
pub trait MaintenancePolicy: Sync {
    fn name(&self) -> String;
    /// Action at cycle `t` (1-based) of `unit`, plus gate details when the
    /// policy is gated.
    fn decide(&self, unit: &PreparedUnit, t: usize) -> Result<(Action, Option<GateInfo>)>;
}

/// Greedy policy of a Q-network over the pipeline features.
pub struct GreedyPolicy<'a> {
    pub q: &'a NetworkParams,
    pub actions: &'a [Action],
}

impl MaintenancePolicy for GreedyPolicy<'_> {
    fn name(&self) -> String {
        "greedy-q".into()
    }

    fn decide(&self, unit: &PreparedUnit, t: usize) -> Result<(Action, Option<GateInfo>)> {
        Ok((greedy(self.q, unit.features_at(t)?, self.actions)?, None))
    }
}

/// Replaces one cycle before failure.
pub struct IdealPolicy;

impl MaintenancePolicy for IdealPolicy {
    fn name(&self) -> String {
        "ideal".into()
    }

    fn decide(&self, unit: &PreparedUnit, t: usize) -> Result<(Action, Option<GateInfo>)> {
        Ok((
            if t + 1 >= unit.t_fail {
                Action::Replace
            } else {
                Action::Hold
            },
            None,
        ))
    }
}

/// Never replaces; every episode ends in failure.
pub struct AlwaysHold;

impl MaintenancePolicy for AlwaysHold {
    fn name(&self) -> String {
        "always-hold".into()
    }

    fn decide(&self, _unit: &PreparedUnit, _t: usize) -> Result<(Action, Option<GateInfo>)> {
        Ok((Action::Hold, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn argmax_and_ties() {
        let mut q = TabularQ::zeros(2, 2);
        q.table[0] = vec![-1.0, -0.2];
        let acts = [Action::Hold, Action::Replace];
        let mut rng = stats::seeded(0);
        assert_eq!(
            act(&q, &[0.0], &acts, 0.0, &mut rng).unwrap(),
            Action::Replace
        );
        assert_eq!(act(&q, &[1.0], &acts, 0.0, &mut rng).unwrap(), Action::Hold);
        assert_eq!(state_value(&q, &[0.0]).unwrap(), -0.2);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = TabularQ::zeros(1, 2);
        let acts = [Action::Hold, Action::Replace];
        let mut rng = stats::seeded(4);
        let n = 10_000;
        let r = (0..n)
            .filter(|_| act(&q, &[0.0], &acts, 1.0, &mut rng).unwrap() == Action::Replace)
            .count();
        assert!((r as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn terminal_target_is_reward() {
        let q = TabularQ {
            table: vec![vec![5.0, 7.0]],
        };
        let e = Experience {
            x: vec![0.0],
            action: 1,
            reward: -0.5,
            next: None,
        };
        assert_eq!(td_target(&q, &e, 0.95).unwrap(), -0.5);
        let e = Experience {
            next: Some(vec![0.0]),
            ..e
        };
        assert!((td_target(&q, &e, 0.95).unwrap() - (-0.5 + 0.95 * 7.0)).abs() < 1e-15);
    }

    #[test]
    fn epsilon_schedule() {
        let c = AgentConfig::default();
        assert_eq!(c.epsilon_at(0), 0.5);
        assert!((c.epsilon_at(1) - 0.495).abs() < 1e-15);
        assert_eq!(c.epsilon_at(5000), 0.01);
    }

    #[test]
    fn zero_network_has_zero_value() {
        let mut n = NetworkParams::init(3, 2, 0).unwrap();
        n.set_flat(&vec![0.0; n.n_params()]).unwrap();
        assert_eq!(state_value(&n, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }
}

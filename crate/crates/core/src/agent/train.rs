//! Epsilon-greedy Q-learning over replayed run-to-failure units.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{act, td_samples, AgentConfig, Experience, Gate, PreparedData};
use crate::approximator::NetworkParams;
use crate::env::{transition, EnvConfig};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub episode: usize,
    pub unit: u32,
    /// Mean TD loss over the episode's gradient steps, `None` without updates.
    pub loss: Option<f64>,
    pub cost: f64,
    pub epsilon: f64,
    pub failed: bool,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<TrainingRecord>,
    pub converged: bool,
    pub gradient_steps: usize,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["episode", "loss", "cost", "epsilon", "failed"])?;
        for r in &self.records {
            w.write_record([
                r.episode.to_string(),
                r.loss.map(|l| l.to_string()).unwrap_or_default(),
                r.cost.to_string(),
                r.epsilon.to_string(),
                r.failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean of the last `window` per-episode losses that exist.
    pub fn smoothed_loss(&self, window: usize) -> Option<f64> {
        let recent: Vec<f64> = self
            .records
            .iter()
            .rev()
            .filter_map(|r| r.loss)
            .take(window)
            .collect();
        (recent.len() == window).then(|| stats::mean(&recent))
    }
}

/// Trains a Q-network on episodes drawn uniformly from `train`.
///
/// With a `gate`, the network is consulted (and trained) only on cycles
/// whose decoded state lies in the specialized set; other cycles follow the
/// gate's default action. Training stops when the smoothed loss drops below
/// the threshold or at the episode cap.
pub fn train_dqn(
    train: &PreparedData,
    env: &EnvConfig,
    config: &AgentConfig,
    init: Option<NetworkParams>,
    gate: Option<&Gate>,
    seed: u64,
) -> Result<(NetworkParams, TrainingLog)> {
    config.validate()?;
    env.validate()?;
    if train.units.is_empty() {
        return Err(Error::invalid("no training units"));
    }
    let actions = env.actions();
    let mut net = match init {
        Some(n) => n,
        None => NetworkParams::init(train.dim, actions.len(), seed)?,
    };
    if net.d_in() != train.dim || net.n_out() < actions.len() {
        return Err(Error::dims(format!(
            "network is {}->{} but features have width {} and there are {} actions",
            net.d_in(),
            net.n_out(),
            train.dim,
            actions.len()
        )));
    }
    if gate.is_some() && train.units.iter().any(|u| u.decoded.is_none()) {
        return Err(Error::MissingPrerequisite(
            "gated training needs decoded units".into(),
        ));
    }
    let tc = config.train_config();
    let mut target = net.clone();
    let mut rng = stats::seeded(seed);
    let mut replay: VecDeque<Experience> = VecDeque::new();
    let mut log = TrainingLog {
        records: Vec::new(),
        converged: false,
        gradient_steps: 0,
    };

    for episode in 0..config.max_episodes {
        let eps = config.epsilon_at(episode);
        let unit = &train.units[rng.gen_range(0..train.units.len())];
        let mut t = 1;
        let mut cost = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0;
        let failed;
        let mut guard = 0;
        loop {
            let x = unit.features_at(t)?;
            let (action, learn) = match gate {
                Some(g) => {
                    let (a, info) =
                        g.apply(unit.decoded_at(t)?, || act(&net, x, actions, eps, &mut rng))?;
                    (a, info.in_xs)
                }
                None => (act(&net, x, actions, eps, &mut rng)?, true),
            };
            let tr = transition(env, t, unit.t_fail, action)?;
            cost -= tr.reward;
            if learn {
                let next = if tr.done {
                    None
                } else {
                    Some(unit.features_at(tr.next_t)?.to_vec())
                };
                // The failure cycle ends the episode with the same reward
                // whatever the action, so every action gets that target.
                let taken: Vec<usize> = if tr.failed {
                    actions.iter().map(|a| a.index()).collect()
                } else {
                    vec![action.index()]
                };
                let exps: Vec<Experience> = taken
                    .into_iter()
                    .map(|a| Experience {
                        x: x.to_vec(),
                        action: a,
                        reward: tr.reward,
                        next: next.clone(),
                    })
                    .collect();
                let batch: Vec<Experience> = match config.replay {
                    Some(rc) => {
                        for exp in exps {
                            if replay.len() == rc.capacity {
                                replay.pop_front();
                            }
                            replay.push_back(exp);
                        }
                        if replay.len() >= rc.batch_size {
                            (0..rc.batch_size)
                                .map(|_| replay[rng.gen_range(0..replay.len())].clone())
                                .collect()
                        } else {
                            Vec::new()
                        }
                    }
                    None => exps,
                };
                if !batch.is_empty() {
                    let samples = td_samples(&target, &batch, config.gamma)?;
                    let l = net.train_step(&samples, &tc).map_err(|e| {
                        Error::Numerical(format!(
                            "training diverged in episode {episode} at cycle {t}: {e}"
                        ))
                    })?;
                    if !l.is_finite() {
                        return Err(Error::Numerical(format!(
                            "TD loss became {l} in episode {episode} at cycle {t}"
                        )));
                    }
                    loss_sum += l;
                    updates += 1;
                    log.gradient_steps += 1;
                    if log.gradient_steps.is_multiple_of(config.target_refresh) {
                        target = net.clone();
                    }
                }
            }
            if tr.done {
                failed = tr.failed;
                break;
            }
            t = tr.next_t;
            guard += 1;
            if guard > 20 * unit.t_fail + 20 {
                return Err(Error::Numerical(format!(
                    "episode {episode} did not terminate"
                )));
            }
        }
        log.records.push(TrainingRecord {
            episode,
            unit: unit.unit_id,
            loss: (updates > 0).then(|| loss_sum / updates as f64),
            cost,
            epsilon: eps,
            failed,
            updates,
        });
        if episode + 1 >= config.min_episodes {
            if let Some(l) = log.smoothed_loss(config.loss_window) {
                if l < config.loss_threshold {
                    log.converged = true;
                    break;
                }
            }
        }
    }
    Ok((net, log))
}

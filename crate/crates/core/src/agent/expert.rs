//! Rule-based experts and behavior-cloning pretraining.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Gate, GateInfo, MaintenancePolicy, PreparedData, PreparedUnit};
use crate::approximator::{agreement, clone_behavior, BcConfig, NetworkParams};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::iohmm::IohmmParams;
use crate::rul::{rul_from_state, RulConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ExpertMode {
    /// Replace once `t >= T_j - margin`; needs the true failure cycle.
    OracleMargin { margin: usize },
    /// Replace once the Monte-Carlo RUL estimate drops to `margin` or below.
    RulThreshold { margin: f64 },
}

impl Default for ExpertMode {
    fn default() -> Self {
        ExpertMode::OracleMargin { margin: 10 }
    }
}

#[derive(Debug, Clone)]
pub enum Expert {
    OracleMargin {
        margin: usize,
    },
    RulThreshold {
        margin: f64,
        model: IohmmParams,
        failure_states: BTreeSet<usize>,
        rul: RulConfig,
    },
}

pub fn build_expert(
    mode: ExpertMode,
    model: Option<&IohmmParams>,
    failure_states: Option<&BTreeSet<usize>>,
    rul: &RulConfig,
) -> Result<Expert> {
    match mode {
        ExpertMode::OracleMargin { margin } => Ok(Expert::OracleMargin { margin }),
        ExpertMode::RulThreshold { margin } => {
            let model = model.ok_or_else(|| {
                Error::MissingPrerequisite("the RUL-threshold expert needs a fitted model".into())
            })?;
            let failure_states = failure_states.filter(|f| !f.is_empty()).ok_or_else(|| {
                Error::MissingPrerequisite(
                    "the RUL-threshold expert needs decoded failure states".into(),
                )
            })?;
            Ok(Expert::RulThreshold {
                margin,
                model: model.clone(),
                failure_states: failure_states.clone(),
                rul: *rul,
            })
        }
    }
}

impl Expert {
    pub fn action(&self, unit: &PreparedUnit, t: usize) -> Result<Action> {
        match self {
            Expert::OracleMargin { margin } => Ok(if t + margin >= unit.t_fail {
                Action::Replace
            } else {
                Action::Hold
            }),
            Expert::RulThreshold {
                margin,
                model,
                failure_states,
                rul,
            } => {
                let state = unit.decoded_at(t)?.viterbi_state;
                let inputs = unit.inputs.as_ref().ok_or_else(|| {
                    Error::MissingPrerequisite(format!(
                        "unit {} has no decoded inputs",
                        unit.unit_id
                    ))
                })?;
                let (mean, _, _) = rul_from_state(model, state, &inputs[..t], failure_states, rul)?;
                Ok(if mean <= *margin {
                    Action::Replace
                } else {
                    Action::Hold
                })
            }
        }
    }
}

impl MaintenancePolicy for Expert {
    fn name(&self) -> String {
        match self {
            Expert::OracleMargin { margin } => format!("oracle-margin-{margin}"),
            Expert::RulThreshold { margin, .. } => format!("rul-threshold-{margin}"),
        }
    }

    fn decide(&self, unit: &PreparedUnit, t: usize) -> Result<(Action, Option<GateInfo>)> {
        Ok((self.action(unit, t)?, None))
    }
}

/// `(features, expert action index)` for every cycle of every unit, limited
/// to cycles inside the gate's specialized set when a gate is given.
pub fn expert_pairs(
    expert: &Expert,
    data: &PreparedData,
    gate: Option<&Gate>,
) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut pairs = Vec::new();
    for unit in &data.units {
        for t in 1..=unit.t_fail {
            if let Some(g) = gate {
                if !g.specialized.contains(&unit.decoded_at(t)?.viterbi_state) {
                    continue;
                }
            }
            pairs.push((
                unit.features_at(t)?.to_vec(),
                expert.action(unit, t)?.index(),
            ));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct BcReport {
    pub params: NetworkParams,
    pub n_pairs: usize,
    pub train_agreement: f64,
    pub holdout_agreement: Option<f64>,
    pub loss_trace: Vec<f64>,
}

/// Clones `expert` into a network of shape `init`, reporting agreement on the
/// training pairs and, when given, on held-out units.
pub fn pretrain_bc(
    expert: &Expert,
    train: &PreparedData,
    gate: Option<&Gate>,
    init: &NetworkParams,
    config: &BcConfig,
    holdout: Option<&PreparedData>,
) -> Result<BcReport> {
    if init.d_in() != train.dim {
        return Err(Error::dims(format!(
            "network expects {} features, pipeline produces {}",
            init.d_in(),
            train.dim
        )));
    }
    let pairs = expert_pairs(expert, train, gate)?;
    if pairs.is_empty() {
        return Err(Error::invalid("the expert produced no training pairs"));
    }
    let out = clone_behavior(init, &pairs, config)?;
    let holdout_agreement = match holdout {
        Some(h) => {
            let hp = expert_pairs(expert, h, gate)?;
            if hp.is_empty() {
                None
            } else {
                Some(agreement(&out.params, &hp)?)
            }
        }
        None => None,
    };
    Ok(BcReport {
        params: out.params,
        n_pairs: pairs.len(),
        train_agreement: out.agreement,
        holdout_agreement,
        loss_trace: out.loss_trace,
    })
}

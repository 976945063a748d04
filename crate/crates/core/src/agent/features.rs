//! State representations for the maintenance agent.
//!
//! | mode | features |
//! |------|----------|
//! | `raw` | normalized sensors |
//! | `raw_plus_ops` | normalized sensors and operating settings |
//! | `hmm_gamma` | filtered posterior of a single-input HMM |
//! | `iohmm_gamma` | filtered posterior of the IOHMM |
//! | `srla_raw` | normalized sensors, with the IOHMM decoded alongside for gating |
//!
//! Posteriors are filtered over the prefix seen so far, so a feature at
//! cycle `t` never depends on later cycles.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RunToFailureDataset, UnitTrajectory};
use crate::error::{Error, Result};
use crate::iohmm::{IohmmParams, OnlineDecoder, OnlineState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Raw,
    RawPlusOps,
    HmmGamma,
    IohmmGamma,
    SrlaRaw,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 5] = [
        FeatureMode::Raw,
        FeatureMode::RawPlusOps,
        FeatureMode::HmmGamma,
        FeatureMode::IohmmGamma,
        FeatureMode::SrlaRaw,
    ];

    /// Row label used in comparison tables.
    pub fn system_name(self) -> &'static str {
        match self {
            FeatureMode::Raw => "SYSTEM 1",
            FeatureMode::RawPlusOps => "SYSTEM 2",
            FeatureMode::HmmGamma => "SYSTEM 3",
            FeatureMode::IohmmGamma => "SYSTEM 4",
            FeatureMode::SrlaRaw => "SRLA",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(
            self,
            FeatureMode::HmmGamma | FeatureMode::IohmmGamma | FeatureMode::SrlaRaw
        )
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureMode::Raw => "raw",
            FeatureMode::RawPlusOps => "raw_plus_ops",
            FeatureMode::HmmGamma => "hmm_gamma",
            FeatureMode::IohmmGamma => "iohmm_gamma",
            FeatureMode::SrlaRaw => "srla_raw",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    /// Accepts mode names and the system numbers `1`-`4` / `srla`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "raw" => Ok(FeatureMode::Raw),
            "2" | "raw_plus_ops" => Ok(FeatureMode::RawPlusOps),
            "3" | "hmm_gamma" => Ok(FeatureMode::HmmGamma),
            "4" | "iohmm_gamma" => Ok(FeatureMode::IohmmGamma),
            "srla" | "srla_raw" => Ok(FeatureMode::SrlaRaw),
            other => Err(Error::invalid(format!("unknown system `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub mode: FeatureMode,
    /// Posterior source for gamma modes, decoder for gating in `srla_raw`.
    pub model: Option<IohmmParams>,
}

impl FeaturePipeline {
    pub fn new(mode: FeatureMode, model: Option<IohmmParams>) -> Result<Self> {
        match (&model, mode) {
            (None, m) if m.needs_model() => Err(Error::MissingPrerequisite(format!(
                "feature mode `{m}` needs a fitted model"
            ))),
            (Some(p), FeatureMode::HmmGamma) if p.n_inputs != 1 => Err(Error::invalid(
                "hmm_gamma features need a single-input model",
            )),
            _ => Ok(FeaturePipeline { mode, model }),
        }
    }

    pub fn dim(&self, data: &RunToFailureDataset) -> usize {
        match self.mode {
            FeatureMode::Raw | FeatureMode::SrlaRaw => data.n_sensors(),
            FeatureMode::RawPlusOps => data.n_sensors() + data.n_op_settings(),
            FeatureMode::HmmGamma | FeatureMode::IohmmGamma => {
                self.model.as_ref().unwrap().n_states
            }
        }
    }

    fn prepare_unit(&self, unit: &UnitTrajectory) -> Result<PreparedUnit> {
        let (decoded, inputs) = match &self.model {
            Some(p) => {
                let u = p.unit_inputs(unit)?;
                p.check_sequence(&u, &unit.sensors)?;
                let mut dec = OnlineDecoder::new(p);
                let d = u
                    .iter()
                    .zip(&unit.sensors)
                    .map(|(&ut, y)| dec.push(ut, y))
                    .collect::<Result<Vec<_>>>()?;
                (Some(d), Some(u))
            }
            None => (None, None),
        };
        let features = match self.mode {
            FeatureMode::Raw | FeatureMode::SrlaRaw => unit.sensors.clone(),
            FeatureMode::RawPlusOps => unit
                .sensors
                .iter()
                .zip(&unit.op_settings)
                .map(|(s, o)| s.iter().chain(o).copied().collect())
                .collect(),
            FeatureMode::HmmGamma | FeatureMode::IohmmGamma => decoded
                .as_ref()
                .unwrap()
                .iter()
                .map(|d| d.filtered.clone())
                .collect(),
        };
        Ok(PreparedUnit {
            unit_id: unit.unit_id,
            t_fail: unit.len(),
            features,
            decoded,
            inputs,
        })
    }

    /// Features (and online decodings, when a model is present) for every unit.
    pub fn prepare(&self, data: &RunToFailureDataset) -> Result<PreparedData> {
        if data.units.is_empty() {
            return Err(Error::invalid("cannot prepare an empty dataset"));
        }
        let units = data
            .units
            .par_iter()
            .map(|u| self.prepare_unit(u))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            mode: self.mode,
            dim: self.dim(data),
            units,
        })
    }
}

/// One unit's per-cycle features, cached for repeated episodes.
#[derive(Debug, Clone)]
pub struct PreparedUnit {
    pub unit_id: u32,
    pub t_fail: usize,
    pub features: Vec<Vec<f64>>,
    pub decoded: Option<Vec<OnlineState>>,
    /// Input symbols as seen by the decoding model.
    pub inputs: Option<Vec<usize>>,
}

impl PreparedUnit {
    /// Features at 1-based cycle `t`.
    pub fn features_at(&self, t: usize) -> Result<&[f64]> {
        self.features
            .get(t.wrapping_sub(1))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("cycle {t} outside unit {}", self.unit_id)))
    }

    pub fn decoded_at(&self, t: usize) -> Result<&OnlineState> {
        let d = self.decoded.as_ref().ok_or_else(|| {
            Error::MissingPrerequisite(format!(
                "unit {} was prepared without a decoder",
                self.unit_id
            ))
        })?;
        d.get(t.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("cycle {t} outside unit {}", self.unit_id)))
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub mode: FeatureMode,
    pub dim: usize,
    pub units: Vec<PreparedUnit>,
}

impl PreparedData {
    /// Raw features with no decoder; enough for policies that ignore state.
    pub fn bare(data: &RunToFailureDataset) -> Result<Self> {
        FeaturePipeline::new(FeatureMode::Raw, None)?.prepare(data)
    }

    pub fn failure_cycles(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.t_fail).collect()
    }
}

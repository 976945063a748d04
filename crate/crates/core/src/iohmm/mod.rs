//! Input-output hidden Markov model over discrete operating conditions.
//!
//! The transition matrix is selected by the input symbol of the destination
//! cycle, `P(x_t = j | x_{t-1} = i, u_t) = A[u_t][i][j]`, and each
//! `(state, input)` pair owns a diagonal Gaussian emission. With a single
//! input symbol the model is an ordinary Gaussian HMM.

mod em;
mod inference;

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Discretization, NormalizationSpec, SyntheticConfig, UnitTrajectory};
use crate::doc;
use crate::error::{Error, Result};
use crate::stats::SeededRng;

pub use em::{fit_em, fit_em_with_inputs, fit_hmm, EmConfig, EmFit, EmInit};
pub use inference::{
    joint_log_prob, log_likelihood, posterior_gamma, viterbi, OnlineDecoder, OnlineState,
    PosteriorSequence, ViterbiPath,
};

pub const VAR_FLOOR: f64 = 1e-6;
const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Gaussian {
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&x, &m), &v) in y.iter().zip(&self.mean).zip(&self.var) {
            let d = x - m;
            acc += -0.5 * ((2.0 * PI * v).ln() + d * d / v);
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IohmmParams {
    pub n_states: usize,
    pub n_inputs: usize,
    pub dim: usize,
    pub initial: Vec<f64>,
    /// `[input][from][to]`, row-stochastic.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `[state][input]`
    pub emissions: Vec<Vec<Gaussian>>,
}

impl IohmmParams {
    pub fn validate(&self) -> Result<()> {
        let (n, k, d) = (self.n_states, self.n_inputs, self.dim);
        if n == 0 || k == 0 {
            return Err(Error::InvariantViolation(
                "model needs at least one state and one input".into(),
            ));
        }
        check_stochastic(&self.initial, n, "initial distribution")?;
        if self.transitions.len() != k {
            return Err(Error::InvariantViolation(format!(
                "expected {k} transition matrices, found {}",
                self.transitions.len()
            )));
        }
        for (u, a) in self.transitions.iter().enumerate() {
            if a.len() != n {
                return Err(Error::InvariantViolation(format!(
                    "A[{u}] has {} rows, expected {n}",
                    a.len()
                )));
            }
            for (i, row) in a.iter().enumerate() {
                check_stochastic(row, n, &format!("A[{u}] row {i}"))?;
            }
        }
        if self.emissions.len() != n || self.emissions.iter().any(|e| e.len() != k) {
            return Err(Error::InvariantViolation(
                "emissions must be indexed [state][input]".into(),
            ));
        }
        for (s, row) in self.emissions.iter().enumerate() {
            for (u, g) in row.iter().enumerate() {
                if g.mean.len() != d || g.var.len() != d {
                    return Err(Error::InvariantViolation(format!(
                        "emission ({s},{u}) has wrong dimension"
                    )));
                }
                if g.mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::InvariantViolation(format!(
                        "emission ({s},{u}) mean not finite"
                    )));
                }
                if g.var
                    .iter()
                    .any(|&v| !(v >= VAR_FLOOR * (1.0 - 1e-12)) || !v.is_finite())
                {
                    return Err(Error::InvariantViolation(format!(
                        "emission ({s},{u}) variance below floor {VAR_FLOOR}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn log_emission(&self, state: usize, input: usize, y: &[f64]) -> f64 {
        self.emissions[state][input].log_density(y)
    }

    /// Checks a `(u, y)` pair of sequences against the model dimensions.
    pub fn check_sequence(&self, u: &[usize], y: &[Vec<f64>]) -> Result<()> {
        if u.len() != y.len() {
            return Err(Error::dims(format!(
                "{} inputs vs {} observations",
                u.len(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::invalid("empty observation sequence"));
        }
        if let Some(bad) = u.iter().find(|&&s| s >= self.n_inputs) {
            return Err(Error::dims(format!(
                "input symbol {bad} outside [0, {})",
                self.n_inputs
            )));
        }
        if let Some(row) = y.iter().find(|r| r.len() != self.dim) {
            return Err(Error::dims(format!(
                "observation has {} features, model expects {}",
                row.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// The generating model of a synthetic configuration (its ground truth).
    pub fn from_synthetic(config: &SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let p = IohmmParams {
            n_states: config.n_states,
            n_inputs: config.n_inputs,
            dim: config.emissions[0][0].mean.len(),
            initial: config.initial.clone(),
            transitions: config.transitions.clone(),
            emissions: config
                .emissions
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|g| Gaussian {
                            mean: g.mean.clone(),
                            var: g.std.iter().map(|s| (s * s).max(VAR_FLOOR)).collect(),
                        })
                        .collect()
                })
                .collect(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Input sequence of `unit` as seen by this model. A single-input model
    /// (plain HMM) ignores operating conditions entirely.
    pub fn unit_inputs(&self, unit: &UnitTrajectory) -> Result<Vec<usize>> {
        if self.n_inputs == 1 {
            return Ok(vec![0; unit.len()]);
        }
        Ok(unit.symbols()?.to_vec())
    }

    /// Viterbi path of one unit's full trajectory.
    pub fn decode_unit(&self, unit: &UnitTrajectory) -> Result<ViterbiPath> {
        viterbi(self, &self.unit_inputs(unit)?, &unit.sensors)
    }

    pub(crate) fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::invalid(format!(
                "state {s} outside [0, {})",
                self.n_states
            )));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, u: usize) -> Result<()> {
        if u >= self.n_inputs {
            return Err(Error::invalid(format!(
                "input {u} outside [0, {})",
                self.n_inputs
            )));
        }
        Ok(())
    }

    pub fn sample_observation(&self, state: usize, input: usize, rng: &mut SeededRng) -> Vec<f64> {
        let g = &self.emissions[state][input];
        g.mean
            .iter()
            .zip(&g.var)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }
}

fn check_stochastic(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvariantViolation(format!(
            "{what} has length {}, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvariantViolation(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvariantViolation(format!(
            "{what} sums to {s}, not 1"
        )));
    }
    Ok(())
}

pub(crate) fn sample_index(p: &[f64], rng: &mut SeededRng) -> usize {
    let mut r = rng.gen::<f64>();
    for (i, &w) in p.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

/// Draws the next hidden state from `A[input][current]` and an observation
/// from the `(next_state, input)` emission.
pub fn sample_next(
    params: &IohmmParams,
    current_state: usize,
    input_symbol: usize,
    rng: &mut SeededRng,
) -> Result<(usize, Vec<f64>)> {
    params.check_state(current_state)?;
    params.check_input(input_symbol)?;
    let next = sample_index(&params.transitions[input_symbol][current_state], rng);
    let obs = params.sample_observation(next, input_symbol, rng);
    Ok((next, obs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub states: Vec<usize>,
    pub inputs: Vec<usize>,
    pub observations: Vec<Vec<f64>>,
}

/// Samples `horizon` cycles; `input_policy(t, rng)` chooses the input of cycle `t` (0-based).
pub fn sample_sequence(
    params: &IohmmParams,
    mut input_policy: impl FnMut(usize, &mut SeededRng) -> usize,
    horizon: usize,
    rng: &mut SeededRng,
) -> Result<SampledTrajectory> {
    let mut traj = SampledTrajectory {
        states: Vec::with_capacity(horizon),
        inputs: Vec::with_capacity(horizon),
        observations: Vec::with_capacity(horizon),
    };
    if horizon == 0 {
        return Ok(traj);
    }
    let u0 = input_policy(0, rng);
    params.check_input(u0)?;
    let s0 = sample_index(&params.initial, rng);
    traj.observations
        .push(params.sample_observation(s0, u0, rng));
    traj.states.push(s0);
    traj.inputs.push(u0);
    for t in 1..horizon {
        let u = input_policy(t, rng);
        let (s, y) = sample_next(params, *traj.states.last().unwrap(), u, rng)?;
        traj.states.push(s);
        traj.inputs.push(u);
        traj.observations.push(y);
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub const MODEL_KIND: &str = "iohmm-model";
pub const MODEL_VERSION: u32 = 1;

/// Everything needed to reuse a fitted model on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub params: IohmmParams,
    #[serde(default)]
    pub sensor_names: Vec<String>,
    #[serde(default)]
    pub normalizer: Option<NormalizationSpec>,
    #[serde(default)]
    pub discretization: Option<Discretization>,
    #[serde(default)]
    pub training: Option<EmConfig>,
    #[serde(default)]
    pub log_likelihood_trace: Vec<f64>,
}

impl ModelDocument {
    pub fn bare(params: IohmmParams) -> Self {
        ModelDocument {
            params,
            sensor_names: Vec::new(),
            normalizer: None,
            discretization: None,
            training: None,
            log_likelihood_trace: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.validate()?;
        doc::write(path, MODEL_KIND, MODEL_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: ModelDocument = doc::read(path, MODEL_KIND, MODEL_VERSION)?;
        d.params.validate()?;
        Ok(d)
    }
}

pub fn save_model(params: &IohmmParams, path: &Path) -> Result<()> {
    ModelDocument::bare(params.clone()).save(path)
}

pub fn load_model(path: &Path) -> Result<IohmmParams> {
    Ok(ModelDocument::load(path)?.params)
}

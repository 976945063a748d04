//! Evaluation harness: cost bounds, per-policy metrics and the system
//! comparison / hyperparameter sweeps.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    build_expert, pretrain_bc, train_dqn, AgentConfig, ExpertMode, FeatureMode, FeaturePipeline,
    Gate, GateRecord, GreedyPolicy, MaintenancePolicy, PreparedData, SrlaPolicy, TrainingLog,
};
use crate::approximator::{BcConfig, NetworkParams};
use crate::data::{
    discretize_operating_conditions, fit_normalizer, split, Discretization, FeatureSet, NormMode,
    NormalizationSpec, RunToFailureDataset,
};
use crate::decoding::{annotate, DecodingConfig, StateAnnotation};
use crate::doc;
use crate::env::{episode_stats, transition, EnvConfig, EpisodeTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::iohmm::{fit_em, fit_hmm, EmConfig, IohmmParams};
use crate::rul::RulConfig;

/// Ideal maintenance cost: every unit replaced one cycle before failure.
pub fn imc(failure_cycles: &[usize], c_r: f64) -> Result<f64> {
    if failure_cycles.is_empty() {
        return Err(Error::invalid("IMC needs at least one unit"));
    }
    if let Some(t) = failure_cycles.iter().find(|&&t| t <= 1) {
        return Err(Error::invalid(format!(
            "IMC undefined for a unit with T_j = {t}"
        )));
    }
    let denom: usize = failure_cycles.iter().map(|t| t - 1).sum();
    Ok(failure_cycles.len() as f64 * c_r / denom as f64)
}

/// Corrective maintenance cost: every unit run to failure.
pub fn cmc(failure_cycles: &[usize], c_r: f64, c_f: f64) -> Result<f64> {
    if failure_cycles.is_empty() {
        return Err(Error::invalid("CMC needs at least one unit"));
    }
    let denom: usize = failure_cycles.iter().sum();
    Ok(failure_cycles.len() as f64 * (c_r + c_f) / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Realized cost per operated cycle, pooled over units:
    /// `sum_j C_j / sum_j L_j` with `C_j` the event cost (`c_r` or
    /// `c_r + c_f`, plus repairs) and `L_j` the cycles the unit ran.
    pub q_star_avg: f64,
    pub imc: f64,
    pub cmc: f64,
    pub imc_over_q: f64,
    pub failure_pct: f64,
    /// Mean `T_j - t_replace` over units that were replaced; 0 when none was.
    pub avg_remaining_cycles: f64,
    pub n_units: usize,
    /// Mean magnitude of the discounted return.
    pub empirical_return_avg: f64,
    /// Mean over units of the undiscounted episode cost `-sum r_t`.
    pub episode_cost_avg: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub traces: Vec<EpisodeTrace>,
    pub gate_log: Vec<GateRecord>,
}

/// Runs `policy` once on every unit from cycle 1 and aggregates the metrics.
pub fn evaluate_policy(
    test: &PreparedData,
    env: &EnvConfig,
    policy: &dyn MaintenancePolicy,
    gamma: f64,
) -> Result<Evaluation> {
    env.validate()?;
    let per_unit: Vec<(EpisodeTrace, Vec<GateRecord>)> = test
        .units
        .par_iter()
        .map(|unit| {
            let wrap = |e: Error| Error::Policy {
                unit: unit.unit_id,
                source: Box::new(e),
            };
            let mut t = 1;
            let mut records = Vec::new();
            let mut gates = Vec::new();
            loop {
                let (a, info) = policy.decide(unit, t).map_err(wrap)?;
                if let Some(i) = info {
                    gates.push(GateRecord::new(unit.unit_id, t, a, &i));
                }
                let tr = transition(env, t, unit.t_fail, a).map_err(wrap)?;
                records.push(TraceRecord {
                    unit: unit.unit_id,
                    t,
                    action: a,
                    reward: tr.reward,
                    done: tr.done,
                });
                if tr.done {
                    break;
                }
                t = tr.next_t;
                if records.len() > 20 * unit.t_fail + 20 {
                    return Err(wrap(Error::invalid("episode did not terminate")));
                }
            }
            Ok((
                EpisodeTrace {
                    unit_id: unit.unit_id,
                    t_fail: unit.t_fail,
                    records,
                },
                gates,
            ))
        })
        .collect::<Result<_>>()?;

    let n = per_unit.len();
    let mut total_cost = 0.0;
    let mut event_cost = 0.0;
    let mut operated = 0usize;
    let mut failed = 0;
    let mut remaining = Vec::new();
    let mut disc = 0.0;
    for (trace, _) in &per_unit {
        let st = episode_stats(trace)?;
        total_cost += st.total_cost;
        event_cost += st.total_cost * trace.t_fail as f64;
        operated += trace.records.len();
        if st.failed {
            failed += 1;
        }
        if let Some(r) = st.remaining_cycles {
            remaining.push(r as f64);
        }
        let g: f64 = trace
            .records
            .iter()
            .enumerate()
            .map(|(k, r)| gamma.powi(k as i32) * r.reward)
            .sum();
        disc += g.abs();
    }
    let cycles = test.failure_cycles();
    let q = event_cost / operated as f64;
    let imc_v = imc(&cycles, env.c_r)?;
    let report = MetricsReport {
        q_star_avg: q,
        imc: imc_v,
        cmc: cmc(&cycles, env.c_r, env.c_f)?,
        imc_over_q: imc_v / q,
        failure_pct: 100.0 * failed as f64 / n as f64,
        avg_remaining_cycles: if remaining.is_empty() {
            0.0
        } else {
            remaining.iter().sum::<f64>() / remaining.len() as f64
        },
        n_units: n,
        empirical_return_avg: disc / n as f64,
        episode_cost_avg: total_cost / n as f64,
    };
    let (traces, gates): (Vec<_>, Vec<_>) = per_unit.into_iter().unzip();
    Ok(Evaluation {
        report,
        traces,
        gate_log: gates.into_iter().flatten().collect(),
    })
}

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub norm: NormMode,
    /// Sensor columns to keep; all when `None`.
    #[serde(default)]
    pub sensors: Option<Vec<String>>,
    /// Number of operating regimes; inferred by gap clustering when `None`.
    #[serde(default)]
    pub n_regimes: Option<usize>,
    pub regime_tol: f64,
    pub train_ratio: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            norm: NormMode::ZScore,
            sensors: None,
            n_regimes: None,
            regime_tol: 1e-3,
            train_ratio: 0.8,
        }
    }
}

/// Every setting of one experiment; serialized next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub prep: PrepConfig,
    pub n_states: usize,
    pub em: EmConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub bc: BcConfig,
    pub expert: ExpertMode,
    pub decoding: DecodingConfig,
    pub rul: RulConfig,
    /// Pretrain SRLA by behavior cloning before Q-learning.
    pub srla_bc: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            prep: PrepConfig::default(),
            n_states: 10,
            em: EmConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            bc: BcConfig::default(),
            expert: ExpertMode::default(),
            decoding: DecodingConfig::default(),
            rul: RulConfig::default(),
            srla_bc: true,
            seed: 0,
        }
    }
}

pub const PREPROCESSING_KIND: &str = "preprocessing";
pub const PREPROCESSING_VERSION: u32 = 1;

/// Normalization and input alphabet fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub normalizer: NormalizationSpec,
    pub discretization: Option<Discretization>,
}

impl Preprocessing {
    pub fn save(&self, path: &Path) -> Result<()> {
        doc::write(path, PREPROCESSING_KIND, PREPROCESSING_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        doc::read(path, PREPROCESSING_KIND, PREPROCESSING_VERSION)
    }
}

/// A split, normalized and discretized dataset with lazily fitted models.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub train: RunToFailureDataset,
    pub test: RunToFailureDataset,
    pub normalizer: NormalizationSpec,
    pub discretization: Option<Discretization>,
    iohmm: Option<IohmmParams>,
    hmm: Option<IohmmParams>,
    annotation: Option<StateAnnotation>,
}

impl Workbench {
    /// Splits `data` by unit, fits normalization on the training units and
    /// assigns operating-regime symbols where they are missing.
    pub fn prepare(data: &RunToFailureDataset, config: &ExperimentConfig) -> Result<Self> {
        let data = match &config.prep.sensors {
            Some(names) => data.select_sensors(names)?,
            None => data.clone(),
        };
        let (mut train, mut test) = split(&data, config.prep.train_ratio, config.seed)?;
        let needs_symbols = data.units.iter().any(|u| u.input_symbols.is_none());
        let mut discretization = None;
        if needs_symbols {
            if data.n_op_settings() == 0 {
                for u in train.units.iter_mut().chain(test.units.iter_mut()) {
                    u.input_symbols = Some(vec![0; u.len()]);
                }
            } else {
                let (tr, disc) = discretize_operating_conditions(
                    &train,
                    config.prep.n_regimes,
                    config.prep.regime_tol,
                    config.seed,
                )?;
                test = disc.apply(&test)?;
                train = tr;
                discretization = Some(disc);
            }
        }
        let normalizer = fit_normalizer(&train, config.prep.norm, FeatureSet::SensorsAndOps)?;
        let train = normalizer.apply(&train)?;
        let test = normalizer.apply(&test)?;
        Ok(Workbench {
            config: config.clone(),
            train,
            test,
            normalizer,
            discretization,
            iohmm: None,
            hmm: None,
            annotation: None,
        })
    }

    /// Reassembles a workbench from an already prepared split.
    pub fn from_split(
        config: &ExperimentConfig,
        train: RunToFailureDataset,
        test: RunToFailureDataset,
        preprocessing: Preprocessing,
    ) -> Result<Self> {
        for (name, d) in [("training", &train), ("test", &test)] {
            if d.units.iter().any(|u| u.input_symbols.is_none()) {
                return Err(Error::invalid(format!("{name} split lacks input symbols")));
            }
        }
        Ok(Workbench {
            config: config.clone(),
            train,
            test,
            normalizer: preprocessing.normalizer,
            discretization: preprocessing.discretization,
            iohmm: None,
            hmm: None,
            annotation: None,
        })
    }

    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            normalizer: self.normalizer.clone(),
            discretization: self.discretization.clone(),
        }
    }

    pub fn iohmm(&mut self) -> Result<&IohmmParams> {
        if self.iohmm.is_none() {
            let em = EmConfig {
                seed: self.config.seed,
                ..self.config.em.clone()
            };
            self.iohmm = Some(fit_em(&self.train, self.config.n_states, &em)?.params);
        }
        Ok(self.iohmm.as_ref().unwrap())
    }

    pub fn set_iohmm(&mut self, params: IohmmParams) {
        self.iohmm = Some(params);
        self.annotation = None;
    }

    pub fn set_hmm(&mut self, params: IohmmParams) -> Result<()> {
        if params.n_inputs != 1 {
            return Err(Error::invalid("the baseline HMM must have a single input"));
        }
        self.hmm = Some(params);
        Ok(())
    }

    /// Installs a stored annotation; it must refer to the current IOHMM.
    pub fn set_annotation(&mut self, ann: StateAnnotation) -> Result<()> {
        ann.validate()?;
        let n = self.iohmm()?.n_states;
        if let Some(&s) = ann.specialized_states.iter().find(|&&s| s >= n) {
            return Err(Error::invalid(format!(
                "annotation references state {s} of a {n}-state model"
            )));
        }
        self.annotation = Some(ann);
        Ok(())
    }

    pub fn hmm(&mut self) -> Result<&IohmmParams> {
        if self.hmm.is_none() {
            let em = EmConfig {
                seed: self.config.seed,
                ..self.config.em.clone()
            };
            self.hmm = Some(fit_hmm(&self.train, self.config.n_states, &em)?.params);
        }
        Ok(self.hmm.as_ref().unwrap())
    }

    pub fn annotation(&mut self) -> Result<&StateAnnotation> {
        if self.annotation.is_none() {
            let dc = self.config.decoding;
            let p = self.iohmm()?.clone();
            self.annotation = Some(annotate(&p, &self.train, &dc)?);
        }
        Ok(self.annotation.as_ref().unwrap())
    }

    pub fn pipeline(&mut self, mode: FeatureMode) -> Result<FeaturePipeline> {
        let model = match mode {
            FeatureMode::Raw | FeatureMode::RawPlusOps => None,
            FeatureMode::HmmGamma => Some(self.hmm()?.clone()),
            FeatureMode::IohmmGamma | FeatureMode::SrlaRaw => Some(self.iohmm()?.clone()),
        };
        FeaturePipeline::new(mode, model)
    }
}

#[derive(Debug, Clone)]
pub struct SystemRun {
    pub mode: FeatureMode,
    pub network: NetworkParams,
    pub training: TrainingLog,
    pub bc_agreement: Option<(f64, Option<f64>)>,
    pub evaluation: Evaluation,
}

/// Trains and evaluates one system on the workbench split.
pub fn run_system(wb: &mut Workbench, mode: FeatureMode) -> Result<SystemRun> {
    let cfg = wb.config.clone();
    let pipe = wb.pipeline(mode)?;
    let train = pipe.prepare(&wb.train)?;
    let test = pipe.prepare(&wb.test)?;
    let actions = cfg.env.actions();
    if mode != FeatureMode::SrlaRaw {
        let (net, log) = train_dqn(&train, &cfg.env, &cfg.agent, None, None, cfg.seed)?;
        let policy = GreedyPolicy { q: &net, actions };
        let evaluation = evaluate_policy(&test, &cfg.env, &policy, cfg.agent.gamma)?;
        return Ok(SystemRun {
            mode,
            network: net,
            training: log,
            bc_agreement: None,
            evaluation,
        });
    }
    let ann = wb.annotation()?.clone();
    let model = wb.iohmm()?.clone();
    let gate = Gate::from_annotation(&ann);
    let mut init = NetworkParams::init(train.dim, actions.len(), cfg.seed)?;
    let mut bc_agreement = None;
    if cfg.srla_bc {
        let expert = build_expert(
            cfg.expert,
            Some(&model),
            Some(&ann.failure_states),
            &cfg.rul,
        )?;
        let bc = BcConfig {
            seed: cfg.seed,
            ..cfg.bc
        };
        let rep = pretrain_bc(&expert, &train, Some(&gate), &init, &bc, Some(&test))?;
        bc_agreement = Some((rep.train_agreement, rep.holdout_agreement));
        init = rep.params;
    }
    let (net, log) = train_dqn(
        &train,
        &cfg.env,
        &cfg.agent,
        Some(init),
        Some(&gate),
        cfg.seed,
    )?;
    let policy = SrlaPolicy::new(model, gate, net.clone(), actions)?;
    let evaluation = evaluate_policy(&test, &cfg.env, &policy, cfg.agent.gamma)?;
    Ok(SystemRun {
        mode,
        network: net,
        training: log,
        bc_agreement,
        evaluation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub system: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

/// One row per system on a shared split; a failing system is recorded in
/// its row and the others still run.
pub fn run_comparison(wb: &mut Workbench, systems: &[FeatureMode]) -> Vec<ComparisonRow> {
    systems
        .iter()
        .map(|&m| match run_system(wb, m) {
            Ok(r) => ComparisonRow {
                system: m.system_name().to_string(),
                report: Some(r.evaluation.report),
                error: None,
            },
            Err(e) => ComparisonRow {
                system: m.system_name().to_string(),
                report: None,
                error: Some(format!("{}: {e}", e.class())),
            },
        })
        .collect()
}

const TABLE_HEADER: [&str; 8] = [
    "Q*",
    "IMC",
    "CMC",
    "IMC/Q*",
    "FAILURE",
    "AVERAGE REMAINING CYCLES",
    "N_UNITS",
    "ERROR",
];

fn report_cells(r: &Option<MetricsReport>, err: &Option<String>) -> Vec<String> {
    match r {
        Some(m) => vec![
            format!("{:.4}", m.q_star_avg),
            format!("{:.4}", m.imc),
            format!("{:.4}", m.cmc),
            format!("{:.4}", m.imc_over_q),
            format!("{:.1}%", m.failure_pct),
            format!("{:.2}", m.avg_remaining_cycles),
            m.n_units.to_string(),
            String::new(),
        ],
        None => {
            let mut v = vec![String::new(); 7];
            v.push(err.clone().unwrap_or_default());
            v
        }
    }
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["SYSTEM"];
    header.extend(TABLE_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let mut cells = vec![r.system.clone()];
        cells.extend(report_cells(&r.report, &r.error));
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    FailCost,
    NStates,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c_f" | "fail_cost" => Ok(SweepParam::FailCost),
            "n_states" | "states" => Ok(SweepParam::NStates),
            other => Err(Error::invalid(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Runs `system` once per value of `param`, each on a fresh workbench.
pub fn sweep(
    data: &RunToFailureDataset,
    base: &ExperimentConfig,
    system: FeatureMode,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::FailCost => cfg.env.c_f = v,
            SweepParam::NStates => {
                if v < 2.0 || v.fract() != 0.0 {
                    return Err(Error::invalid(format!(
                        "state count {v} is not an integer >= 2"
                    )));
                }
                cfg.n_states = v as usize;
            }
        }
        let out = Workbench::prepare(data, &cfg).and_then(|mut wb| run_system(&mut wb, system));
        rows.push(match out {
            Ok(r) => SweepRow {
                param,
                value: v,
                report: Some(r.evaluation.report),
                error: None,
            },
            Err(e) => SweepRow {
                param,
                value: v,
                report: None,
                error: Some(format!("{}: {e}", e.class())),
            },
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["PARAMETER", "VALUE"];
    header.extend(TABLE_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let name = match r.param {
            SweepParam::FailCost => "FAIL COST",
            SweepParam::NStates => "HMM/IOHMM STATES",
        };
        let mut cells = vec![name.to_string(), r.value.to_string()];
        cells.extend(report_cells(&r.report, &r.error));
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}

/// Failure states from an annotation, as used by the RUL and expert helpers.
pub fn failure_set(ann: &StateAnnotation) -> BTreeSet<usize> {
    ann.failure_states.clone()
}

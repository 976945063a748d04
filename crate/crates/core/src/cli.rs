//! Command-line front end.
//!
//! Every subcommand works inside a run directory (`--out`, default `run`).
//! The first command that needs data splits, normalizes and discretizes it
//! and stores `train.csv`, `test.csv` and `preprocessing.json`; later
//! commands reuse those files, so every stage sees the same split. The
//! resolved [`RunConfig`] is written to `config.json` after each command
//! and can be passed back with `--config` to repeat a run.
//!
//! Failures print one line, `error: <Class>: <message>`, and exit with 1.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agent::{
    audit_gate_log, build_expert, pretrain_bc, train_dqn, write_gate_csv, ExpertMode, FeatureMode,
    Gate, GreedyPolicy, PreparedData, SrlaPolicy,
};
use crate::approximator::{BcConfig, NetworkParams};
use crate::data::{
    generate_synthetic, load_run_to_failure, write_csv, DatasetFormat, RunToFailureDataset,
    SyntheticConfig,
};
use crate::decoding::{annotate, decode_paths, write_state_csv, StateAnnotation};
use crate::doc;
use crate::env::write_trace_csv;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_policy, run_comparison, sweep, write_comparison_csv, write_sweep_csv, ComparisonRow,
    Evaluation, ExperimentConfig, Preprocessing, SweepParam, Workbench,
};
use crate::interpret::{
    failure_mode_report, importance_report, write_failure_mode_csv, write_importance_csv,
    ClassifierConfig,
};
use crate::iohmm::{fit_em, fit_hmm, EmConfig, IohmmParams, ModelDocument};
use crate::rul::{rul_trend, write_rul_csv};

pub const RUN_CONFIG_KIND: &str = "run-config";
pub const RUN_CONFIG_VERSION: u32 = 1;

/// Everything a command needs; frozen into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub format: DatasetFormat,
    /// Synthetic generator document used instead of a dataset file.
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
    pub system: FeatureMode,
    pub experiment: ExperimentConfig,
    /// Cycles between RUL estimates in `rul`.
    pub rul_stride: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            format: DatasetFormat::Csv,
            synthetic: None,
            system: FeatureMode::SrlaRaw,
            experiment: ExperimentConfig::default(),
            rul_stride: 10,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn save(&self, path: &Path) -> Result<()> {
        doc::write(path, RUN_CONFIG_KIND, RUN_CONFIG_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPrerequisite(format!(
                "config file {} not found",
                path.display()
            )));
        }
        doc::read(path, RUN_CONFIG_KIND, RUN_CONFIG_VERSION)
    }

    /// Raw dataset named by the config (file or synthetic generator).
    pub fn load_dataset(&self) -> Result<RunToFailureDataset> {
        match (&self.synthetic, &self.dataset) {
            (Some(p), _) => {
                Ok(generate_synthetic(&SyntheticConfig::load(p)?, self.experiment.seed)?.0)
            }
            (None, Some(p)) => load_run_to_failure(p, self.format),
            (None, None) => Err(Error::MissingPrerequisite(
                "no dataset configured; pass --data or --synthetic".into(),
            )),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "srla",
    version,
    about = "IOHMM-gated deep Q-learning for predictive maintenance"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each one overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Run directory for all artifacts.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Start from a saved run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run-to-failure dataset file.
    #[arg(long, alias = "dataset")]
    pub data: Option<PathBuf>,
    /// `csv` or `cmapss`.
    #[arg(long)]
    pub format: Option<DatasetFormat>,
    /// Synthetic generator document to sample the dataset from.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// System: 1, 2, 3, 4 or srla.
    #[arg(long)]
    pub system: Option<FeatureMode>,
    /// Hidden states of the IOHMM / HMM.
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub c_r: Option<f64>,
    #[arg(long)]
    pub c_f: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Comma-separated sensor columns to keep.
    #[arg(long, value_delimiter = ',')]
    pub sensors: Option<Vec<String>>,
    /// Number of operating regimes (inferred when omitted).
    #[arg(long)]
    pub regimes: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, normalize and discretize a dataset into the run directory.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the IOHMM (and optionally the single-input HMM baseline) by EM.
    FitIohmm {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Also fit the single-input HMM used by system 3.
        #[arg(long)]
        hmm: bool,
    },
    /// Decode failure states, condition bands and the specialized set.
    Decode {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte-Carlo remaining-useful-life trends for the test units.
    Rul {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Sensor importance per decoded state and per failure state.
    Importance {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV with `feature,symbol,description` rows.
        #[arg(long)]
        descriptions: Option<PathBuf>,
    },
    /// Behavior-clone the expert into the initial Q-network.
    PretrainBc {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Oracle expert replaces this many cycles before failure.
        #[arg(long)]
        margin: Option<usize>,
        #[arg(long)]
        bc_epochs: Option<usize>,
    },
    /// Q-learning for the configured system.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: u64,
        /// Train SRLA from a fresh network instead of the cloned one.
        #[arg(long)]
        no_bc: bool,
    },
    /// Evaluate the trained network of the configured system on the test split.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train and evaluate several systems on one split.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,srla")]
        systems: Vec<FeatureMode>,
    },
    /// Repeat one system over values of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seed: u64,
        /// `c_f` or `n_states`.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::FitIohmm { .. } => "fit-iohmm",
            Command::Decode { .. } => "decode",
            Command::Rul { .. } => "rul",
            Command::Importance { .. } => "importance",
            Command::PretrainBc { .. } => "pretrain-bc",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Compare { .. } => "compare",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Ingest { common, .. }
            | Command::FitIohmm { common, .. }
            | Command::Decode { common }
            | Command::Rul { common, .. }
            | Command::Importance { common, .. }
            | Command::PretrainBc { common, .. }
            | Command::Train { common, .. }
            | Command::Evaluate { common }
            | Command::Compare { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Ingest { seed, .. }
            | Command::FitIohmm { seed, .. }
            | Command::Rul { seed, .. }
            | Command::PretrainBc { seed, .. } => *seed,
            Command::Train { seed, .. }
            | Command::Compare { seed, .. }
            | Command::Sweep { seed, .. } => Some(*seed),
            Command::Decode { .. } | Command::Importance { .. } | Command::Evaluate { .. } => None,
        }
    }
}

/// Base config (explicit file, else the run directory's frozen copy, else
/// defaults) with command-line overrides applied.
pub fn resolve_config(cmd: &Command) -> Result<RunConfig> {
    let c = cmd.common();
    let mut rc = match (&c.config, &c.out) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(out)) if out.join(CONFIG_FILE).exists() => {
            RunConfig::load(&out.join(CONFIG_FILE))?
        }
        (None, None) if Path::new("run").join(CONFIG_FILE).exists() => {
            RunConfig::load(&Path::new("run").join(CONFIG_FILE))?
        }
        _ => RunConfig::default(),
    };
    if let Some(o) = &c.out {
        rc.out_dir = o.clone();
    }
    if let Some(d) = &c.data {
        rc.dataset = Some(d.clone());
        rc.synthetic = None;
    }
    if let Some(s) = &c.synthetic {
        rc.synthetic = Some(s.clone());
    }
    if let Some(f) = c.format {
        rc.format = f;
    }
    if let Some(s) = c.system {
        rc.system = s;
    }
    let e = &mut rc.experiment;
    if let Some(n) = c.states {
        e.n_states = n;
    }
    if let Some(v) = c.c_r {
        e.env.c_r = v;
    }
    if let Some(v) = c.c_f {
        e.env.c_f = v;
    }
    if let Some(v) = c.episodes {
        e.agent.max_episodes = v;
    }
    if let Some(v) = c.lr {
        e.agent.lr = v;
    }
    if let Some(v) = c.train_ratio {
        e.prep.train_ratio = v;
    }
    if let Some(v) = &c.sensors {
        e.prep.sensors = Some(v.clone());
    }
    if let Some(v) = c.regimes {
        e.prep.n_regimes = Some(v);
    }
    if let Some(v) = c.restarts {
        e.em.n_restarts = v;
    }
    if let Some(s) = cmd.seed() {
        e.seed = s;
    }
    match cmd {
        Command::Rul {
            stride, rollouts, ..
        } => {
            if let Some(s) = stride {
                rc.rul_stride = *s;
            }
            if let Some(r) = rollouts {
                rc.experiment.rul.n_rollouts = *r;
            }
        }
        Command::PretrainBc {
            margin, bc_epochs, ..
        } => {
            if let Some(m) = margin {
                rc.experiment.expert = ExpertMode::OracleMargin { margin: *m };
            }
            if let Some(n) = bc_epochs {
                rc.experiment.bc.epochs = *n;
            }
        }
        _ => {}
    }
    rc.experiment.rul.seed = rc.experiment.seed;
    Ok(rc)
}

const CONFIG_FILE: &str = "config.json";
const TRAIN_FILE: &str = "train.csv";
const TEST_FILE: &str = "test.csv";
const PREP_FILE: &str = "preprocessing.json";
const MODEL_FILE: &str = "model.json";
const HMM_FILE: &str = "hmm.json";
const ANNOTATION_FILE: &str = "annotation.json";
const BC_FILE: &str = "bc_network.json";

fn network_file(mode: FeatureMode) -> String {
    format!("network_{mode}.json")
}

/// Runs one parsed command and returns the lines to print.
pub fn execute(cmd: &Command) -> Result<Vec<String>> {
    let rc = resolve_config(cmd)?;
    fs::create_dir_all(&rc.out_dir)?;
    let out = rc.out_dir.clone();
    let mut lines = Vec::new();
    match cmd {
        Command::Ingest { .. } => {
            let wb = ingest(&rc)?;
            lines.push(format!(
                "split {} training / {} test units, {} sensors, {} input symbols",
                wb.train.units.len(),
                wb.test.units.len(),
                wb.train.n_sensors(),
                wb.discretization.as_ref().map_or(1, |d| d.n_inputs())
            ));
        }
        Command::FitIohmm { hmm, .. } => {
            let wb = workbench(&rc)?;
            let em = EmConfig {
                seed: rc.experiment.seed,
                ..rc.experiment.em.clone()
            };
            let fit = fit_em(&wb.train, rc.experiment.n_states, &em)?;
            let prep = wb.preprocessing();
            let doc = ModelDocument {
                params: fit.params.clone(),
                sensor_names: wb.train.sensor_names.clone(),
                normalizer: Some(prep.normalizer.clone()),
                discretization: prep.discretization.clone(),
                training: Some(em.clone()),
                log_likelihood_trace: fit.trace.clone(),
            };
            doc.save(&out.join(MODEL_FILE))?;
            write_trace(&out.join("loglik_trace.csv"), &fit.trace)?;
            lines.push(format!(
                "IOHMM: {} states, {} inputs, {} epochs, log-likelihood {:.4}, converged {}",
                fit.params.n_states,
                fit.params.n_inputs,
                fit.trace.len(),
                fit.final_log_likelihood(),
                fit.converged
            ));
            if *hmm {
                let h = fit_hmm(&wb.train, rc.experiment.n_states, &em)?;
                let ll = h.final_log_likelihood();
                ModelDocument {
                    params: h.params,
                    log_likelihood_trace: h.trace.clone(),
                    training: Some(em),
                    ..doc
                }
                .save(&out.join(HMM_FILE))?;
                lines.push(format!("HMM: log-likelihood {ll:.4}"));
            }
        }
        Command::Decode { .. } => {
            let wb = workbench(&rc)?;
            let model = load_model(&out, MODEL_FILE)?;
            let ann = annotate(&model, &wb.train, &rc.experiment.decoding)?;
            ann.save(&out.join(ANNOTATION_FILE))?;
            let train_paths = decode_paths(&model, &wb.train)?;
            write_state_csv(
                &out.join("states_train.csv"),
                &wb.train,
                &train_paths,
                &ann.condition_map,
            )?;
            let test_paths = decode_paths(&model, &wb.test)?;
            write_state_csv(
                &out.join("states_test.csv"),
                &wb.test,
                &test_paths,
                &ann.condition_map,
            )?;
            lines.push(format!("failure states {:?}", ann.failure_states));
            lines.push(format!("specialized set {:?}", ann.specialized_states));
            for (label, states) in ann.condition_map.describe() {
                lines.push(format!("{label}: {states}"));
            }
        }
        Command::Rul { .. } => {
            let wb = workbench(&rc)?;
            let model = load_model(&out, MODEL_FILE)?;
            let ann = load_or_annotate(&out, &model, &wb, &rc)?;
            let mut rows = Vec::new();
            for u in &wb.test.units {
                for est in rul_trend(
                    &model,
                    u,
                    rc.rul_stride,
                    &ann.failure_states,
                    &rc.experiment.rul,
                )? {
                    rows.push((u.unit_id, est));
                }
            }
            write_rul_csv(&out.join("rul.csv"), &rows)?;
            lines.push(format!(
                "{} RUL estimates over {} test units",
                rows.len(),
                wb.test.units.len()
            ));
        }
        Command::Importance { descriptions, .. } => {
            let wb = workbench(&rc)?;
            let model = load_model(&out, MODEL_FILE)?;
            let ann = load_or_annotate(&out, &model, &wb, &rc)?;
            let cfg = ClassifierConfig::default();
            let (_, report) = importance_report(&model, &wb.train, &cfg)?;
            write_importance_csv(&out.join("importance.csv"), &report)?;
            let fm = failure_mode_report(
                &model,
                &wb.train,
                &ann.failure_states,
                descriptions.as_deref(),
                &cfg,
            )?;
            write_failure_mode_csv(&out.join("failure_modes.csv"), &fm)?;
            lines.push(format!(
                "state classifier training accuracy {:.3}",
                report.train_accuracy
            ));
            lines.extend(fm.warnings.iter().map(|w| format!("warning: {w}")));
        }
        Command::PretrainBc { .. } => {
            let mut wb = workbench(&rc)?;
            let ctx = system_context(&out, &mut wb, &rc)?;
            let actions = rc.experiment.env.actions();
            let ann = ctx.annotation.as_ref();
            let expert = build_expert(
                rc.experiment.expert,
                ctx.model.as_ref(),
                ann.map(|a| &a.failure_states),
                &rc.experiment.rul,
            )?;
            let gate = ann.map(Gate::from_annotation);
            let init = NetworkParams::init(ctx.train.dim, actions.len(), rc.experiment.seed)?;
            let bc = BcConfig {
                seed: rc.experiment.seed,
                ..rc.experiment.bc
            };
            let rep = pretrain_bc(
                &expert,
                &ctx.train,
                gate.as_ref(),
                &init,
                &bc,
                Some(&ctx.test),
            )?;
            rep.params.save(&out.join(BC_FILE), Some(&bc.train))?;
            write_trace(&out.join("bc_loss.csv"), &rep.loss_trace)?;
            lines.push(format!(
                "cloned {} pairs: training agreement {:.3}, held-out agreement {}",
                rep.n_pairs,
                rep.train_agreement,
                rep.holdout_agreement
                    .map_or("n/a".to_string(), |a| format!("{a:.3}"))
            ));
        }
        Command::Train { no_bc, .. } => {
            let mut wb = workbench(&rc)?;
            let ctx = system_context(&out, &mut wb, &rc)?;
            let init = if rc.system == FeatureMode::SrlaRaw && rc.experiment.srla_bc && !no_bc {
                let p = out.join(BC_FILE);
                if !p.exists() {
                    return Err(Error::MissingPrerequisite(format!(
                        "{} not found; run `srla pretrain-bc` first or pass --no-bc",
                        p.display()
                    )));
                }
                Some(NetworkParams::load(&p)?)
            } else {
                None
            };
            let gate = ctx.annotation.as_ref().map(Gate::from_annotation);
            let (net, log) = train_dqn(
                &ctx.train,
                &rc.experiment.env,
                &rc.experiment.agent,
                init,
                gate.as_ref(),
                rc.experiment.seed,
            )?;
            net.save(
                &out.join(network_file(rc.system)),
                Some(&rc.experiment.agent.train_config()),
            )?;
            log.write_csv(&out.join(format!("training_log_{}.csv", rc.system)))?;
            lines.push(format!(
                "{}: {} episodes, {} gradient steps, converged {}",
                rc.system.system_name(),
                log.records.len(),
                log.gradient_steps,
                log.converged
            ));
        }
        Command::Evaluate { .. } => {
            let mut wb = workbench(&rc)?;
            let ctx = system_context(&out, &mut wb, &rc)?;
            let p = out.join(network_file(rc.system));
            if !p.exists() {
                return Err(Error::MissingPrerequisite(format!(
                    "{} not found; run `srla train --system {}` first",
                    p.display(),
                    rc.system
                )));
            }
            let net = NetworkParams::load(&p)?;
            let actions = rc.experiment.env.actions();
            let gamma = rc.experiment.agent.gamma;
            let ev: Evaluation = match (&ctx.annotation, &ctx.model) {
                (Some(ann), Some(model)) => {
                    let gate = Gate::from_annotation(ann);
                    let policy = SrlaPolicy::new(model.clone(), gate.clone(), net, actions)?;
                    let ev = evaluate_policy(&ctx.test, &rc.experiment.env, &policy, gamma)?;
                    write_gate_csv(&out.join("gate_log.csv"), &ev.gate_log)?;
                    let bad = audit_gate_log(&ev.gate_log, &gate);
                    lines.push(format!(
                        "gate audit: {} violations in {} records",
                        bad.len(),
                        ev.gate_log.len()
                    ));
                    ev
                }
                _ => evaluate_policy(
                    &ctx.test,
                    &rc.experiment.env,
                    &GreedyPolicy { q: &net, actions },
                    gamma,
                )?,
            };
            write_trace_csv(&out.join(format!("trace_{}.csv", rc.system)), &ev.traces)?;
            let row = ComparisonRow {
                system: rc.system.system_name().to_string(),
                report: Some(ev.report),
                error: None,
            };
            write_comparison_csv(&out.join(format!("metrics_{}.csv", rc.system)), &[row])?;
            let m = ev.report;
            lines.push(format!(
                "{}: Q* {:.4}, IMC {:.4}, CMC {:.4}, IMC/Q* {:.3}, failure {:.1}%, remaining {:.2}",
                rc.system.system_name(),
                m.q_star_avg,
                m.imc,
                m.cmc,
                m.imc_over_q,
                m.failure_pct,
                m.avg_remaining_cycles
            ));
        }
        Command::Compare { systems, .. } => {
            let mut wb = workbench(&rc)?;
            if out.join(MODEL_FILE).exists() {
                wb.set_iohmm(load_model(&out, MODEL_FILE)?);
            }
            if out.join(HMM_FILE).exists() {
                wb.set_hmm(load_model(&out, HMM_FILE)?)?;
            }
            let rows = run_comparison(&mut wb, systems);
            write_comparison_csv(&out.join("comparison.csv"), &rows)?;
            lines.extend(rows.iter().map(summary_line));
        }
        Command::Sweep { param, values, .. } => {
            let data = rc.load_dataset()?;
            let rows = sweep(&data, &rc.experiment, rc.system, *param, values)?;
            write_sweep_csv(&out.join("sweep.csv"), &rows)?;
            for r in &rows {
                let row = ComparisonRow {
                    system: format!("{:?} = {}", r.param, r.value),
                    report: r.report,
                    error: r.error.clone(),
                };
                lines.push(summary_line(&row));
            }
        }
    }
    rc.save(&out.join(CONFIG_FILE))?;
    lines.push(format!(
        "{} finished; outputs in {}",
        cmd.name(),
        out.display()
    ));
    Ok(lines)
}

fn summary_line(r: &ComparisonRow) -> String {
    match (&r.report, &r.error) {
        (Some(m), _) => format!(
            "{}: Q* {:.4}, IMC/Q* {:.3}, failure {:.1}%, remaining {:.2}",
            r.system, m.q_star_avg, m.imc_over_q, m.failure_pct, m.avg_remaining_cycles
        ),
        (None, e) => format!("{}: failed ({})", r.system, e.clone().unwrap_or_default()),
    }
}

fn write_trace(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Prepares the split from the configured dataset and stores it.
fn ingest(rc: &RunConfig) -> Result<Workbench> {
    let data = rc.load_dataset()?;
    let wb = Workbench::prepare(&data, &rc.experiment)?;
    write_csv(&wb.train, &rc.out_dir.join(TRAIN_FILE))?;
    write_csv(&wb.test, &rc.out_dir.join(TEST_FILE))?;
    wb.preprocessing().save(&rc.out_dir.join(PREP_FILE))?;
    Ok(wb)
}

/// The stored split when present, otherwise a fresh ingest.
fn workbench(rc: &RunConfig) -> Result<Workbench> {
    let dir = &rc.out_dir;
    if [TRAIN_FILE, TEST_FILE, PREP_FILE]
        .iter()
        .all(|f| dir.join(f).exists())
    {
        let train = load_run_to_failure(&dir.join(TRAIN_FILE), DatasetFormat::Csv)?;
        let test = load_run_to_failure(&dir.join(TEST_FILE), DatasetFormat::Csv)?;
        let prep = Preprocessing::load(&dir.join(PREP_FILE))?;
        Workbench::from_split(&rc.experiment, train, test, prep)
    } else {
        ingest(rc)
    }
}

fn load_model(dir: &Path, file: &str) -> Result<IohmmParams> {
    let p = dir.join(file);
    if !p.exists() {
        let hint = if file == HMM_FILE {
            "fit-iohmm --hmm"
        } else {
            "fit-iohmm"
        };
        return Err(Error::MissingPrerequisite(format!(
            "{} not found; run `srla {hint}` first",
            p.display()
        )));
    }
    Ok(ModelDocument::load(&p)?.params)
}

fn load_or_annotate(
    dir: &Path,
    model: &IohmmParams,
    wb: &Workbench,
    rc: &RunConfig,
) -> Result<StateAnnotation> {
    let p = dir.join(ANNOTATION_FILE);
    if p.exists() {
        let a = StateAnnotation::load(&p)?;
        if a.specialized_states.iter().any(|&s| s >= model.n_states) {
            return Err(Error::invalid(
                "annotation.json does not match model.json; rerun `srla decode`",
            ));
        }
        Ok(a)
    } else {
        annotate(model, &wb.train, &rc.experiment.decoding)
    }
}

/// Prepared features plus the model and annotation the system needs.
struct SystemContext {
    train: PreparedData,
    test: PreparedData,
    model: Option<IohmmParams>,
    annotation: Option<StateAnnotation>,
}

fn system_context(dir: &Path, wb: &mut Workbench, rc: &RunConfig) -> Result<SystemContext> {
    let mut model = None;
    let mut annotation = None;
    match rc.system {
        FeatureMode::Raw | FeatureMode::RawPlusOps => {}
        FeatureMode::HmmGamma => wb.set_hmm(load_model(dir, HMM_FILE)?)?,
        FeatureMode::IohmmGamma => wb.set_iohmm(load_model(dir, MODEL_FILE)?),
        FeatureMode::SrlaRaw => {
            let m = load_model(dir, MODEL_FILE)?;
            wb.set_iohmm(m.clone());
            let ann = load_or_annotate(dir, &m, wb, rc)?;
            wb.set_annotation(ann.clone())?;
            model = Some(m);
            annotation = Some(ann);
        }
    }
    let pipe = wb.pipeline(rc.system)?;
    Ok(SystemContext {
        train: pipe.prepare(&wb.train)?,
        test: pipe.prepare(&wb.test)?,
        model,
        annotation,
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let detail: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!(
                "error: InvalidInput: {}",
                detail.join(" ").trim_start_matches("error: ")
            );
            return 1;
        }
    };
    match execute(&cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.class(), e.to_string().replace('\n', " "));
            1
        }
    }
}

//! Predictive maintenance on run-to-failure data with a hierarchy of two
//! models: an input-output hidden Markov model tracks the degradation state
//! of each unit under its operating conditions, and a Q-learning agent
//! decides when to replace, consulted only in the states close to failure.
//!
//! The pipeline, in module order:
//!
//! * [`data`] loads or generates run-to-failure fleets, splits them by unit,
//!   discretizes operating conditions and normalizes sensors.
//! * [`iohmm`] holds the model, exact inference (forward-backward, Viterbi,
//!   online filtering) and EM training.
//! * [`decoding`] names failure states, maps states to health bands and
//!   builds the specialized set where the agent acts.
//! * [`rul`] estimates remaining useful life by Monte-Carlo rollouts.
//! * [`interpret`] ranks sensors per state and per failure mode.
//! * [`env`], [`approximator`] and [`agent`] are the maintenance MDP, the
//!   Q-network and the learning agents (baselines and the gated one).
//! * [`eval`] computes cost metrics, system comparisons and sweeps; [`cli`]
//!   wraps all of it behind the `srla` binary.
//!
//! ```no_run
//! use srla::agent::FeatureMode;
//! use srla::data::{generate_synthetic, DegradationChain};
//! use srla::eval::{run_system, ExperimentConfig, Workbench};
//!
//! let chain = DegradationChain::uniform(10, 0.05, 30).build()?;
//! let (fleet, _) = generate_synthetic(&chain, 7)?;
//! let mut wb = Workbench::prepare(&fleet, &ExperimentConfig { seed: 7, ..Default::default() })?;
//! let run = run_system(&mut wb, FeatureMode::SrlaRaw)?;
//! println!("failure rate {:.1}%", run.evaluation.report.failure_pct);
//! # Ok::<(), srla::Error>(())
//! ```

pub mod agent;
pub mod approximator;
pub mod cli;
pub mod data;
pub mod decoding;
pub mod doc;
pub mod env;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod iohmm;
pub mod rul;
pub mod stats;

pub use error::{Error, Result};

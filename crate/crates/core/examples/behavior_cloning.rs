//! Clones a rule-based expert into the Q-network: the oracle that replaces
//! a fixed number of cycles before failure, and the RUL-threshold expert
//! that only sees the decoded state.
//!
//! ```bash
//! cargo run --release --example behavior_cloning
//! ```

use std::collections::BTreeSet;

use srla::agent::{build_expert, pretrain_bc, ExpertMode, FeatureMode, FeaturePipeline, Gate};
use srla::approximator::{BcConfig, NetworkParams, TrainConfig};
use srla::data::{generate_synthetic, split, DegradationChain};
use srla::decoding::{annotate, DecodingConfig};
use srla::iohmm::IohmmParams;
use srla::rul::RulConfig;

pub fn run_example() -> srla::Result<()> {
    let cfg = DegradationChain::uniform(6, 0.08, 20).build()?;
    let (data, _) = generate_synthetic(&cfg, 6)?;
    let (train, test) = split(&data, 0.75, 6)?;
    let model = IohmmParams::from_synthetic(&cfg)?;
    let ann = annotate(&model, &train, &DecodingConfig::default())?;
    let gate = Gate::from_annotation(&ann);
    let pipe = FeaturePipeline::new(FeatureMode::SrlaRaw, Some(model.clone()))?;
    let (train, test) = (pipe.prepare(&train)?, pipe.prepare(&test)?);
    let bc_config = BcConfig {
        epochs: 300,
        train: TrainConfig {
            lr: 1e-2,
            clip_norm: None,
        },
        ..BcConfig::default()
    };
    let init = NetworkParams::init(train.dim, 2, 6)?;
    let failure: BTreeSet<usize> = ann.failure_states.clone();
    let rul = RulConfig {
        n_rollouts: 40,
        ..RulConfig::default()
    };

    for mode in [
        ExpertMode::OracleMargin { margin: 10 },
        ExpertMode::RulThreshold { margin: 10.0 },
    ] {
        let expert = build_expert(mode, Some(&model), Some(&failure), &rul)?;
        let rep = pretrain_bc(&expert, &train, Some(&gate), &init, &bc_config, Some(&test))?;
        println!(
            "{mode:?}: {} gated pairs, agreement train {:.3}, held-out {:?}, final loss {:.4}",
            rep.n_pairs,
            rep.train_agreement,
            rep.holdout_agreement,
            rep.loss_trace.last().unwrap_or(&f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

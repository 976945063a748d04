//! Runs a gated agent online: each new cycle is pushed through the decoder
//! and the network is consulted only inside the specialized set. The
//! network here is a behavior-cloned RUL-threshold expert; `end_to_end`
//! adds Q-learning.
//!
//! ```bash
//! cargo run --release --example streaming_agent
//! ```

use srla::agent::{
    build_expert, pretrain_bc, ExpertMode, FeatureMode, FeaturePipeline, Gate, SrlaPolicy,
};
use srla::approximator::{BcConfig, NetworkParams, TrainConfig};
use srla::data::{generate_synthetic, split, DegradationChain};
use srla::decoding::{annotate, DecodingConfig};
use srla::env::{Action, EnvConfig};
use srla::iohmm::IohmmParams;
use srla::rul::RulConfig;
use srla::stats;

pub fn run_example() -> srla::Result<()> {
    let cfg = DegradationChain::uniform(6, 0.08, 16).build()?;
    let (data, _) = generate_synthetic(&cfg, 9)?;
    let (train, test) = split(&data, 0.75, 9)?;
    let model = IohmmParams::from_synthetic(&cfg)?;
    let ann = annotate(&model, &train, &DecodingConfig::default())?;
    let gate = Gate::from_annotation(&ann);

    let prepared =
        FeaturePipeline::new(FeatureMode::SrlaRaw, Some(model.clone()))?.prepare(&train)?;
    let expert = build_expert(
        ExpertMode::RulThreshold { margin: 12.0 },
        Some(&model),
        Some(&ann.failure_states),
        &RulConfig {
            n_rollouts: 40,
            ..RulConfig::default()
        },
    )?;
    let bc_config = BcConfig {
        epochs: 300,
        train: TrainConfig {
            lr: 1e-2,
            clip_norm: None,
        },
        ..BcConfig::default()
    };
    let init = NetworkParams::init(prepared.dim, 2, 9)?;
    let bc = pretrain_bc(&expert, &prepared, Some(&gate), &init, &bc_config, None)?;

    let env = EnvConfig::default();
    let policy = SrlaPolicy::new(model.clone(), gate, bc.params, env.actions())?;
    let mut rng = stats::seeded(9);
    for unit in &test.units {
        let inputs = model.unit_inputs(unit)?;
        let mut session = policy.session();
        let mut consulted = 0;
        let mut stop = None;
        for (t, (u, y)) in inputs.iter().zip(&unit.sensors).enumerate() {
            let (a, info) = session.step(*u, y, 0.0, &mut rng)?;
            consulted += usize::from(info.agent_action.is_some());
            if a == Action::Replace {
                stop = Some((t + 1, info.p_fail));
                break;
            }
        }
        match stop {
            Some((t, p)) => println!(
                "unit {:>2}: replaced at cycle {t} of {} (p_fail {p:.2}), agent consulted on {consulted} cycles",
                unit.unit_id,
                unit.len()
            ),
            None => println!("unit {:>2}: ran to failure at cycle {}", unit.unit_id, unit.len()),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

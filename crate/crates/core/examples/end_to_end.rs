//! Full SRLA pipeline on a synthetic fleet: fit the IOHMM, decode the
//! specialized states, clone an oracle expert, refine with gated
//! Q-learning and evaluate on held-out units.
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use srla::agent::{audit_gate_log, FeatureMode, Gate};
use srla::data::{generate_synthetic, DegradationChain};
use srla::eval::{run_system, ExperimentConfig, Workbench};

/// Ten-state chain: slow wear in the first seven states, then a fast
/// collapse through states 7 and 8 into failure.
pub fn fleet_chain(n_units: usize) -> DegradationChain {
    let mut forward = vec![0.05; 7];
    forward.extend([0.35, 0.35]);
    DegradationChain {
        forward,
        n_inputs: 2,
        input_speed: vec![0.8, 1.2],
        regime_offset: 0.5,
        ..DegradationChain::uniform(10, 0.05, n_units)
    }
}

pub fn experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    }
}

pub fn run_example() -> srla::Result<()> {
    let chain = fleet_chain(30).build()?;
    let (data, _) = generate_synthetic(&chain, 7)?;
    let cfg = experiment(7);
    let mut wb = Workbench::prepare(&data, &cfg)?;
    let run = run_system(&mut wb, FeatureMode::SrlaRaw)?;
    let ann = wb.annotation()?.clone();
    println!(
        "failure states {:?}, X_s {:?}",
        ann.failure_states, ann.specialized_states
    );
    if let Some((train, holdout)) = run.bc_agreement {
        println!("behavior cloning agreement: train {train:.3}, held-out {holdout:?}");
    }
    println!(
        "{} episodes, converged {}",
        run.training.records.len(),
        run.training.converged
    );
    let m = run.evaluation.report;
    println!(
        "Q* {:.4}  IMC {:.4}  CMC {:.4}  IMC/Q* {:.3}  failure {:.1}%  remaining {:.2}",
        m.q_star_avg, m.imc, m.cmc, m.imc_over_q, m.failure_pct, m.avg_remaining_cycles
    );
    let violations = audit_gate_log(&run.evaluation.gate_log, &Gate::from_annotation(&ann));
    println!("gate audit: {} violations", violations.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

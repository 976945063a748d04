//! Trains the baseline systems and SRLA on one split, prints the comparison
//! table, then sweeps the failure cost for SRLA.
//!
//! ```bash
//! cargo run --release --example compare_systems
//! ```

use srla::agent::FeatureMode;
use srla::data::{generate_synthetic, DegradationChain};
use srla::eval::{run_comparison, sweep, ExperimentConfig, SweepParam, Workbench};

pub fn run_example() -> srla::Result<()> {
    let mut forward = vec![0.05; 7];
    forward.extend([0.35, 0.35]);
    let chain = DegradationChain {
        forward,
        n_inputs: 2,
        input_speed: vec![0.8, 1.2],
        regime_offset: 0.5,
        ..DegradationChain::uniform(10, 0.05, 30)
    };
    let (data, _) = generate_synthetic(&chain.build()?, 7)?;
    let mut cfg = ExperimentConfig {
        seed: 7,
        ..ExperimentConfig::default()
    };
    // A fifth of the default episode budget keeps the example to a couple of minutes.
    cfg.agent.max_episodes = 2000;

    let mut wb = Workbench::prepare(&data, &cfg)?;
    println!(
        "{:<9} {:>8} {:>8} {:>8} {:>8} {:>9}",
        "system", "Q*", "IMC", "CMC", "fail %", "remaining"
    );
    for row in run_comparison(&mut wb, &FeatureMode::ALL) {
        match row.report {
            Some(m) => println!(
                "{:<9} {:>8.4} {:>8.4} {:>8.4} {:>8.1} {:>9.2}",
                row.system, m.q_star_avg, m.imc, m.cmc, m.failure_pct, m.avg_remaining_cycles
            ),
            None => println!("{:<9} error: {}", row.system, row.error.unwrap_or_default()),
        }
    }

    for row in sweep(
        &data,
        &cfg,
        FeatureMode::SrlaRaw,
        SweepParam::FailCost,
        &[500.0, 2000.0],
    )? {
        if let Some(m) = row.report {
            println!(
                "c_f = {:>6}: IMC/Q* {:.3}, failure {:.1}%",
                row.value, m.imc_over_q, m.failure_pct
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

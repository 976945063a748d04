//! Monte-Carlo remaining-useful-life estimates along one unit's life, next
//! to the unit's actual remaining cycles.
//!
//! ```bash
//! cargo run --example rul_trend
//! ```

use std::collections::BTreeSet;

use srla::data::{generate_synthetic, DegradationChain};
use srla::iohmm::IohmmParams;
use srla::rul::{rul_trend, RulConfig};

pub fn run_example() -> srla::Result<()> {
    let cfg = DegradationChain::uniform(6, 0.06, 4).build()?;
    let (data, _) = generate_synthetic(&cfg, 5)?;
    let model = IohmmParams::from_synthetic(&cfg)?;
    let failure: BTreeSet<usize> = [cfg.failure_state].into();
    let unit = &data.units[0];
    let rc = RulConfig {
        n_rollouts: 200,
        ..RulConfig::default()
    };
    println!("cycle  actual  estimate  (std error)");
    for e in rul_trend(&model, unit, 10, &failure, &rc)? {
        println!(
            "{:>5} {:>7} {:>9.1}  ({:.1})",
            e.cycle,
            unit.len() - e.cycle,
            e.mean_rul,
            e.std_error()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

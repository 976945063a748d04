//! Explains decoded states through the sensors: a multinomial classifier
//! from sensor rows to Viterbi states, and a per-failure-state ranking of
//! the sensors that separate failure from the healthy states.
//!
//! ```bash
//! cargo run --example sensor_importance
//! ```

use srla::data::{generate_synthetic, DegradationChain};
use srla::decoding::{annotate, DecodingConfig};
use srla::interpret::{failure_mode_report, importance_report, ClassifierConfig};
use srla::iohmm::IohmmParams;

pub fn run_example() -> srla::Result<()> {
    let cfg = DegradationChain::uniform(5, 0.1, 20).build()?;
    let (data, _) = generate_synthetic(&cfg, 4)?;
    let model = IohmmParams::from_synthetic(&cfg)?;
    let clf_cfg = ClassifierConfig::default();

    let (_, report) = importance_report(&model, &data, &clf_cfg)?;
    println!(
        "state classifier training accuracy {:.3}",
        report.train_accuracy
    );
    for (state, ranking) in &report.per_state {
        let top: Vec<String> = ranking
            .iter()
            .take(2)
            .map(|(f, c)| format!("{f} ({c:+.2})"))
            .collect();
        println!("  state {state}: {}", top.join(", "));
    }

    let ann = annotate(&model, &data, &DecodingConfig::default())?;
    let modes = failure_mode_report(&model, &data, &ann.failure_states, None, &clf_cfg)?;
    for e in &modes.entries {
        let top = &e.ranking[0];
        println!(
            "failure state {} ({} cycles): strongest sensor {} ({:+.2})",
            e.state, e.n_cycles, top.feature, top.coefficient
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

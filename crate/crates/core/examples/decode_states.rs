//! Decodes hidden states: failure states from the training paths, condition
//! bands by life fraction, the specialized set near failure, and the online
//! decoder's view of one unit cycle by cycle.
//!
//! ```bash
//! cargo run --example decode_states
//! ```

use srla::data::{generate_synthetic, DegradationChain};
use srla::decoding::{annotate, posterior_failure_mass, DecodingConfig};
use srla::iohmm::{IohmmParams, OnlineDecoder};

pub fn run_example() -> srla::Result<()> {
    let cfg = DegradationChain::uniform(6, 0.1, 15).build()?;
    let (data, truth) = generate_synthetic(&cfg, 3)?;
    let model = IohmmParams::from_synthetic(&cfg)?;

    let ann = annotate(&model, &data, &DecodingConfig::default())?;
    println!("failure states {:?}", ann.failure_states);
    println!("specialized set {:?}", ann.specialized_states);
    for (label, range) in ann.condition_map.describe() {
        println!("  {label:>10}: states {range}");
    }

    let unit = &data.units[0];
    let inputs = model.unit_inputs(unit)?;
    let mut dec = OnlineDecoder::new(&model);
    println!(
        "unit {} ({} cycles): cycle, true state, decoded, p_fail",
        unit.unit_id,
        unit.len()
    );
    for (t, (u, y)) in inputs.iter().zip(&unit.sensors).enumerate() {
        let st = dec.push(*u, y)?;
        if t % 5 == 0 || t + 1 == unit.len() {
            let p = posterior_failure_mass(&st.filtered, &ann.failure_states);
            println!(
                "  {:>4} {:>3} {:>3} {:.3}",
                t + 1,
                truth[0][t],
                st.viterbi_state,
                p
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

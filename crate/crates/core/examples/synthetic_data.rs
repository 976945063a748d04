//! Generates a two-regime synthetic fleet, writes it as CSV, reads it back
//! and runs the ingestion steps: unit split, regime discretization and
//! normalization fitted on the training units.
//!
//! ```bash
//! cargo run --example synthetic_data
//! ```

use srla::data::{
    discretize_operating_conditions, fit_normalizer, generate_synthetic, load_run_to_failure,
    split, write_csv, DatasetFormat, DegradationChain, FeatureSet, NormMode,
};

pub fn run_example() -> srla::Result<()> {
    let chain = DegradationChain {
        n_inputs: 2,
        input_speed: vec![0.8, 1.2],
        regime_offset: 0.5,
        ..DegradationChain::uniform(6, 0.05, 20)
    };
    let (data, truth) = generate_synthetic(&chain.build()?, 1)?;
    let lengths = data.failure_cycles();
    println!(
        "{} units, lifetimes {}..{}, {} sensors",
        data.units.len(),
        lengths.iter().min().unwrap(),
        lengths.iter().max().unwrap(),
        data.n_sensors()
    );
    println!(
        "unit 1 hidden path starts {:?}",
        &truth[0][..10.min(truth[0].len())]
    );

    let path = std::env::temp_dir().join("srla_synthetic_units.csv");
    write_csv(&data, &path)?;
    let back = load_run_to_failure(&path, DatasetFormat::Csv)?;
    println!("csv round trip identical: {}", back == data);

    let (train, test) = split(&back, 0.8, 1)?;
    let (train, disc) = discretize_operating_conditions(&train, None, 0.05, 1)?;
    let test = disc.apply(&test)?;
    println!(
        "{} train / {} test units, {} regimes {:?}",
        train.units.len(),
        test.units.len(),
        disc.n_inputs(),
        disc.alphabet
    );

    let norm = fit_normalizer(&train, NormMode::ZScore, FeatureSet::Sensors)?;
    let train = norm.apply(&train)?;
    println!("first normalized row: {:?}", train.units[0].sensors[0]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

//! Fits an input-output HMM by EM to a fleet with two operating regimes and
//! compares the learned transition matrices with the generator.
//!
//! ```bash
//! cargo run --release --example fit_iohmm
//! ```

use srla::data::{generate_synthetic, DegradationChain};
use srla::iohmm::{fit_em, log_likelihood, EmConfig, IohmmParams};
use srla::stats::min_cost_assignment;

pub fn run_example() -> srla::Result<()> {
    let chain = DegradationChain {
        n_inputs: 2,
        input_speed: vec![0.6, 1.4],
        regime_offset: 0.5,
        ..DegradationChain::uniform(4, 0.08, 30)
    };
    let cfg = chain.build()?;
    let (data, _) = generate_synthetic(&cfg, 2)?;
    let fit = fit_em(
        &data,
        4,
        &EmConfig {
            seed: 2,
            ..EmConfig::default()
        },
    )?;
    println!(
        "EM: {} epochs, restart {}, converged {}, final log-likelihood {:.2}",
        fit.trace.len(),
        fit.restart,
        fit.converged,
        fit.final_log_likelihood()
    );

    let truth = IohmmParams::from_synthetic(&cfg)?;
    let true_ll: f64 = data
        .units
        .iter()
        .map(|u| log_likelihood(&truth, &truth.unit_inputs(u)?, &u.sensors))
        .sum::<srla::Result<f64>>()?;
    println!("generator log-likelihood {true_ll:.2}");

    // Learned states carry arbitrary labels; match them to the generator's by emission means.
    let cost: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    let a = &fit.params.emissions[i][0].mean;
                    let b = &truth.emissions[j][0].mean;
                    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
                })
                .collect()
        })
        .collect();
    let m = min_cost_assignment(&cost);
    let learned_of = |k: usize| (0..4).find(|&i| m[i] == k).unwrap();
    for u in 0..2 {
        println!("regime {u}: learned vs true advance probabilities");
        for k in 0..3 {
            println!(
                "  state {k} -> {}: {:.3} vs {:.3}",
                k + 1,
                fit.params.transitions[u][learned_of(k)][learned_of(k + 1)],
                truth.transitions[u][k][k + 1]
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> srla::Result<()> {
    run_example()
}

//! Helpers shared by the integration tests: random models, brute-force
//! oracles and the synthetic fleet used by the end-to-end checks.

#![allow(dead_code)]

use std::io::Write;

use rand::Rng;
use srla::data::DegradationChain;
use srla::iohmm::{Gaussian, IohmmParams};
use srla::stats::SeededRng;

/// Writes straight to the process stderr so the line survives output capture.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "[acceptance] criterion {criterion}: {verdict} ({detail})"
    );
}

pub fn report_skip(criterion: &str, why: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] criterion {criterion}: SKIP ({why})");
}

/// Random valid IOHMM; about a third of the transition rows get one zero.
pub fn random_model(n: usize, k: usize, d: usize, rng: &mut SeededRng) -> IohmmParams {
    let mut prob = |len: usize, sparse: bool| {
        let mut v: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + 0.05).collect();
        if sparse && len > 1 && rng.gen::<f64>() < 0.3 {
            let z = rng.gen_range(0..len);
            v[z] = 0.0;
        }
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let initial = prob(n, false);
    let transitions = (0..k)
        .map(|_| (0..n).map(|_| prob(n, true)).collect())
        .collect();
    let emissions = (0..n)
        .map(|_| {
            (0..k)
                .map(|_| Gaussian {
                    mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    var: (0..d).map(|_| rng.gen_range(0.2..1.5)).collect(),
                })
                .collect()
        })
        .collect();
    IohmmParams {
        n_states: n,
        n_inputs: k,
        dim: d,
        initial,
        transitions,
        emissions,
    }
}

fn gaussian_density(g: &Gaussian, y: &[f64]) -> f64 {
    y.iter()
        .zip(&g.mean)
        .zip(&g.var)
        .map(|((x, m), v)| {
            (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        })
        .product()
}

/// Every state path with its joint probability `P(path, Y | U)`, computed in
/// linear space without any recursion.
pub fn enumerate_paths(p: &IohmmParams, u: &[usize], y: &[Vec<f64>]) -> Vec<(Vec<usize>, f64)> {
    let n = p.n_states;
    let t_len = y.len();
    let total = n.pow(t_len as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = Vec::with_capacity(t_len);
        let mut c = code;
        for _ in 0..t_len {
            path.push(c % n);
            c /= n;
        }
        path.reverse();
        let mut prob = p.initial[path[0]] * gaussian_density(&p.emissions[path[0]][u[0]], &y[0]);
        for t in 1..t_len {
            prob *= p.transitions[u[t]][path[t - 1]][path[t]];
            prob *= gaussian_density(&p.emissions[path[t]][u[t]], &y[t]);
        }
        out.push((path, prob));
    }
    out
}

/// Brute-force posterior marginals, likelihood and most probable path.
pub struct BruteForce {
    pub gamma: Vec<Vec<f64>>,
    pub likelihood: f64,
    pub best_path: Vec<usize>,
    pub best_prob: f64,
    /// Probability of the runner-up path, to detect near ties.
    pub second_prob: f64,
}

pub fn brute_force(p: &IohmmParams, u: &[usize], y: &[Vec<f64>]) -> BruteForce {
    let paths = enumerate_paths(p, u, y);
    let likelihood: f64 = paths.iter().map(|(_, q)| q).sum();
    let mut gamma = vec![vec![0.0; p.n_states]; y.len()];
    for (path, q) in &paths {
        for (t, &s) in path.iter().enumerate() {
            gamma[t][s] += q / likelihood;
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for (path, q) in paths {
        if q > best.1 {
            second = best.1;
            best = (path, q);
        } else if q > second {
            second = q;
        }
    }
    BruteForce {
        gamma,
        likelihood,
        best_path: best.0,
        best_prob: best.1,
        second_prob: second,
    }
}

/// Ten-state chain used for the desk-scale pipeline: slow wear through the
/// first seven states, then a fast collapse through states 7 and 8.
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

/// Relative error of two gradient vectors, `||a - b|| / max(||a||, ||b||, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central finite differences of `f` at `w` with step `h`.
pub fn finite_difference(w: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let plus = f(&x);
            x[i] = orig - h;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

//! Worked examples whose expected values come from analytic results or from
//! the ground truth of a constructed generator.

mod common;

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use srla::agent::{
    build_expert, state_value, train_dqn, AgentConfig, Expert, ExpertMode, FeatureMode,
    FeaturePipeline, GreedyPolicy, PreparedData,
};
use srla::approximator::{agreement, clone_behavior, BcConfig, NetworkParams, TrainConfig};
use srla::data::{generate_synthetic, DegradationChain, RunToFailureDataset, UnitTrajectory};
use srla::env::{episode_stats, EnvConfig};
use srla::eval::evaluate_policy;
use srla::interpret::{failure_mode_report, fit_state_classifier, ClassifierConfig};
use srla::iohmm::{fit_em, EmConfig, Gaussian, IohmmParams};
use srla::rul::RulConfig;
use srla::stats::{self, min_cost_assignment, spearman};

#[test]
fn synthetic_lifetimes_follow_the_sum_of_geometric_sojourns() {
    let cfg = DegradationChain::uniform(10, 0.02, 50).build().unwrap();
    let (data, _) = generate_synthetic(&cfg, 11).unwrap();
    let mean = data.total_cycles() as f64 / 50.0;
    // Nine geometric sojourns of mean 1/p before the first failure cycle.
    let expected = 1.0 + 9.0 / 0.02;
    assert!(
        (mean - expected).abs() <= 0.15 * expected,
        "mean lifetime {mean}"
    );
    assert!((mean - 500.0).abs() <= 0.15 * 500.0, "mean lifetime {mean}");
}

#[test]
fn em_recovers_a_three_state_chain() {
    let chain = DegradationChain {
        forward: vec![0.05, 0.1],
        ..DegradationChain::uniform(3, 0.05, 60)
    };
    let truth = chain.build().unwrap();
    let (data, _) = generate_synthetic(&truth, 8).unwrap();
    let fit = fit_em(&data, 3, &EmConfig::default()).unwrap();
    let cost: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| {
                    fit.params.emissions[i][0]
                        .mean
                        .iter()
                        .zip(&truth.emissions[j][0].mean)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum()
                })
                .collect()
        })
        .collect();
    let m = min_cost_assignment(&cost);
    for i in 0..3 {
        if m[i] == truth.failure_state {
            continue;
        }
        for j in 0..3 {
            let e = (fit.params.transitions[0][i][j] - truth.transitions[0][m[i]][m[j]]).abs();
            assert!(e <= 0.05, "A[{i}][{j}] off by {e}");
        }
    }
}

fn constant_data(
    lengths: &[usize],
    feature: impl Fn(usize, usize) -> Vec<f64>,
) -> RunToFailureDataset {
    RunToFailureDataset {
        units: lengths
            .iter()
            .enumerate()
            .map(|(j, &n)| UnitTrajectory {
                unit_id: j as u32 + 1,
                sensors: (1..=n).map(|t| feature(t, n)).collect(),
                op_settings: vec![vec![]; n],
                input_symbols: None,
            })
            .collect(),
        sensor_names: (1..=feature(1, 1).len())
            .map(|i| format!("s_{i}"))
            .collect(),
        op_setting_names: vec![],
    }
}

#[test]
fn cloning_a_constant_expert_is_near_perfect() {
    let mut rng = stats::seeded(1);
    let pairs: Vec<(Vec<f64>, usize)> = (0..400)
        .map(|_| ((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0))
        .collect();
    let init = NetworkParams::init(4, 2, 3).unwrap();
    let cfg = BcConfig {
        train: TrainConfig {
            lr: 1e-2,
            clip_norm: None,
        },
        ..BcConfig::default()
    };
    let out = clone_behavior(&init, &pairs, &cfg).unwrap();
    assert!(out.agreement >= 0.99, "agreement {}", out.agreement);
}

#[test]
fn cloning_a_separable_rule() {
    let mut rng = stats::seeded(2);
    let pairs: Vec<(Vec<f64>, usize)> = (0..600)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let a = usize::from(x[0] > 0.5);
            (x, a)
        })
        .collect();
    let init = NetworkParams::init(3, 2, 5).unwrap();
    let cfg = BcConfig {
        epochs: 400,
        train: TrainConfig {
            lr: 1e-2,
            clip_norm: None,
        },
        ..BcConfig::default()
    };
    let out = clone_behavior(&init, &pairs, &cfg).unwrap();
    assert!(
        agreement(&out.params, &pairs).unwrap() >= 0.95,
        "agreement {}",
        out.agreement
    );
}

#[test]
fn duplicated_feature_leaves_predictions_unchanged() {
    let mut rng = stats::seeded(4);
    let noise = Normal::new(0.0, 0.7).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..150 {
        let k = i % 3;
        x.push(vec![
            k as f64 + noise.sample(&mut rng),
            noise.sample(&mut rng),
        ]);
        y.push(k);
    }
    let names = |d: usize| (0..d).map(|i| format!("f{i}")).collect::<Vec<_>>();
    let cfg = ClassifierConfig::default();
    let base = fit_state_classifier(&x, &y, &names(2), &cfg).unwrap();
    let xd: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], r[1], r[0]]).collect();
    let dup = fit_state_classifier(&xd, &y, &names(3), &cfg).unwrap();
    for c in 0..3 {
        let w = dup.coefficients(c).unwrap();
        assert!((w[0] - w[2]).abs() < 1e-6, "duplicates not tied: {w:?}");
    }
    let same = x
        .iter()
        .zip(&xd)
        .filter(|(a, b)| base.predict(a) == dup.predict(b))
        .count();
    assert!(
        same as f64 / x.len() as f64 >= 0.99,
        "{same} of {} agree",
        x.len()
    );
}

/// Units that stay healthy for a geometric number of cycles and then spend
/// one cycle in failure state `1 + (j % n_modes)`; failure mode `m` raises
/// the sensors in `shifted[m]`.
fn failure_mode_fleet(
    shifted: &[Vec<usize>],
    n_units: usize,
) -> (RunToFailureDataset, IohmmParams) {
    let d = 5;
    let n = 1 + shifted.len();
    let mut rng = stats::seeded(21);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mean = |s: usize| -> Vec<f64> {
        let mut m = vec![0.0; d];
        if s > 0 {
            for &k in &shifted[s - 1] {
                m[k] = 2.0;
            }
        }
        m
    };
    let units = (0..n_units)
        .map(|j| {
            let fail = 1 + j % shifted.len();
            let healthy = rng.gen_range(20..60);
            let sensors: Vec<Vec<f64>> = (0..=healthy)
                .map(|t| {
                    let s = if t == healthy { fail } else { 0 };
                    mean(s).iter().map(|m| m + noise.sample(&mut rng)).collect()
                })
                .collect();
            UnitTrajectory {
                unit_id: j as u32 + 1,
                op_settings: vec![vec![]; sensors.len()],
                sensors,
                input_symbols: None,
            }
        })
        .collect();
    let data = RunToFailureDataset {
        units,
        sensor_names: (1..=d).map(|i| format!("s_{i}")).collect(),
        op_setting_names: vec![],
    };
    let leave = 0.025;
    let mut rows = vec![vec![0.0; n]; n];
    rows[0][0] = 1.0 - leave * shifted.len() as f64;
    for s in 1..n {
        rows[0][s] = leave;
        rows[s][s] = 1.0;
    }
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let model = IohmmParams {
        n_states: n,
        n_inputs: 1,
        dim: d,
        initial,
        transitions: vec![rows],
        emissions: (0..n)
            .map(|s| {
                vec![Gaussian {
                    mean: mean(s),
                    var: vec![0.09; d],
                }]
            })
            .collect(),
    };
    (data, model)
}

#[test]
fn failure_report_ranks_the_shifted_sensor_first() {
    let (data, model) = failure_mode_fleet(&[vec![2]], 40);
    let rep = failure_mode_report(
        &model,
        &data,
        &[1].into(),
        None,
        &ClassifierConfig::default(),
    )
    .unwrap();
    assert_eq!(rep.entries[0].ranking[0].feature, "s_3");
}

#[test]
fn distinct_failure_modes_get_distinct_top_sensors() {
    let (data, model) = failure_mode_fleet(&[vec![0], vec![3]], 60);
    let rep = failure_mode_report(
        &model,
        &data,
        &[1, 2].into(),
        None,
        &ClassifierConfig::default(),
    )
    .unwrap();
    let top: Vec<&str> = rep
        .entries
        .iter()
        .map(|e| e.ranking[0].feature.as_str())
        .collect();
    assert_eq!(top, ["s_1", "s_4"]);
}

#[test]
fn rul_threshold_expert_tracks_true_lifetimes() {
    let chain = DegradationChain::uniform(6, 0.08, 25).build().unwrap();
    let (data, _) = generate_synthetic(&chain, 6).unwrap();
    let model = IohmmParams::from_synthetic(&chain).unwrap();
    let failure: BTreeSet<usize> = [chain.failure_state].into();
    let prepared = FeaturePipeline::new(FeatureMode::SrlaRaw, Some(model.clone()))
        .unwrap()
        .prepare(&data)
        .unwrap();
    let rul = RulConfig {
        n_rollouts: 60,
        ..RulConfig::default()
    };
    let expert = build_expert(
        ExpertMode::RulThreshold { margin: 8.0 },
        Some(&model),
        Some(&failure),
        &rul,
    )
    .unwrap();
    let ev = evaluate_policy(&prepared, &EnvConfig::default(), &expert, 0.95).unwrap();
    let (replaced, lifetimes): (Vec<f64>, Vec<f64>) = ev
        .traces
        .iter()
        .map(|tr| (tr.records.last().unwrap().t as f64, tr.t_fail as f64))
        .unzip();
    let rho = spearman(&replaced, &lifetimes);
    assert!(rho > 0.8, "rho {rho}");
    assert!(matches!(expert, Expert::RulThreshold { .. }));
}

#[test]
fn learned_policy_avoids_failure_on_a_degenerate_fleet() {
    // The cycle fraction is observed directly, so replacing one cycle before
    // failure is always available and clearly cheaper.
    let data = constant_data(&[8, 8, 8, 8], |t, n| vec![t as f64 / n as f64]);
    let prepared = PreparedData::bare(&data).unwrap();
    let env = EnvConfig {
        c_r: 10.0,
        c_f: 1000.0,
        repair: None,
    };
    let agent = AgentConfig {
        lr: 1e-3,
        max_episodes: 3000,
        ..AgentConfig::default()
    };
    let (net, _) = train_dqn(&prepared, &env, &agent, None, None, 1).unwrap();
    let policy = GreedyPolicy {
        q: &net,
        actions: env.actions(),
    };
    let ev = evaluate_policy(&prepared, &env, &policy, agent.gamma).unwrap();
    let failures = ev
        .traces
        .iter()
        .filter(|t| episode_stats(t).unwrap().failed)
        .count();
    assert_eq!(failures, 0);
}

#[test]
fn healthy_states_are_worth_more_than_near_failure_states() {
    let chain = DegradationChain::uniform(5, 0.08, 20).build().unwrap();
    let (data, truth) = generate_synthetic(&chain, 9).unwrap();
    let prepared = PreparedData::bare(&data).unwrap();
    let agent = AgentConfig {
        lr: 1e-3,
        max_episodes: 1500,
        ..AgentConfig::default()
    };
    let (net, _) = train_dqn(&prepared, &EnvConfig::default(), &agent, None, None, 2).unwrap();
    let mut healthy = Vec::new();
    let mut near = Vec::new();
    for (unit, states) in data.units.iter().zip(&truth) {
        for (row, &s) in unit.sensors.iter().zip(states) {
            let v = state_value(&net, row).unwrap();
            if s == 0 {
                healthy.push(v);
            } else if s + 1 == chain.failure_state {
                near.push(v);
            }
        }
    }
    let (h, n) = (stats::mean(&healthy), stats::mean(&near));
    assert!(h > n, "V(healthy) {h} vs V(near failure) {n}");
}

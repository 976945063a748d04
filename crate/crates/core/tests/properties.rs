//! Property tests over randomly generated datasets, models and policies.

mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;
use srla::agent::{
    train_dqn, AgentConfig, Gate, GateInfo, MaintenancePolicy, PreparedData, PreparedUnit,
};
use srla::approximator::{NetworkParams, QSample, TrainConfig};
use srla::data::{
    discretize_operating_conditions, fit_normalizer, generate_synthetic, load_run_to_failure,
    write_csv, DatasetFormat, DegradationChain, FeatureSet, NormMode, RunToFailureDataset,
    UnitTrajectory,
};
use srla::decoding::{build_specialized_set, posterior_failure_mass, SpecializedMode};
use srla::env::{episode_stats, run_episode, Action, EnvConfig, MaintenanceEnv};
use srla::eval::evaluate_policy;
use srla::interpret::{fit_state_classifier, ClassifierConfig};
use srla::iohmm::{fit_em, EmConfig, OnlineDecoder, OnlineState};
use srla::rul::{rul_from_state, RulConfig};
use srla::stats;

fn dataset_strategy() -> impl Strategy<Value = RunToFailureDataset> {
    (
        1usize..4,
        0usize..3,
        prop::collection::vec(2usize..12, 1..5),
    )
        .prop_flat_map(|(d, k, lengths)| {
            let units: Vec<_> = lengths
                .iter()
                .map(|&n| {
                    (
                        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, d), n),
                        prop::collection::vec(prop::collection::vec(-50f64..50.0, k), n),
                    )
                })
                .collect();
            units.prop_map(move |units| RunToFailureDataset {
                units: units
                    .into_iter()
                    .enumerate()
                    .map(|(i, (sensors, op_settings))| UnitTrajectory {
                        unit_id: i as u32 + 1,
                        sensors,
                        op_settings,
                        input_symbols: None,
                    })
                    .collect(),
                sensor_names: (1..=d).map(|i| format!("s_{i}")).collect(),
                op_setting_names: (1..=k).map(|i| format!("op_{i}")).collect(),
            })
        })
}

fn lengths_dataset(lengths: &[usize]) -> RunToFailureDataset {
    RunToFailureDataset {
        units: lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| UnitTrajectory {
                unit_id: i as u32 + 1,
                sensors: (0..n).map(|t| vec![t as f64]).collect(),
                op_settings: vec![vec![]; n],
                input_symbols: None,
            })
            .collect(),
        sensor_names: vec!["s_1".into()],
        op_setting_names: vec![],
    }
}

/// Replaces unit `j` at `T_j - lead[j]` cycles, or lets it fail when the lead is 0.
struct ReplaceWithLead {
    lead: Vec<usize>,
}

impl MaintenancePolicy for ReplaceWithLead {
    fn name(&self) -> String {
        "lead".into()
    }

    fn decide(&self, unit: &PreparedUnit, t: usize) -> srla::Result<(Action, Option<GateInfo>)> {
        let lead = self.lead[(unit.unit_id - 1) as usize].min(unit.t_fail - 1);
        let replace = lead > 0 && t + lead >= unit.t_fail;
        Ok((
            if replace {
                Action::Replace
            } else {
                Action::Hold
            },
            None,
        ))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_lossless(data in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("units.csv");
        write_csv(&data, &path).unwrap();
        let back = load_run_to_failure(&path, DatasetFormat::Csv).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn normalized_training_columns_are_standard(data in dataset_strategy(), minmax in any::<bool>()) {
        let mode = if minmax { NormMode::MinMax } else { NormMode::ZScore };
        let spec = fit_normalizer(&data, mode, FeatureSet::Sensors).unwrap();
        let out = spec.apply(&data).unwrap();
        for j in 0..data.n_sensors() {
            let col: Vec<f64> = out.units.iter().flat_map(|u| u.sensors.iter().map(move |r| r[j])).collect();
            let constant = spec.warnings.iter().any(|w| w.contains(&format!("`s_{}`", j + 1)));
            if constant {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else if minmax {
                prop_assert!(col.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            } else {
                prop_assert!(stats::mean(&col).abs() < 1e-9);
                let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn discretization_is_deterministic(data in dataset_strategy(), k in prop::option::of(1usize..4), seed in any::<u64>()) {
        prop_assume!(data.n_op_settings() > 0);
        let (a, da) = discretize_operating_conditions(&data, k, 0.05, seed).unwrap();
        let (b, db) = discretize_operating_conditions(&data, k, 0.05, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&da, &db);
        for u in &a.units {
            for (row, &s) in u.op_settings.iter().zip(u.input_symbols.as_ref().unwrap()) {
                prop_assert_eq!(da.assign(row), s);
            }
        }
    }

    #[test]
    fn synthetic_units_run_left_to_right_into_failure(n in 3usize..7, fwd in 0.1f64..0.9, seed in any::<u64>()) {
        let cfg = DegradationChain::uniform(n, fwd, 6).build().unwrap();
        let (data, truth) = generate_synthetic(&cfg, seed).unwrap();
        prop_assert_eq!(&generate_synthetic(&cfg, seed).unwrap().0, &data);
        for (unit, states) in data.units.iter().zip(&truth) {
            prop_assert_eq!(unit.len(), states.len());
            prop_assert!(states.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
            prop_assert_eq!(*states.last().unwrap(), cfg.failure_state);
            prop_assert!(states[..states.len() - 1].iter().all(|&s| s != cfg.failure_state));
        }
    }

    #[test]
    fn filtered_posteriors_are_distributions(seed in any::<u64>(), n in 1usize..5, k in 1usize..3, t_len in 1usize..15) {
        let mut rng = stats::seeded(seed);
        let p = common::random_model(n, k, 2, &mut rng);
        let mut dec = OnlineDecoder::new(&p);
        let failure: BTreeSet<usize> = [n - 1].into();
        for t in 0..t_len {
            let y = p.sample_observation(t % n, t % k, &mut rng);
            let st = dec.push(t % k, &y).unwrap();
            let total: f64 = st.filtered.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let m = posterior_failure_mass(&st.filtered, &failure);
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn specialized_set_grows_with_radius(seed in any::<u64>(), n in 2usize..7, r in 0usize..5) {
        let mut rng = stats::seeded(seed);
        let p = common::random_model(n, 2, 1, &mut rng);
        let failure: BTreeSet<usize> = [n - 1].into();
        let small = build_specialized_set(&p, &failure, None, SpecializedMode::TransitionRadius { radius: r }).unwrap();
        let big = build_specialized_set(&p, &failure, None, SpecializedMode::TransitionRadius { radius: r + 1 }).unwrap();
        prop_assert!(failure.is_subset(&small));
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn safety_net_replaces_more_as_threshold_drops(
        filtered in prop::collection::vec(0.0f64..1.0, 2..6),
        state in 0usize..6,
        hi in 0.0f64..1.0,
        lo_frac in 0.0f64..1.0,
        in_xs in any::<bool>(),
    ) {
        let n = filtered.len();
        let total: f64 = filtered.iter().sum::<f64>() + 1e-9;
        let decoded = OnlineState {
            viterbi_state: state % n,
            filtered: filtered.iter().map(|v| v / total).collect(),
        };
        let specialized: BTreeSet<usize> = if in_xs { [state % n, n - 1].into() } else { [n - 1].into() };
        let gate = |threshold| Gate {
            specialized: specialized.clone(),
            failure: [n - 1].into(),
            p_fail_threshold: threshold,
            default_action: Action::Hold,
            safety_net: true,
        };
        let mut called = false;
        let (a_hi, info) = gate(hi).apply(&decoded, || { called = true; Ok(Action::Hold) }).unwrap();
        let (a_lo, _) = gate(hi * lo_frac).apply(&decoded, || Ok(Action::Hold)).unwrap();
        prop_assert_eq!(called, specialized.contains(&decoded.viterbi_state));
        if a_hi == Action::Replace {
            prop_assert_eq!(a_lo, Action::Replace);
        }
        if !info.in_xs && info.p_fail <= hi {
            prop_assert_eq!(a_hi, Action::Hold);
        }
    }

    #[test]
    fn episode_cost_is_replacement_or_failure(lengths in prop::collection::vec(2usize..60, 1..5), pick in any::<u64>()) {
        let data = lengths_dataset(&lengths);
        let cfg = EnvConfig::default();
        let mut env = MaintenanceEnv::new(&data, cfg).unwrap();
        for (j, &t_fail) in lengths.iter().enumerate() {
            let replace_at = (pick as usize % (t_fail + 3)) + 1;
            let trace = run_episode(&mut env, j, |s| {
                Ok(if s.t == replace_at { Action::Replace } else { Action::Hold })
            })
            .unwrap();
            let st = episode_stats(&trace).unwrap();
            let tf = t_fail as f64;
            if replace_at < t_fail {
                prop_assert!(!st.failed);
                prop_assert!((st.total_cost - cfg.c_r / tf).abs() < 1e-12);
                prop_assert_eq!(st.remaining_cycles, Some(t_fail - replace_at));
            } else {
                prop_assert!(st.failed);
                prop_assert!((st.total_cost - (cfg.c_r + cfg.c_f) / tf).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn environment_replays_recorded_sensors(lengths in prop::collection::vec(2usize..40, 1..4)) {
        let data = lengths_dataset(&lengths);
        let mut env = MaintenanceEnv::new(&data, EnvConfig::default()).unwrap();
        for j in 0..lengths.len() {
            let mut s = env.reset_to(j).unwrap();
            loop {
                prop_assert_eq!(env.observation().unwrap(), data.units[j].sensors[s.t - 1].as_slice());
                let out = env.step(Action::Hold).unwrap();
                if out.done {
                    break;
                }
                s = out.state;
            }
        }
    }

    #[test]
    fn cost_rate_never_beats_the_ideal(
        lengths in prop::collection::vec(2usize..80, 1..8),
        leads in prop::collection::vec(0usize..90, 8),
        c_f in 1.0f64..5000.0,
    ) {
        let data = lengths_dataset(&lengths);
        let prepared = PreparedData::bare(&data).unwrap();
        let env = EnvConfig { c_f, ..EnvConfig::default() };
        let policy = ReplaceWithLead { lead: leads.clone() };
        let m = evaluate_policy(&prepared, &env, &policy, 0.95).unwrap().report;
        if c_f >= m.imc {
            prop_assert!(m.q_star_avg >= m.imc - 1e-12);
        }
        let all_replaced = lengths.iter().zip(&leads).all(|(&t, &l)| l.min(t - 1) > 0);
        prop_assert_eq!(m.failure_pct == 0.0, all_replaced);
        for tr in &evaluate_policy(&prepared, &env, &policy, 0.95).unwrap().traces {
            let c = episode_stats(tr).unwrap().total_cost;
            let tf = tr.t_fail as f64;
            prop_assert!(c >= env.c_r / tf - 1e-12 && c <= (env.c_r + env.c_f) / tf + 1e-12);
        }
    }

    #[test]
    fn scaling_the_last_layer_scales_the_output(seed in any::<u64>(), c in 0.1f64..10.0, x in prop::collection::vec(-3.0f64..3.0, 4)) {
        let net = NetworkParams::with_sizes(&[4, 6, 5, 2], seed).unwrap();
        let mut scaled = net.clone();
        let last = scaled.weights.len() - 1;
        scaled.weights[last].iter_mut().for_each(|w| *w *= c);
        scaled.biases[last].iter_mut().for_each(|b| *b *= c);
        let a = net.forward(&x).unwrap();
        let b = scaled.forward(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u * c - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn classifier_loss_never_increases(seed in any::<u64>(), n in 6usize..30, c in 2usize..4) {
        let mut rng = stats::seeded(seed);
        let (x, y) = random_labeled(&mut rng, n, 3, c);
        prop_assume!(y.iter().collect::<BTreeSet<_>>().len() >= 2);
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let clf = fit_state_classifier(&x, &y, &names, &ClassifierConfig::default()).unwrap();
        prop_assert!(clf.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn classifier_ignores_label_names_and_column_units(seed in any::<u64>(), n in 6usize..30, scale in 0.01f64..100.0) {
        let mut rng = stats::seeded(seed);
        let (x, y) = random_labeled(&mut rng, n, 3, 3);
        prop_assume!(y.iter().collect::<BTreeSet<_>>().len() >= 2);
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let cfg = ClassifierConfig::default();
        let base = fit_state_classifier(&x, &y, &names, &cfg).unwrap();

        let relabel = |s: usize| 10 + 2 * s;
        let y2: Vec<usize> = y.iter().map(|&s| relabel(s)).collect();
        let renamed = fit_state_classifier(&x, &y2, &names, &cfg).unwrap();

        let x3: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * scale, r[1], r[2]]).collect();
        let rescaled = fit_state_classifier(&x3, &y, &names, &cfg).unwrap();
        for (r, r3) in x.iter().zip(&x3) {
            if margin(&base, r) > 1e-6 {
                prop_assert_eq!(relabel(base.predict(r)), renamed.predict(r));
                prop_assert_eq!(base.predict(r), rescaled.predict(r3));
            }
        }
    }

    #[test]
    fn rul_is_reproducible(seed in any::<u64>(), n in 2usize..5) {
        let cfg = DegradationChain::uniform(n, 0.3, 1).build().unwrap();
        let model = srla::iohmm::IohmmParams::from_synthetic(&cfg).unwrap();
        let failure: BTreeSet<usize> = [n - 1].into();
        let rc = RulConfig { seed, n_rollouts: 50, ..RulConfig::default() };
        let a = rul_from_state(&model, 0, &[0], &failure, &rc).unwrap();
        let b = rul_from_state(&model, 0, &[0], &failure, &rc).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(rul_from_state(&model, n - 1, &[0], &failure, &rc).unwrap().0, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn em_log_likelihood_never_decreases(seed in any::<u64>(), n in 2usize..5) {
        let cfg = DegradationChain { n_units: 6, ..DegradationChain::uniform(n, 0.2, 6) }.build().unwrap();
        let (data, _) = generate_synthetic(&cfg, seed).unwrap();
        let fit = fit_em(&data, n, &EmConfig { seed, n_restarts: 1, ..EmConfig::default() }).unwrap();
        prop_assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0)));
    }

    #[test]
    fn training_is_reproducible(seed in any::<u64>()) {
        let data = lengths_dataset(&[12, 20, 9]);
        let prepared = PreparedData::bare(&data).unwrap();
        let cfg = AgentConfig { max_episodes: 15, min_episodes: 1000, ..AgentConfig::default() };
        let env = EnvConfig::default();
        let (a, la) = train_dqn(&prepared, &env, &cfg, None, None, seed).unwrap();
        let (b, lb) = train_dqn(&prepared, &env, &cfg, None, None, seed).unwrap();
        prop_assert_eq!(a.flatten(), b.flatten());
        prop_assert_eq!(la.records.len(), lb.records.len());
    }

    #[test]
    fn long_training_keeps_parameters_finite(seed in any::<u64>()) {
        let mut net = NetworkParams::with_sizes(&[3, 16, 16, 2], seed).unwrap();
        let mut rng = stats::seeded(seed);
        let tc = TrainConfig { lr: 1e-4, clip_norm: None };
        for _ in 0..100_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = QSample { target: -x[0] * 2.0, action: rng.gen_range(0..2), x };
            net.train_step(&[s], &tc).unwrap();
        }
        prop_assert!(net.is_finite());
    }
}

/// Labeled points from `c` separated clusters plus noise.
fn random_labeled(
    rng: &mut stats::SeededRng,
    n: usize,
    d: usize,
    c: usize,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let x = y
        .iter()
        .map(|&k| {
            centers[k]
                .iter()
                .map(|m| m + rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    (x, y)
}

/// Gap between the two highest class scores.
fn margin(clf: &srla::interpret::StateClassifier, row: &[f64]) -> f64 {
    let mut s = clf.scores(row);
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s[1]
}

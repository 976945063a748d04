//! Turning decoded hidden states into maintenance events.
//!
//! The failure set is read off the last cycle of every training unit, the
//! specialized set `X_s` (where the RL agent is allowed to act) is grown from
//! it, and states are mapped to coarse health bands by the normalized time at
//! which they typically occur.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::RunToFailureDataset;
use crate::doc;
use crate::error::{Error, Result};
use crate::iohmm::IohmmParams;

/// Transition probabilities at or below this value are not treated as edges.
pub const EDGE_THRESHOLD: f64 = 1e-3;

pub const ANNOTATION_KIND: &str = "state-annotation";
pub const ANNOTATION_VERSION: u32 = 1;

/// Viterbi state at the final cycle of every unit, deduplicated.
pub fn decode_failure_states(
    params: &IohmmParams,
    train: &RunToFailureDataset,
) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for unit in &train.units {
        let path = params.decode_unit(unit)?;
        out.insert(*path.states.last().expect("viterbi path is nonempty"));
    }
    Ok(out)
}

/// Viterbi paths for every unit, in dataset order.
pub fn decode_paths(params: &IohmmParams, data: &RunToFailureDataset) -> Result<Vec<Vec<usize>>> {
    data.units
        .iter()
        .map(|u| Ok(params.decode_unit(u)?.states))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SpecializedMode {
    /// States that can reach a failure state within `radius` transitions.
    TransitionRadius { radius: usize },
    /// States whose mean state value lies in the lowest `quantile`.
    ValueQuantile { quantile: f64 },
}

impl Default for SpecializedMode {
    fn default() -> Self {
        SpecializedMode::TransitionRadius { radius: 2 }
    }
}

/// Builds `X_s`. `state_values[s]` is the mean value estimate over cycles
/// decoded as `s`, `NaN` for states never visited; it is required only in
/// value-quantile mode.
pub fn build_specialized_set(
    params: &IohmmParams,
    failure_states: &BTreeSet<usize>,
    state_values: Option<&[f64]>,
    mode: SpecializedMode,
) -> Result<BTreeSet<usize>> {
    if failure_states.is_empty() {
        return Err(Error::invalid(
            "specialized set needs at least one failure state",
        ));
    }
    if let Some(&bad) = failure_states.iter().find(|&&s| s >= params.n_states) {
        return Err(Error::invalid(format!(
            "failure state {bad} outside the model"
        )));
    }
    let n = params.n_states;
    match mode {
        SpecializedMode::TransitionRadius { radius } => {
            let mut set = failure_states.clone();
            let mut frontier = set.clone();
            for _ in 0..radius {
                let mut next = BTreeSet::new();
                for i in 0..n {
                    if set.contains(&i) {
                        continue;
                    }
                    let reaches = frontier
                        .iter()
                        .any(|&j| params.transitions.iter().any(|a| a[i][j] > EDGE_THRESHOLD));
                    if reaches {
                        next.insert(i);
                    }
                }
                if next.is_empty() {
                    break;
                }
                set.extend(next.iter().copied());
                frontier = next;
            }
            Ok(set)
        }
        SpecializedMode::ValueQuantile { quantile } => {
            if !(0.0..=1.0).contains(&quantile) {
                return Err(Error::invalid(format!(
                    "quantile {quantile} outside [0, 1]"
                )));
            }
            let values = state_values.ok_or_else(|| {
                Error::MissingPrerequisite(
                    "value-quantile mode needs per-state value estimates".into(),
                )
            })?;
            if values.len() != n {
                return Err(Error::dims(format!(
                    "{} state values for {n} states",
                    values.len()
                )));
            }
            let mut visited: Vec<usize> = (0..n).filter(|&s| values[s].is_finite()).collect();
            visited.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let take = ((quantile * visited.len() as f64).ceil() as usize).min(visited.len());
            let mut set = failure_states.clone();
            set.extend(visited.into_iter().take(take));
            Ok(set)
        }
    }
}

/// Probability mass the posterior row assigns to the failure states.
pub fn posterior_failure_mass(gamma: &[f64], failure_states: &BTreeSet<usize>) -> f64 {
    let m: f64 = failure_states.iter().filter_map(|&s| gamma.get(s)).sum();
    m.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Condition bands
// ---------------------------------------------------------------------------

pub const CONDITION_LABELS: [&str; 5] = [
    "normal",
    "potential_fault",
    "failure_progression",
    "fault_point",
    "failure",
];

/// Lower edges of the bands after `normal`, on the health scale where 0 is
/// new and 1 is the failure cycle.
pub const DEFAULT_BAND_EDGES: [f64; 4] = [0.5, 0.75, 0.9, 0.999];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBand {
    pub label: String,
    /// States in this band, ordered by median health position.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMap {
    pub bands: Vec<ConditionBand>,
    /// Median health position of every annotated state.
    pub median_position: BTreeMap<usize, f64>,
    /// False when ordering states by median position does not produce
    /// contiguous index ranges per band.
    pub contiguous: bool,
}

impl ConditionMap {
    pub fn label_of(&self, state: usize) -> Option<&str> {
        self.bands
            .iter()
            .find(|b| b.states.contains(&state))
            .map(|b| b.label.as_str())
    }

    /// `"0-2"` style rendering of each band's state range.
    pub fn describe(&self) -> Vec<(String, String)> {
        self.bands
            .iter()
            .map(|b| {
                let r = match (b.states.iter().min(), b.states.iter().max()) {
                    (Some(lo), Some(hi)) if lo == hi => format!("{lo}"),
                    (Some(lo), Some(hi)) => format!("{lo}-{hi}"),
                    _ => "-".to_string(),
                };
                (b.label.clone(), r)
            })
            .collect()
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Groups decoded states into health bands. `health`, when given, holds a
/// per-cycle degradation value in `[0, 1]` for every unit; otherwise the life
/// fraction `t / T_j` is used.
pub fn map_states_to_conditions(
    paths: &[Vec<usize>],
    health: Option<&[Vec<f64>]>,
    band_edges: &[f64],
) -> Result<ConditionMap> {
    if band_edges.len() + 1 != CONDITION_LABELS.len() || band_edges.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::invalid(format!(
            "expected {} strictly increasing band edges",
            CONDITION_LABELS.len() - 1
        )));
    }
    if let Some(h) = health {
        if h.len() != paths.len() || h.iter().zip(paths).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::dims(
                "health labels must align with the decoded paths",
            ));
        }
    }
    let mut positions: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (j, path) in paths.iter().enumerate() {
        let len = path.len() as f64;
        for (t, &s) in path.iter().enumerate() {
            let pos = match health {
                Some(h) => h[j][t],
                None => (t + 1) as f64 / len,
            };
            positions.entry(s).or_default().push(pos);
        }
    }
    let median_position: BTreeMap<usize, f64> = positions
        .into_iter()
        .map(|(s, mut v)| (s, median(&mut v)))
        .collect();

    let mut order: Vec<usize> = median_position.keys().copied().collect();
    order.sort_by(|a, b| {
        median_position[a]
            .total_cmp(&median_position[b])
            .then(a.cmp(b))
    });

    let mut bands: Vec<ConditionBand> = CONDITION_LABELS
        .iter()
        .map(|l| ConditionBand {
            label: l.to_string(),
            states: Vec::new(),
        })
        .collect();
    for &s in &order {
        let m = median_position[&s];
        let b = band_edges.iter().take_while(|&&e| m >= e).count();
        bands[b].states.push(s);
    }
    let contiguous = bands.iter().all(|b| {
        let mut idx = b.states.clone();
        idx.sort_unstable();
        idx.windows(2).all(|w| w[1] == w[0] + 1)
    }) && order.windows(2).all(|w| w[0] < w[1]);
    Ok(ConditionMap {
        bands,
        median_position,
        contiguous,
    })
}

// ---------------------------------------------------------------------------
// Annotation document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAnnotation {
    pub failure_states: BTreeSet<usize>,
    pub condition_map: ConditionMap,
    pub specialized_states: BTreeSet<usize>,
    pub p_fail_threshold: f64,
}

impl StateAnnotation {
    pub fn validate(&self) -> Result<()> {
        if !self.failure_states.is_subset(&self.specialized_states) {
            return Err(Error::InvariantViolation(
                "failure states must be contained in the specialized set".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_fail_threshold) {
            return Err(Error::InvariantViolation(
                "p_fail_threshold outside [0, 1]".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for b in &self.condition_map.bands {
            for &s in &b.states {
                if !seen.insert(s) {
                    return Err(Error::InvariantViolation(format!(
                        "state {s} appears in two condition bands"
                    )));
                }
            }
        }
        let annotated: BTreeSet<usize> =
            self.condition_map.median_position.keys().copied().collect();
        if seen != annotated {
            return Err(Error::InvariantViolation(
                "condition bands must cover exactly the annotated states".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        doc::write(path, ANNOTATION_KIND, ANNOTATION_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: StateAnnotation = doc::read(path, ANNOTATION_KIND, ANNOTATION_VERSION)?;
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub specialized: SpecializedMode,
    pub p_fail_threshold: f64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            specialized: SpecializedMode::default(),
            p_fail_threshold: 0.5,
        }
    }
}

/// Failure states, condition bands and the radius-based specialized set in one pass.
pub fn annotate(
    params: &IohmmParams,
    train: &RunToFailureDataset,
    config: &DecodingConfig,
) -> Result<StateAnnotation> {
    let paths = decode_paths(params, train)?;
    let failure_states: BTreeSet<usize> = paths.iter().map(|p| *p.last().unwrap()).collect();
    let condition_map = map_states_to_conditions(&paths, None, &DEFAULT_BAND_EDGES)?;
    let specialized_states =
        build_specialized_set(params, &failure_states, None, config.specialized)?;
    let ann = StateAnnotation {
        failure_states,
        condition_map,
        specialized_states,
        p_fail_threshold: config.p_fail_threshold,
    };
    ann.validate()?;
    Ok(ann)
}

/// Per-cycle `(unit, cycle, viterbi_state, condition_label)` table.
pub fn write_state_csv(
    path: &Path,
    data: &RunToFailureDataset,
    paths: &[Vec<usize>],
    map: &ConditionMap,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit", "cycle", "viterbi_state", "condition_label"])?;
    for (unit, p) in data.units.iter().zip(paths) {
        for (t, &s) in p.iter().enumerate() {
            w.write_record([
                unit.unit_id.to_string(),
                (t + 1).to_string(),
                s.to_string(),
                map.label_of(s).unwrap_or("unannotated").to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DegradationChain};
    use crate::iohmm::Gaussian;

    fn chain(n: usize, p: f64) -> IohmmParams {
        let transitions = vec![(0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                if i + 1 == n {
                    r[i] = 1.0;
                } else {
                    r[i] = 1.0 - p;
                    r[i + 1] = p;
                }
                r
            })
            .collect()];
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        IohmmParams {
            n_states: n,
            n_inputs: 1,
            dim: 1,
            initial,
            transitions,
            emissions: (0..n)
                .map(|s| {
                    vec![Gaussian {
                        mean: vec![s as f64 * 3.0],
                        var: vec![0.1],
                    }]
                })
                .collect(),
        }
    }

    #[test]
    fn radius_examples() {
        let p = chain(3, 0.2);
        let f: BTreeSet<usize> = [2].into();
        let r0 = build_specialized_set(
            &p,
            &f,
            None,
            SpecializedMode::TransitionRadius { radius: 0 },
        )
        .unwrap();
        assert_eq!(r0, f);
        let r1 = build_specialized_set(
            &p,
            &f,
            None,
            SpecializedMode::TransitionRadius { radius: 1 },
        )
        .unwrap();
        assert_eq!(r1, [1, 2].into());
        assert!(
            build_specialized_set(&p, &BTreeSet::new(), None, SpecializedMode::default()).is_err()
        );
    }

    #[test]
    fn phantom_edges_are_ignored() {
        let mut p = chain(3, 0.2);
        p.transitions[0][0] = vec![0.9995, 0.0, 0.0005];
        let f: BTreeSet<usize> = [2].into();
        let r1 = build_specialized_set(
            &p,
            &f,
            None,
            SpecializedMode::TransitionRadius { radius: 1 },
        )
        .unwrap();
        assert_eq!(r1, [1, 2].into());
    }

    #[test]
    fn value_quantile_takes_lowest_states() {
        let p = chain(8, 0.2);
        let v = [0.0, -0.1, -0.1, -0.2, -0.1, 0.0, -3.0, -4.0];
        let f: BTreeSet<usize> = [7].into();
        let set = build_specialized_set(
            &p,
            &f,
            Some(&v),
            SpecializedMode::ValueQuantile { quantile: 0.25 },
        )
        .unwrap();
        assert_eq!(set, [6, 7].into());
        assert!(matches!(
            build_specialized_set(
                &p,
                &f,
                None,
                SpecializedMode::ValueQuantile { quantile: 0.25 }
            ),
            Err(Error::MissingPrerequisite(_))
        ));
    }

    #[test]
    fn failure_mass_examples() {
        let f: BTreeSet<usize> = [3].into();
        let mut g = vec![0.0; 10];
        g[3] = 1.0;
        assert_eq!(posterior_failure_mass(&g, &f), 1.0);
        let u = vec![0.1; 10];
        assert!((posterior_failure_mass(&u, &f) - 0.1).abs() < 1e-12);
        assert_eq!(posterior_failure_mass(&u, &BTreeSet::new()), 0.0);
    }

    #[test]
    fn synthetic_chain_decodes_its_absorbing_state() {
        let cfg = DegradationChain::uniform(5, 0.1, 12).build().unwrap();
        let (data, _) = generate_synthetic(&cfg, 3).unwrap();
        let p = chain(5, 0.1);
        let mut p = p;
        for s in 0..5 {
            p.emissions[s][0] = Gaussian {
                mean: cfg.emissions[s][0].mean.clone(),
                var: cfg.emissions[s][0].std.iter().map(|x| x * x).collect(),
            };
        }
        p.dim = cfg.emissions[0][0].mean.len();
        let f = decode_failure_states(&p, &data).unwrap();
        assert_eq!(f, [4].into());

        let paths = decode_paths(&p, &data).unwrap();
        let map = map_states_to_conditions(&paths, None, &DEFAULT_BAND_EDGES).unwrap();
        let order: Vec<usize> = map.bands.iter().flat_map(|b| b.states.clone()).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
        assert!(map.contiguous);
        assert_eq!(map.label_of(4), Some("failure"));
    }

    #[test]
    fn single_state_model_yields_one_band() {
        let paths = vec![vec![0; 7], vec![0; 3]];
        let map = map_states_to_conditions(&paths, None, &DEFAULT_BAND_EDGES).unwrap();
        let nonempty: Vec<_> = map.bands.iter().filter(|b| !b.states.is_empty()).collect();
        assert_eq!(nonempty.len(), 1);
        assert_eq!(nonempty[0].states, vec![0]);
    }

    #[test]
    fn out_of_order_states_set_the_diagnostic_flag() {
        let paths = vec![vec![2, 2, 2, 0, 0, 0, 1, 1, 1, 1]];
        let map = map_states_to_conditions(&paths, None, &DEFAULT_BAND_EDGES).unwrap();
        assert!(!map.contiguous);
    }

    #[test]
    fn annotation_round_trip_and_subset_invariant() {
        let dir = tempfile::tempdir().unwrap();
        let p = chain(4, 0.3);
        let paths = vec![vec![0, 0, 1, 2, 3]];
        let ann = StateAnnotation {
            failure_states: [3].into(),
            condition_map: map_states_to_conditions(&paths, None, &DEFAULT_BAND_EDGES).unwrap(),
            specialized_states: build_specialized_set(
                &p,
                &[3].into(),
                None,
                SpecializedMode::default(),
            )
            .unwrap(),
            p_fail_threshold: 0.5,
        };
        let path = dir.path().join("ann.json");
        ann.save(&path).unwrap();
        assert_eq!(StateAnnotation::load(&path).unwrap(), ann);
        let mut bad = ann.clone();
        bad.specialized_states = [2].into();
        assert!(bad.validate().is_err());
    }
}

//! Sensor relevance per hidden state.
//!
//! A multinomial logistic regression is fit from standardized sensors to the
//! decoded states; its signed coefficients are read as per-state feature
//! relevances. The failure-mode report repeats this contrastively for each
//! failure state against the non-failure states.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::RunToFailureDataset;
use crate::decoding::decode_paths;
use crate::error::{Error, Result};
use crate::iohmm::IohmmParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub epochs: usize,
    /// Initial step size; each step is halved until the loss does not increase.
    pub lr: f64,
    pub tol: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            l2: 1e-3,
            epochs: 2000,
            lr: 0.1,
            tol: 1e-8,
        }
    }
}

/// Fitted multinomial logistic model on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateClassifier {
    /// Sorted distinct target values; row `c` of `weights` belongs to `classes[c]`.
    pub classes: Vec<usize>,
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[class][feature]`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub train_accuracy: f64,
    pub loss_trace: Vec<f64>,
}

/// Flat parameter layout: for each class, `d` weights followed by the bias.
fn unpack(w: &[f64], c: usize, d: usize) -> (Vec<&[f64]>, Vec<f64>) {
    let rows = (0..c).map(|k| &w[k * (d + 1)..k * (d + 1) + d]).collect();
    let bias = (0..c).map(|k| w[k * (d + 1) + d]).collect();
    (rows, bias)
}

fn log_softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|v| *v -= lse);
}

/// Mean cross-entropy plus `l2 / 2 * ||W||^2` (biases unpenalized) and its
/// gradient, for flat parameters `w` of `n_classes * (d + 1)` entries.
/// `y` holds class indices in `0..n_classes`.
pub fn softmax_loss_grad(
    w: &[f64],
    n_classes: usize,
    x: &[Vec<f64>],
    y: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = x.first().map_or(0, |r| r.len());
    let (rows, bias) = unpack(w, n_classes, d);
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    let mut z = vec![0.0; n_classes];
    for (xi, &yi) in x.iter().zip(y) {
        for k in 0..n_classes {
            z[k] = bias[k] + rows[k].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        }
        log_softmax(&mut z);
        loss -= z[yi];
        for k in 0..n_classes {
            let g = z[k].exp() - if k == yi { 1.0 } else { 0.0 };
            let off = k * (d + 1);
            for j in 0..d {
                grad[off + j] += g * xi[j];
            }
            grad[off + d] += g;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    for k in 0..n_classes {
        let off = k * (d + 1);
        for j in 0..d {
            loss += 0.5 * l2 * w[off + j] * w[off + j];
            grad[off + j] += l2 * w[off + j];
        }
    }
    (loss, grad)
}

fn standardize_fit(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for j in 0..d {
            mean[j] += r[j] / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in x {
        for j in 0..d {
            scale[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    let scale = scale
        .into_iter()
        .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

pub fn fit_state_classifier(
    x: &[Vec<f64>],
    targets: &[usize],
    feature_names: &[String],
    config: &ClassifierConfig,
) -> Result<StateClassifier> {
    if x.len() != targets.len() {
        return Err(Error::dims(format!(
            "{} rows vs {} targets",
            x.len(),
            targets.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) || feature_names.len() != d {
        return Err(Error::dims("feature rows and names must share one width"));
    }
    let classes: Vec<usize> = targets
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "classifier needs at least two distinct classes",
        ));
    }
    let c = classes.len();
    let y: Vec<usize> = targets
        .iter()
        .map(|t| classes.binary_search(t).unwrap())
        .collect();
    let (mean, scale) = standardize_fit(x);
    let xs: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean[j]) / scale[j])
                .collect()
        })
        .collect();

    let mut w = vec![0.0; c * (d + 1)];
    let (mut loss, mut grad) = softmax_loss_grad(&w, c, &xs, &y, config.l2);
    let mut trace = vec![loss];
    let mut lr = config.lr;
    for _ in 0..config.epochs {
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - lr * g).collect();
            let (l, g) = softmax_loss_grad(&cand, c, &xs, &y, config.l2);
            if l <= loss {
                accepted = Some((cand, l, g));
                break;
            }
            lr *= 0.5;
        }
        let Some((cand, l, g)) = accepted else { break };
        let delta = loss - l;
        w = cand;
        loss = l;
        grad = g;
        trace.push(loss);
        if delta < config.tol {
            break;
        }
        lr = (lr * 1.5).min(config.lr * 64.0);
    }

    let (rows, bias) = unpack(&w, c, d);
    let mut clf = StateClassifier {
        classes,
        feature_names: feature_names.to_vec(),
        mean,
        scale,
        weights: rows.into_iter().map(|r| r.to_vec()).collect(),
        bias,
        train_accuracy: 0.0,
        loss_trace: trace,
    };
    let hits = x
        .iter()
        .zip(targets)
        .filter(|(r, &t)| clf.predict(r) == t)
        .count();
    clf.train_accuracy = hits as f64 / x.len() as f64;
    Ok(clf)
}

impl StateClassifier {
    /// Class scores for a raw (unstandardized) row.
    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| {
                b + w
                    .iter()
                    .enumerate()
                    .map(|(j, wj)| wj * (row[j] - self.mean[j]) / self.scale[j])
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let s = self.scores(row);
        let mut best = 0;
        for k in 1..s.len() {
            if s[k] > s[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    pub fn coefficients(&self, state: usize) -> Result<&[f64]> {
        let k = self.classes.binary_search(&state).map_err(|_| {
            Error::invalid(format!("state {state} is not among the trained classes"))
        })?;
        Ok(&self.weights[k])
    }
}

/// Features of `state` sorted by coefficient magnitude, signs preserved.
pub fn feature_importance(
    clf: &StateClassifier,
    state: usize,
    top_k: usize,
) -> Result<Vec<(String, f64)>> {
    let coef = clf.coefficients(state)?;
    let mut idx: Vec<usize> = (0..coef.len()).collect();
    idx.sort_by(|&a, &b| coef[b].abs().total_cmp(&coef[a].abs()).then(a.cmp(&b)));
    Ok(idx
        .into_iter()
        .take(top_k)
        .map(|j| (clf.feature_names[j].clone(), coef[j]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub classes: Vec<usize>,
    pub per_state: Vec<(usize, Vec<(String, f64)>)>,
    pub train_accuracy: f64,
}

/// Decodes every unit and ranks all sensors for every decoded state.
pub fn importance_report(
    params: &IohmmParams,
    data: &RunToFailureDataset,
    config: &ClassifierConfig,
) -> Result<(StateClassifier, ImportanceReport)> {
    let paths = decode_paths(params, data)?;
    let x: Vec<Vec<f64>> = data
        .units
        .iter()
        .flat_map(|u| u.sensors.iter().cloned())
        .collect();
    let y: Vec<usize> = paths.into_iter().flatten().collect();
    let clf = fit_state_classifier(&x, &y, &data.sensor_names, config)?;
    let d = data.n_sensors();
    let per_state = clf
        .classes
        .iter()
        .map(|&s| Ok((s, feature_importance(&clf, s, d)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = ImportanceReport {
        classes: clf.classes.clone(),
        per_state,
        train_accuracy: clf.train_accuracy,
    };
    Ok((clf, report))
}

pub fn write_importance_csv(path: &Path, report: &ImportanceReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["state", "rank", "feature", "coefficient"])?;
    for (s, ranking) in &report.per_state {
        for (r, (f, c)) in ranking.iter().enumerate() {
            w.write_record([s.to_string(), (r + 1).to_string(), f.clone(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Failure-mode report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDescription {
    pub feature: String,
    pub symbol: String,
    pub description: String,
}

/// Reads `feature,symbol,description` rows.
pub fn load_sensor_descriptions(path: &Path) -> Result<Vec<SensorDescription>> {
    if !path.exists() {
        return Err(Error::DatasetNotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSensor {
    pub feature: String,
    pub coefficient: f64,
    pub symbol: Option<String>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModeEntry {
    pub state: usize,
    pub n_cycles: usize,
    pub train_accuracy: f64,
    pub ranking: Vec<RankedSensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureModeReport {
    pub entries: Vec<FailureModeEntry>,
    pub warnings: Vec<String>,
}

/// For each failure state, fits "this failure state vs non-failure states"
/// and ranks sensors by the failure-side coefficient. A missing description
/// file produces a warning, not an error.
pub fn failure_mode_report(
    params: &IohmmParams,
    data: &RunToFailureDataset,
    failure_states: &BTreeSet<usize>,
    descriptions: Option<&Path>,
    config: &ClassifierConfig,
) -> Result<FailureModeReport> {
    let mut warnings = Vec::new();
    let desc = match descriptions {
        Some(p) => match load_sensor_descriptions(p) {
            Ok(d) => d,
            Err(e) => {
                warnings.push(format!(
                    "sensor descriptions unavailable ({e}); rankings emitted without them"
                ));
                Vec::new()
            }
        },
        None => Vec::new(),
    };
    let paths = decode_paths(params, data)?;
    let mut entries = Vec::new();
    for &f in failure_states {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (unit, path) in data.units.iter().zip(&paths) {
            for (row, &s) in unit.sensors.iter().zip(path) {
                if s == f {
                    x.push(row.clone());
                    y.push(1);
                } else if !failure_states.contains(&s) {
                    x.push(row.clone());
                    y.push(0);
                }
            }
        }
        let n_cycles = y.iter().filter(|&&v| v == 1).count();
        if n_cycles == 0 {
            return Err(Error::invalid(format!(
                "failure state {f} never occurs in the decoded data"
            )));
        }
        let clf = fit_state_classifier(&x, &y, &data.sensor_names, config)?;
        let ranking = feature_importance(&clf, 1, data.n_sensors())?
            .into_iter()
            .map(|(feature, coefficient)| {
                let d = desc.iter().find(|d| d.feature == feature);
                RankedSensor {
                    symbol: d.map(|d| d.symbol.clone()),
                    description: d.map(|d| d.description.clone()),
                    feature,
                    coefficient,
                }
            })
            .collect();
        entries.push(FailureModeEntry {
            state: f,
            n_cycles,
            train_accuracy: clf.train_accuracy,
            ranking,
        });
    }
    if entries.is_empty() {
        return Err(Error::invalid("no failure states to report on"));
    }
    Ok(FailureModeReport { entries, warnings })
}

pub fn write_failure_mode_csv(path: &Path, report: &FailureModeReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "state",
        "rank",
        "feature",
        "coefficient",
        "symbol",
        "description",
    ])?;
    for e in &report.entries {
        for (r, s) in e.ranking.iter().enumerate() {
            w.write_record([
                e.state.to_string(),
                (r + 1).to_string(),
                s.feature.clone(),
                s.coefficient.to_string(),
                s.symbol.clone().unwrap_or_default(),
                s.description.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::Rng;

    fn names(d: usize) -> Vec<String> {
        (1..=d).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn separable_two_class() {
        let mut rng = stats::seeded(1);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<usize> = x
            .iter()
            .map(|r| usize::from(r[0] > 0.1))
            .map(|c| c * 7)
            .collect();
        let clf = fit_state_classifier(&x, &y, &names(2), &ClassifierConfig::default()).unwrap();
        assert_eq!(clf.classes, vec![0, 7]);
        assert!(clf.train_accuracy >= 0.99, "{}", clf.train_accuracy);
        assert!(clf.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(
            fit_state_classifier(&x, &[3, 3], &names(1), &ClassifierConfig::default()).is_err()
        );
    }

    #[test]
    fn importance_sorts_by_magnitude() {
        let clf = StateClassifier {
            classes: vec![0, 4],
            feature_names: names(3),
            mean: vec![0.0; 3],
            scale: vec![1.0; 3],
            weights: vec![vec![0.0; 3], vec![2.0, -5.0, 0.1]],
            bias: vec![0.0; 2],
            train_accuracy: 1.0,
            loss_trace: vec![],
        };
        let top = feature_importance(&clf, 4, 2).unwrap();
        assert_eq!(top, vec![("f2".to_string(), -5.0), ("f1".to_string(), 2.0)]);
        assert_eq!(feature_importance(&clf, 4, 10).unwrap().len(), 3);
        assert!(feature_importance(&clf, 9, 1).is_err());
    }
}

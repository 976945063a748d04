use serde::{Deserialize, Serialize};

use super::IohmmParams;
use crate::error::{Error, Result};

/// Smoothed state posteriors `gamma[t][i] = P(x_t = i | U, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSequence {
    pub gamma: Vec<Vec<f64>>,
    /// `log c_t` including the emission shift, so that their sum is the log-likelihood.
    pub log_scales: Vec<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub log_prob: f64,
}

/// Scaled forward-backward quantities for one sequence.
pub(crate) struct ForwardBackward {
    /// Normalized forward variables (each row sums to 1).
    pub alpha: Vec<Vec<f64>>,
    /// Backward variables scaled by the same per-step factors.
    pub beta: Vec<Vec<f64>>,
    /// Emission likelihoods divided by `exp(shift_t)`.
    pub emis: Vec<Vec<f64>>,
    /// Per-step normalizers of the scaled recursion.
    pub scale: Vec<f64>,
    pub log_scales: Vec<f64>,
}

impl ForwardBackward {
    pub fn log_likelihood(&self) -> f64 {
        self.log_scales.iter().sum()
    }

    pub fn gamma(&self) -> Vec<Vec<f64>> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| {
                let mut g: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
                let s: f64 = g.iter().sum();
                g.iter_mut().for_each(|v| *v /= s);
                g
            })
            .collect()
    }
}

/// Largest exponent kept when rescaling emission likelihoods.
const MAX_LOG_RATIO: f64 = 700.0;

/// Scales `exp(log_emis)` by the shift `max_j (log_emis_j + ln pred_j)` over
/// states with positive predicted mass, so the per-step normalizer
/// `sum_j pred_j * emis_j` is at least 1 and cannot underflow. Returns the
/// scaled emissions and the shift, or `None` when no state is reachable.
fn rescale(pred: &[f64], log_emis: &[f64]) -> Option<(Vec<f64>, f64)> {
    let shift = pred
        .iter()
        .zip(log_emis)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, l)| l + p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return None;
    }
    let emis = log_emis
        .iter()
        .map(|l| (l - shift).min(MAX_LOG_RATIO).exp())
        .collect();
    Some((emis, shift))
}

pub(crate) fn forward_backward(
    params: &IohmmParams,
    u: &[usize],
    y: &[Vec<f64>],
) -> Result<ForwardBackward> {
    params.check_sequence(u, y)?;
    let n = params.n_states;
    let t_len = y.len();

    let mut alpha = vec![vec![0.0; n]; t_len];
    let mut emis = Vec::with_capacity(t_len);
    let mut scale = vec![0.0; t_len];
    let mut log_scales = vec![0.0; t_len];
    let mut pred = params.initial.clone();
    for t in 0..t_len {
        if t > 0 {
            let a = &params.transitions[u[t]];
            for j in 0..n {
                pred[j] = (0..n).map(|i| alpha[t - 1][i] * a[i][j]).sum();
            }
        }
        let le: Vec<f64> = (0..n)
            .map(|i| params.log_emission(i, u[t], &y[t]))
            .collect();
        let (e, shift) = rescale(&pred, &le).ok_or_else(|| {
            Error::Numerical(format!(
                "forward recursion underflowed at t = {}: no state is reachable",
                t + 1
            ))
        })?;
        for j in 0..n {
            alpha[t][j] = pred[j] * e[j];
        }
        let c: f64 = alpha[t].iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Numerical(format!(
                "forward recursion produced normalizer {c} at t = {}",
                t + 1
            )));
        }
        alpha[t].iter_mut().for_each(|v| *v /= c);
        scale[t] = c;
        log_scales[t] = c.ln() + shift;
        emis.push(e);
    }

    let mut beta = vec![vec![1.0; n]; t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let a = &params.transitions[u[t + 1]];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[i][j] * emis[t + 1][j] * beta[t + 1][j];
            }
            beta[t][i] = acc / scale[t + 1];
        }
    }
    Ok(ForwardBackward {
        alpha,
        beta,
        emis,
        scale,
        log_scales,
    })
}

pub fn posterior_gamma(
    params: &IohmmParams,
    u: &[usize],
    y: &[Vec<f64>],
) -> Result<PosteriorSequence> {
    let fb = forward_backward(params, u, y)?;
    Ok(PosteriorSequence {
        gamma: fb.gamma(),
        log_likelihood: fb.log_likelihood(),
        log_scales: fb.log_scales,
    })
}

/// `log P(Y | U, λ)` from a forward pass.
pub fn log_likelihood(params: &IohmmParams, u: &[usize], y: &[Vec<f64>]) -> Result<f64> {
    Ok(forward_backward(params, u, y)?.log_likelihood())
}

/// Most probable state path, computed entirely in log space. Ties go to the
/// lower state index, both for predecessors and for the final state.
pub fn viterbi(params: &IohmmParams, u: &[usize], y: &[Vec<f64>]) -> Result<ViterbiPath> {
    params.check_sequence(u, y)?;
    let n = params.n_states;
    let t_len = y.len();
    let log_a: Vec<Vec<Vec<f64>>> = params
        .transitions
        .iter()
        .map(|a| {
            a.iter()
                .map(|r| r.iter().map(|p| p.ln()).collect())
                .collect()
        })
        .collect();
    let mut delta: Vec<f64> = (0..n)
        .map(|i| params.initial[i].ln() + params.log_emission(i, u[0], &y[0]))
        .collect();
    let mut back = vec![vec![0usize; n]; t_len];
    for t in 1..t_len {
        let la = &log_a[u[t]];
        let mut next = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n {
                let v = delta[i] + la[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            back[t][j] = arg;
            next[j] = best + params.log_emission(j, u[t], &y[t]);
        }
        delta = next;
    }
    let (mut last, mut best) = (0, f64::NEG_INFINITY);
    for (i, &v) in delta.iter().enumerate() {
        if v > best {
            best = v;
            last = i;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::Numerical(
            "every state path has zero probability".into(),
        ));
    }
    let mut states = vec![0; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t][states[t]];
    }
    Ok(ViterbiPath {
        states,
        log_prob: best,
    })
}

/// `log P(states, Y | U, λ)` evaluated directly along a given path.
pub fn joint_log_prob(
    params: &IohmmParams,
    u: &[usize],
    y: &[Vec<f64>],
    states: &[usize],
) -> Result<f64> {
    params.check_sequence(u, y)?;
    if states.len() != y.len() {
        return Err(Error::dims(
            "state path length differs from the observation length",
        ));
    }
    if let Some(bad) = states.iter().find(|&&s| s >= params.n_states) {
        return Err(Error::invalid(format!("state {bad} out of range")));
    }
    let mut lp = params.initial[states[0]].ln() + params.log_emission(states[0], u[0], &y[0]);
    for t in 1..y.len() {
        lp += params.transitions[u[t]][states[t - 1]][states[t]].ln();
        lp += params.log_emission(states[t], u[t], &y[t]);
    }
    Ok(lp)
}

/// Result of one incremental decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    /// End state of the most probable path over the prefix seen so far.
    pub viterbi_state: usize,
    /// Filtered posterior `P(x_t | u_1..t, y_1..t)`.
    pub filtered: Vec<f64>,
}

/// Incremental Viterbi and filtering over a growing prefix, `O(N^2)` per cycle.
#[derive(Debug, Clone)]
pub struct OnlineDecoder<'a> {
    params: &'a IohmmParams,
    delta: Vec<f64>,
    alpha: Vec<f64>,
    t: usize,
}

impl<'a> OnlineDecoder<'a> {
    pub fn new(params: &'a IohmmParams) -> Self {
        OnlineDecoder {
            params,
            delta: Vec::new(),
            alpha: Vec::new(),
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.delta.clear();
        self.alpha.clear();
        self.t = 0;
    }

    pub fn cycles_seen(&self) -> usize {
        self.t
    }

    pub fn push(&mut self, u: usize, y: &[f64]) -> Result<OnlineState> {
        let p = self.params;
        if u >= p.n_inputs {
            return Err(Error::dims(format!(
                "input symbol {u} outside [0, {})",
                p.n_inputs
            )));
        }
        if y.len() != p.dim {
            return Err(Error::dims(format!(
                "observation has {} features, model expects {}",
                y.len(),
                p.dim
            )));
        }
        let n = p.n_states;
        let le: Vec<f64> = (0..n).map(|i| p.log_emission(i, u, y)).collect();
        let (delta, pred): (Vec<f64>, Vec<f64>) = if self.t == 0 {
            (
                (0..n).map(|i| p.initial[i].ln() + le[i]).collect(),
                p.initial.clone(),
            )
        } else {
            let a = &p.transitions[u];
            let mut d = vec![f64::NEG_INFINITY; n];
            let mut pr = vec![0.0; n];
            for j in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut acc = 0.0;
                for i in 0..n {
                    let v = self.delta[i] + a[i][j].ln();
                    if v > best {
                        best = v;
                    }
                    acc += self.alpha[i] * a[i][j];
                }
                d[j] = best + le[j];
                pr[j] = acc;
            }
            (d, pr)
        };
        let (e, _) = rescale(&pred, &le).ok_or_else(|| {
            Error::Numerical(format!("online filter underflowed at cycle {}", self.t + 1))
        })?;
        let mut alpha: Vec<f64> = pred.iter().zip(&e).map(|(a, b)| a * b).collect();
        let c: f64 = alpha.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Numerical(format!(
                "online filter underflowed at cycle {}",
                self.t + 1
            )));
        }
        alpha.iter_mut().for_each(|v| *v /= c);
        // Rebase delta to keep it bounded over long prefixes; argmax is unchanged.
        let dmax = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if dmax == f64::NEG_INFINITY {
            return Err(Error::Numerical(
                "every prefix path has zero probability".into(),
            ));
        }
        self.delta = delta.iter().map(|d| d - dmax).collect();
        self.alpha = alpha;
        self.t += 1;
        let mut arg = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &v) in self.delta.iter().enumerate() {
            if v > best {
                best = v;
                arg = i;
            }
        }
        Ok(OnlineState {
            viterbi_state: arg,
            filtered: self.alpha.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::random_model;
    use super::super::Gaussian;
    use super::*;
    use crate::stats;
    use rand::Rng;

    fn forced() -> IohmmParams {
        IohmmParams {
            n_states: 2,
            n_inputs: 1,
            dim: 1,
            initial: vec![1.0, 0.0],
            transitions: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            emissions: vec![
                vec![Gaussian {
                    mean: vec![0.0],
                    var: vec![1.0],
                }],
                vec![Gaussian {
                    mean: vec![3.0],
                    var: vec![1.0],
                }],
            ],
        }
    }

    #[test]
    fn forced_path_posterior_is_one_hot() {
        let p = forced();
        let y = vec![vec![3.0], vec![2.5], vec![-1.0]];
        let post = posterior_gamma(&p, &[0, 0, 0], &y).unwrap();
        for row in &post.gamma {
            assert!((row[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn left_to_right_forced_transitions() {
        let mk = |m: f64| {
            vec![Gaussian {
                mean: vec![m],
                var: vec![1.0],
            }]
        };
        let p = IohmmParams {
            n_states: 3,
            n_inputs: 1,
            dim: 1,
            initial: vec![1.0, 0.0, 0.0],
            transitions: vec![vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0],
            ]],
            emissions: vec![mk(0.0), mk(0.0), mk(0.0)],
        };
        let y = vec![vec![0.0]; 5];
        assert_eq!(
            viterbi(&p, &[0; 5], &y).unwrap().states,
            vec![0, 1, 2, 2, 2]
        );
    }

    #[test]
    fn exact_tie_prefers_lower_state() {
        let g = vec![Gaussian {
            mean: vec![0.0],
            var: vec![1.0],
        }];
        let p = IohmmParams {
            n_states: 2,
            n_inputs: 1,
            dim: 1,
            initial: vec![0.5, 0.5],
            transitions: vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]],
            emissions: vec![g.clone(), g],
        };
        let y = vec![vec![0.1], vec![0.2], vec![0.3]];
        let path = viterbi(&p, &[0; 3], &y).unwrap();
        assert_eq!(path.states, vec![0, 0, 0]);
        let other = joint_log_prob(&p, &[0; 3], &y, &[1, 1, 1]).unwrap();
        assert_eq!(path.log_prob, other);
    }

    #[test]
    fn impossible_observation_is_finite() {
        let p = forced();
        let mut y = vec![vec![0.0]; 4];
        let base = log_likelihood(&p, &[0; 4], &y).unwrap();
        y.push(vec![1e6]);
        let ll = log_likelihood(&p, &[0; 5], &y).unwrap();
        assert!(ll.is_finite());
        assert!(ll < base - 1e10);
        assert_eq!(ll, log_likelihood(&p, &[0; 5], &y).unwrap());
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let p = forced();
        assert!(matches!(
            posterior_gamma(&p, &[0, 0], &[vec![0.0]]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            viterbi(&p, &[0], &[vec![0.0, 1.0]]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            log_likelihood(&p, &[3], &[vec![0.0]]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn online_decoder_agrees_with_batch_decoding() {
        let mut rng = stats::seeded(77);
        for _ in 0..30 {
            let n = rng.gen_range(2..=4);
            let k = rng.gen_range(1..=2);
            let p = random_model(n, k, 2, &mut rng);
            let t_len = rng.gen_range(1..=12);
            let u: Vec<usize> = (0..t_len).map(|_| rng.gen_range(0..k)).collect();
            let y: Vec<Vec<f64>> = (0..t_len)
                .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let mut dec = OnlineDecoder::new(&p);
            for t in 0..t_len {
                let st = match dec.push(u[t], &y[t]) {
                    Ok(s) => s,
                    Err(_) => break,
                };
                let path = viterbi(&p, &u[..=t], &y[..=t]).unwrap();
                assert_eq!(st.viterbi_state, path.states[t]);
                let fb = forward_backward(&p, &u[..=t], &y[..=t]).unwrap();
                for (a, b) in st.filtered.iter().zip(&fb.alpha[t]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

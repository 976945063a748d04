use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::forward_backward;
use super::{Gaussian, IohmmParams, VAR_FLOOR};
use crate::data::RunToFailureDataset;
use crate::error::{Error, Result};
use crate::stats::{self, SeededRng};

/// Pseudo-count mixed into transition rows that received no expected visits.
const EMPTY_ROW_SMOOTHING: f64 = 1e-3;
const EMPTY_COUNT: f64 = 1e-12;
const KMEANS_MAX_POINTS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmInit {
    /// Emission means from seeded k-means on input-centered observations.
    KMeans,
    /// Emission means from randomly chosen observations.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop when the absolute log-likelihood change falls below this value.
    pub tol: f64,
    pub max_epochs: usize,
    pub n_restarts: usize,
    pub seed: u64,
    pub init: EmInit,
    pub var_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-5,
            max_epochs: 1000,
            n_restarts: 3,
            seed: 0,
            init: EmInit::KMeans,
            var_floor: VAR_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub params: IohmmParams,
    /// Log-likelihood of the training data at each epoch; the last entry
    /// belongs to the returned parameters.
    pub trace: Vec<f64>,
    pub restart: usize,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

struct Sequence<'a> {
    u: &'a [usize],
    y: &'a [Vec<f64>],
}

/// Expected sufficient statistics accumulated over sequences.
#[derive(Clone)]
struct Stats {
    ll: f64,
    pi: Vec<f64>,
    trans: Vec<Vec<Vec<f64>>>,
    w: Vec<Vec<f64>>,
    sy: Vec<Vec<Vec<f64>>>,
    syy: Vec<Vec<Vec<f64>>>,
}

impl Stats {
    fn zeros(n: usize, k: usize, d: usize) -> Self {
        Stats {
            ll: 0.0,
            pi: vec![0.0; n],
            trans: vec![vec![vec![0.0; n]; n]; k],
            w: vec![vec![0.0; k]; n],
            sy: vec![vec![vec![0.0; d]; k]; n],
            syy: vec![vec![vec![0.0; d]; k]; n],
        }
    }

    fn add(&mut self, o: &Stats) {
        self.ll += o.ll;
        add_vec(&mut self.pi, &o.pi);
        for (a, b) in self.trans.iter_mut().zip(&o.trans) {
            for (r, q) in a.iter_mut().zip(b) {
                add_vec(r, q);
            }
        }
        for (a, b) in self.w.iter_mut().zip(&o.w) {
            add_vec(a, b);
        }
        for (a, b) in self.sy.iter_mut().zip(&o.sy) {
            for (r, q) in a.iter_mut().zip(b) {
                add_vec(r, q);
            }
        }
        for (a, b) in self.syy.iter_mut().zip(&o.syy) {
            for (r, q) in a.iter_mut().zip(b) {
                add_vec(r, q);
            }
        }
    }
}

fn add_vec(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn e_step_one(params: &IohmmParams, seq: &Sequence) -> Result<Stats> {
    let (n, k, d) = (params.n_states, params.n_inputs, params.dim);
    let fb = forward_backward(params, seq.u, seq.y)?;
    let gamma = fb.gamma();
    let mut st = Stats::zeros(n, k, d);
    st.ll = fb.log_likelihood();
    st.pi.copy_from_slice(&gamma[0]);
    for t in 0..seq.y.len() {
        let ut = seq.u[t];
        for i in 0..n {
            let g = gamma[t][i];
            st.w[i][ut] += g;
            for (dim, &v) in seq.y[t].iter().enumerate() {
                st.sy[i][ut][dim] += g * v;
                st.syy[i][ut][dim] += g * v * v;
            }
        }
        if t > 0 {
            let a = &params.transitions[ut];
            let tr = &mut st.trans[ut];
            for i in 0..n {
                let ai = fb.alpha[t - 1][i];
                if ai == 0.0 {
                    continue;
                }
                for j in 0..n {
                    tr[i][j] += ai * a[i][j] * fb.emis[t][j] * fb.beta[t][j] / fb.scale[t];
                }
            }
        }
    }
    Ok(st)
}

fn e_step(params: &IohmmParams, seqs: &[Sequence]) -> Result<Stats> {
    let per: Vec<Stats> = seqs
        .par_iter()
        .map(|s| e_step_one(params, s))
        .collect::<Result<_>>()?;
    // Sequential reduction keeps the floating-point sum order fixed.
    let mut total = Stats::zeros(params.n_states, params.n_inputs, params.dim);
    for s in &per {
        total.add(s);
    }
    Ok(total)
}

fn m_step(prev: &IohmmParams, st: &Stats, n_seqs: usize, var_floor: f64) -> IohmmParams {
    let (n, k, d) = (prev.n_states, prev.n_inputs, prev.dim);
    let mut next = prev.clone();
    let pi_sum: f64 = st.pi.iter().sum();
    next.initial = st.pi.iter().map(|p| p / pi_sum).collect();
    debug_assert!((pi_sum - n_seqs as f64).abs() < 1e-6 * n_seqs as f64);
    for u in 0..k {
        for i in 0..n {
            let row = &st.trans[u][i];
            let total: f64 = row.iter().sum();
            next.transitions[u][i] = if total > EMPTY_COUNT {
                row.iter().map(|c| c / total).collect()
            } else {
                let z = 1.0 + n as f64 * EMPTY_ROW_SMOOTHING;
                prev.transitions[u][i]
                    .iter()
                    .map(|p| (p + EMPTY_ROW_SMOOTHING) / z)
                    .collect()
            };
        }
    }
    for i in 0..n {
        for u in 0..k {
            let w = st.w[i][u];
            if w <= EMPTY_COUNT {
                continue;
            }
            let mean: Vec<f64> = (0..d).map(|j| st.sy[i][u][j] / w).collect();
            let var = (0..d)
                .map(|j| (st.syy[i][u][j] / w - mean[j] * mean[j]).max(var_floor))
                .collect();
            next.emissions[i][u] = Gaussian { mean, var };
        }
    }
    next
}

fn init_params(
    seqs: &[Sequence],
    n: usize,
    k: usize,
    d: usize,
    cfg: &EmConfig,
    rng: &mut SeededRng,
) -> Result<IohmmParams> {
    let floor = cfg.var_floor;
    let points: Vec<(usize, &Vec<f64>)> = seqs
        .iter()
        .flat_map(|s| s.u.iter().copied().zip(s.y.iter()))
        .collect();

    // Per-input mean and variance of the observations.
    let mut in_mean = vec![vec![0.0; d]; k];
    let mut in_var = vec![vec![0.0; d]; k];
    let mut in_count = vec![0usize; k];
    for (u, y) in &points {
        in_count[*u] += 1;
        add_vec(&mut in_mean[*u], y);
    }
    for u in 0..k {
        if in_count[u] > 0 {
            in_mean[u].iter_mut().for_each(|m| *m /= in_count[u] as f64);
        }
    }
    for (u, y) in &points {
        for j in 0..d {
            in_var[*u][j] += (y[j] - in_mean[*u][j]).powi(2);
        }
    }
    for u in 0..k {
        for j in 0..d {
            in_var[u][j] = if in_count[u] > 0 {
                (in_var[u][j] / in_count[u] as f64).max(floor)
            } else {
                1.0
            };
        }
    }

    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|(u, y)| y.iter().zip(&in_mean[*u]).map(|(a, b)| a - b).collect())
        .collect();
    let centroids: Vec<Vec<f64>> = match cfg.init {
        EmInit::KMeans => {
            let pool: Vec<Vec<f64>> = if centered.len() > KMEANS_MAX_POINTS {
                sample(rng, centered.len(), KMEANS_MAX_POINTS)
                    .into_iter()
                    .map(|i| centered[i].clone())
                    .collect()
            } else {
                centered.clone()
            };
            stats::kmeans(&pool, n, 100, rng)?.centroids
        }
        EmInit::Random => sample(rng, centered.len(), n)
            .into_iter()
            .map(|i| centered[i].clone())
            .collect(),
    };

    // Emission per (state, input) from the points nearest each centroid.
    let mut cnt = vec![vec![0usize; k]; n];
    let mut sum = vec![vec![vec![0.0; d]; k]; n];
    let mut sq = vec![vec![vec![0.0; d]; k]; n];
    for ((u, y), c) in points.iter().zip(&centered) {
        let s = stats::nearest(&centroids, c);
        cnt[s][*u] += 1;
        for j in 0..d {
            sum[s][*u][j] += y[j];
            sq[s][*u][j] += y[j] * y[j];
        }
    }
    let emissions = (0..n)
        .map(|s| {
            (0..k)
                .map(|u| {
                    let c = cnt[s][u];
                    if c >= 2 {
                        let mean: Vec<f64> = sum[s][u].iter().map(|v| v / c as f64).collect();
                        let var = (0..d)
                            .map(|j| {
                                (sq[s][u][j] / c as f64 - mean[j] * mean[j])
                                    .max(floor)
                                    .max(1e-2 * in_var[u][j])
                            })
                            .collect();
                        Gaussian { mean, var }
                    } else {
                        Gaussian {
                            mean: centroids[s]
                                .iter()
                                .zip(&in_mean[u])
                                .map(|(a, b)| a + b)
                                .collect(),
                            var: in_var[u].clone(),
                        }
                    }
                })
                .collect()
        })
        .collect();

    let transitions = (0..k)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let row: Vec<f64> = (0..n).map(|_| 1.0 + 0.1 * rng.gen::<f64>()).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
        .collect();

    Ok(IohmmParams {
        n_states: n,
        n_inputs: k,
        dim: d,
        initial: vec![1.0 / n as f64; n],
        transitions,
        emissions,
    })
}

fn run_restart(
    seqs: &[Sequence],
    n: usize,
    k: usize,
    d: usize,
    cfg: &EmConfig,
    restart: usize,
) -> Result<EmFit> {
    let mut rng = stats::seeded_stream(cfg.seed, restart as u64);
    let mut params = init_params(seqs, n, k, d, cfg, &mut rng)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for epoch in 0..cfg.max_epochs {
        let st = e_step(&params, seqs)?;
        if !st.ll.is_finite() {
            return Err(Error::Numerical(format!(
                "log-likelihood became {} at epoch {} of restart {restart}",
                st.ll,
                epoch + 1
            )));
        }
        let prev = trace.last().copied();
        trace.push(st.ll);
        if let Some(p) = prev {
            if (st.ll - p).abs() < cfg.tol {
                converged = true;
                break;
            }
        }
        if epoch + 1 == cfg.max_epochs {
            break;
        }
        params = m_step(&params, &st, seqs.len(), cfg.var_floor);
    }
    Ok(EmFit {
        params,
        trace,
        restart,
        converged,
    })
}

/// Baum-Welch for the IOHMM. The number of inputs is inferred as one more
/// than the largest input symbol in `train`.
pub fn fit_em(train: &RunToFailureDataset, n_states: usize, config: &EmConfig) -> Result<EmFit> {
    let mut k = 0;
    for u in &train.units {
        if let Some(m) = u.symbols()?.iter().max() {
            k = k.max(m + 1);
        }
    }
    fit_em_with_inputs(train, n_states, k.max(1), config)
}

pub fn fit_em_with_inputs(
    train: &RunToFailureDataset,
    n_states: usize,
    n_inputs: usize,
    config: &EmConfig,
) -> Result<EmFit> {
    if train.units.is_empty() || train.total_cycles() == 0 {
        return Err(Error::invalid("cannot fit a model on an empty dataset"));
    }
    if n_states < 2 {
        return Err(Error::invalid("n_states must be at least 2"));
    }
    if n_states > train.total_cycles() {
        return Err(Error::invalid(format!(
            "n_states = {n_states} exceeds the {} available cycles",
            train.total_cycles()
        )));
    }
    if config.max_epochs == 0 || config.n_restarts == 0 {
        return Err(Error::invalid("max_epochs and n_restarts must be positive"));
    }
    train.validate(Some(n_inputs))?;
    let seqs: Vec<Sequence> = train
        .units
        .iter()
        .map(|u| {
            Ok(Sequence {
                u: u.symbols()?,
                y: &u.sensors,
            })
        })
        .collect::<Result<_>>()?;
    let d = train.n_sensors();
    let fits: Vec<Result<EmFit>> = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| run_restart(&seqs, n_states, n_inputs, d, config, r))
        .collect();
    let mut best: Option<EmFit> = None;
    let mut first_err = None;
    for f in fits {
        match f {
            Ok(fit) => {
                if best
                    .as_ref()
                    .is_none_or(|b| fit.final_log_likelihood() > b.final_log_likelihood())
                {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap())
}

/// Plain Gaussian HMM: every cycle is treated as input symbol 0.
pub fn fit_hmm(train: &RunToFailureDataset, n_states: usize, config: &EmConfig) -> Result<EmFit> {
    let mut flat = train.clone();
    for u in &mut flat.units {
        u.input_symbols = Some(vec![0; u.len()]);
    }
    fit_em_with_inputs(&flat, n_states, 1, config)
}

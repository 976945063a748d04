//! Fully connected value network with rectifier hidden layers and a linear
//! output layer, trained by plain gradient descent with analytic gradients.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::doc;
use crate::error::{Error, Result};
use crate::stats;

pub const HIDDEN: [usize; 2] = [128, 256];
pub const NETWORK_KIND: &str = "network-params";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// `[d_in, hidden..., n_out]`
    pub sizes: Vec<usize>,
    /// Per layer, row-major `[out][in]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Rescale the whole gradient to this L2 norm when it is exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            clip_norm: None,
        }
    }
}

/// One temporal-difference regression example: only output `action` is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct QSample {
    pub x: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

struct Cache {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

impl NetworkParams {
    /// The standard `[d_in, 128, 256, n_actions]` network.
    pub fn init(d_in: usize, n_actions: usize, seed: u64) -> Result<Self> {
        Self::with_sizes(&[d_in, HIDDEN[0], HIDDEN[1], n_actions], seed)
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn with_sizes(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(
                "network needs at least two positive layer sizes",
            ));
        }
        let mut rng = stats::seeded(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push(
                (0..w[0] * w[1])
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; w[1]]);
        }
        Ok(NetworkParams {
            sizes: sizes.to_vec(),
            weights,
            biases,
            seed,
        })
    }

    pub fn d_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.sizes.len();
        if l < 2 || self.weights.len() != l - 1 || self.biases.len() != l - 1 {
            return Err(Error::InvariantViolation(
                "layer count does not match sizes".into(),
            ));
        }
        for (k, w) in self.sizes.windows(2).enumerate() {
            if self.weights[k].len() != w[0] * w[1] || self.biases[k].len() != w[1] {
                return Err(Error::InvariantViolation(format!(
                    "layer {k} has inconsistent shape"
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::InvariantViolation(
                "network has non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::dims(format!(
                "network expects {} inputs, got {}",
                self.d_in(),
                x.len()
            )));
        }
        Ok(())
    }

    fn layer(&self, k: usize, input: &[f64]) -> Vec<f64> {
        let n_in = self.sizes[k];
        let w = &self.weights[k];
        self.biases[k]
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    /// Per-action values.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).pre.pop().unwrap())
    }

    fn forward_cached(&self, x: &[f64]) -> Cache {
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut h = x.to_vec();
        for k in 0..self.n_layers() {
            let z = self.layer(k, &h);
            let next = if k + 1 < self.n_layers() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Cache { inputs, pre }
    }

    /// Accumulates into `grad` (flat layout) the gradient given `dout = dL/d(output)`.
    fn backprop(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        let offsets = self.offsets();
        let mut delta = dout.to_vec();
        for k in (0..self.n_layers()).rev() {
            let n_in = self.sizes[k];
            let (wo, bo) = offsets[k];
            let input = &cache.inputs[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let g = &mut grad[wo + o * n_in..wo + (o + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[bo + o] += d;
            }
            if k == 0 {
                break;
            }
            let w = &self.weights[k];
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (p, a) in prev.iter_mut().zip(row) {
                    *p += d * a;
                }
            }
            for (p, z) in prev.iter_mut().zip(&cache.pre[k - 1]) {
                if *z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// `(weights offset, bias offset)` of every layer in the flat layout.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                let o = (off, off + w.len());
                off += w.len() + b.len();
                o
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters as one vector: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::dims(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mean squared error over the selected outputs, `mean_b (y_b - Q(x_b, a_b))^2`,
    /// and its gradient.
    pub fn mse_loss_grad(&self, batch: &[QSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.n_params()];
        let mut loss = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            if !s.target.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite TD target {}",
                    s.target
                )));
            }
            if s.action >= self.n_out() {
                return Err(Error::invalid(format!(
                    "action {} outside the network output",
                    s.action
                )));
            }
            let cache = self.forward_cached(&s.x);
            let q = cache.pre.last().unwrap()[s.action];
            let err = q - s.target;
            loss += err * err / n;
            let mut dout = vec![0.0; self.n_out()];
            dout[s.action] = 2.0 * err / n;
            self.backprop(&cache, &dout, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Behavior-cloning loss `mean_b 1/2 ||Q(x_b) - t_b||^2` over full target vectors.
    pub fn vector_loss_grad(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.n_params()];
        let mut loss = 0.0;
        for (x, t) in batch {
            self.check_input(x)?;
            if t.len() != self.n_out() {
                return Err(Error::dims(
                    "target vector width differs from the network output",
                ));
            }
            let cache = self.forward_cached(x);
            let out = cache.pre.last().unwrap();
            let dout: Vec<f64> = out.iter().zip(t).map(|(o, t)| (o - t) / n).collect();
            loss += out
                .iter()
                .zip(t)
                .map(|(o, t)| 0.5 * (o - t) * (o - t))
                .sum::<f64>()
                / n;
            self.backprop(&cache, &dout, &mut grad);
        }
        Ok((loss, grad))
    }

    fn apply_gradient(&mut self, mut grad: Vec<f64>, config: &TrainConfig) -> Result<()> {
        if let Some(c) = config.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                grad.iter_mut().for_each(|g| *g *= c / norm);
            }
        }
        let offsets = self.offsets();
        for (k, (wo, bo)) in offsets.into_iter().enumerate() {
            let nw = self.weights[k].len();
            for (w, g) in self.weights[k].iter_mut().zip(&grad[wo..wo + nw]) {
                *w -= config.lr * g;
            }
            let nb = self.biases[k].len();
            for (b, g) in self.biases[k].iter_mut().zip(&grad[bo..bo + nb]) {
                *b -= config.lr * g;
            }
        }
        if !self.is_finite() {
            return Err(Error::Numerical("network parameters diverged".into()));
        }
        Ok(())
    }

    /// One gradient step on the batch; returns the loss before the update.
    pub fn train_step(&mut self, batch: &[QSample], config: &TrainConfig) -> Result<f64> {
        let (loss, grad) = self.mse_loss_grad(batch)?;
        self.apply_gradient(grad, config)?;
        Ok(loss)
    }

    pub fn train_step_vector(
        &mut self,
        batch: &[(Vec<f64>, Vec<f64>)],
        config: &TrainConfig,
    ) -> Result<f64> {
        let (loss, grad) = self.vector_loss_grad(batch)?;
        self.apply_gradient(grad, config)?;
        Ok(loss)
    }

    /// Index of the largest output; ties go to the lower index.
    pub fn greedy(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn save(&self, path: &Path, config: Option<&TrainConfig>) -> Result<()> {
        self.validate()?;
        let d = NetworkDocument {
            network: self.clone(),
            train: config.copied(),
        };
        doc::write(path, NETWORK_KIND, NETWORK_VERSION, &d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: NetworkDocument = doc::read(path, NETWORK_KIND, NETWORK_VERSION)?;
        d.network.validate()?;
        Ok(d.network)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDocument {
    network: NetworkParams,
    train: Option<TrainConfig>,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 200,
            batch_size: 32,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcOutcome {
    pub params: NetworkParams,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Fraction of training pairs where the greedy action equals the expert's.
    pub agreement: f64,
}

/// Greedy-policy agreement with expert actions.
pub fn agreement(params: &NetworkParams, pairs: &[(Vec<f64>, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to score"));
    }
    let mut hits = 0;
    for (x, a) in pairs {
        if params.greedy(x)? == *a {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Regresses the outputs toward one-hot encodings of the expert actions with
/// shuffled minibatches.
pub fn clone_behavior(
    params: &NetworkParams,
    pairs: &[(Vec<f64>, usize)],
    config: &BcConfig,
) -> Result<BcOutcome> {
    if pairs.is_empty() {
        return Err(Error::invalid(
            "behavior cloning needs at least one expert pair",
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let n_out = params.n_out();
    let data: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|(x, a)| {
            if *a >= n_out {
                return Err(Error::invalid(format!(
                    "expert action {a} outside the network output"
                )));
            }
            if x.len() != params.d_in() {
                return Err(Error::dims(format!(
                    "expert features have width {}, network expects {}",
                    x.len(),
                    params.d_in()
                )));
            }
            let mut t = vec![0.0; n_out];
            t[*a] = 1.0;
            Ok((x.clone(), t))
        })
        .collect::<Result<_>>()?;
    let mut net = params.clone();
    let mut rng = stats::seeded(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> = chunk.iter().map(|&i| data[i].clone()).collect();
            total += net.train_step_vector(&batch, &config.train)?;
            batches += 1;
        }
        trace.push(total / batches as f64);
    }
    let agreement = agreement(&net, pairs)?;
    Ok(BcOutcome {
        params: net,
        loss_trace: trace,
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_seeds() {
        let a = NetworkParams::init(15, 2, 3).unwrap();
        assert_eq!(a.sizes, vec![15, 128, 256, 2]);
        assert_eq!(a.weights[0].len(), 15 * 128);
        assert_eq!(a.weights[1].len(), 128 * 256);
        assert_eq!(a.weights[2].len(), 256 * 2);
        assert_eq!(a, NetworkParams::init(15, 2, 3).unwrap());
        assert_ne!(a, NetworkParams::init(15, 2, 0).unwrap());
        assert!(NetworkParams::init(0, 2, 0).is_err());
    }

    #[test]
    fn hand_computed_forward() {
        let mut n = NetworkParams::with_sizes(&[2, 2, 1], 0).unwrap();
        n.weights = vec![vec![1.0, 0.0, 0.0, -1.0], vec![2.0, 3.0]];
        n.biases = vec![vec![0.5, 0.0], vec![-1.0]];
        // hidden = relu([x0 + 0.5, -x1]) ; out = 2 h0 + 3 h1 - 1
        let y = n.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![2.0 * 1.5 + 3.0 * 0.0 - 1.0]);
        let y = n.forward(&[-1.0, -2.0]).unwrap();
        assert_eq!(y, vec![0.0 + 6.0 - 1.0]);
        assert!(n.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut n = NetworkParams::init(4, 2, 1).unwrap();
        let z = vec![0.0; n.n_params()];
        n.set_flat(&z).unwrap();
        assert_eq!(n.forward(&[1.0, -2.0, 3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn stationary_batch_leaves_params_unchanged() {
        let mut n = NetworkParams::init(3, 2, 5).unwrap();
        let x = vec![0.2, -0.1, 0.7];
        let q = n.forward(&x).unwrap();
        let before = n.clone();
        let loss = n
            .train_step(
                &[QSample {
                    x,
                    action: 1,
                    target: q[1],
                }],
                &TrainConfig::default(),
            )
            .unwrap();
        assert!(loss < 1e-24);
        for (a, b) in n.flatten().iter().zip(before.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn overfits_one_sample() {
        let mut n = NetworkParams::init(3, 2, 9).unwrap();
        let s = QSample {
            x: vec![0.5, 0.1, -0.3],
            action: 0,
            target: 1.7,
        };
        let cfg = TrainConfig {
            lr: 1e-3,
            clip_norm: None,
        };
        let mut last = f64::INFINITY;
        for _ in 0..5000 {
            let l = n.train_step(std::slice::from_ref(&s), &cfg).unwrap();
            assert!(l <= last + 1e-15);
            last = l;
        }
        assert!(last < 1e-6, "{last}");
    }

    #[test]
    fn unselected_actions_get_no_gradient_on_output_layer() {
        let n = NetworkParams::init(3, 2, 2).unwrap();
        let (_, g) = n
            .mse_loss_grad(&[QSample {
                x: vec![1.0, 2.0, 3.0],
                action: 0,
                target: 5.0,
            }])
            .unwrap();
        let (wo, bo) = n.offsets()[2];
        assert!(g[wo + 256..wo + 512].iter().all(|&v| v == 0.0));
        assert_eq!(g[bo + 1], 0.0);
    }

    #[test]
    fn nan_target_rejected() {
        let mut n = NetworkParams::init(2, 2, 0).unwrap();
        let r = n.train_step(
            &[QSample {
                x: vec![0.0, 0.0],
                action: 0,
                target: f64::NAN,
            }],
            &TrainConfig::default(),
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        let n = NetworkParams::init(4, 2, 7).unwrap();
        n.save(&p, Some(&TrainConfig::default())).unwrap();
        assert_eq!(NetworkParams::load(&p).unwrap(), n);

        let mut bad = n.clone();
        bad.biases[1].pop();
        let text = doc::to_string(
            NETWORK_KIND,
            NETWORK_VERSION,
            &NetworkDocument {
                network: bad,
                train: None,
            },
        )
        .unwrap();
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            NetworkParams::load(&p),
            Err(Error::InvariantViolation(_))
        ));

        let text = doc::to_string(
            NETWORK_KIND,
            99,
            &NetworkDocument {
                network: n,
                train: None,
            },
        )
        .unwrap();
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            NetworkParams::load(&p),
            Err(Error::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let n = NetworkParams::init(2, 2, 0).unwrap();
        let pairs = vec![(vec![0.0, 1.0], 1)];
        let out = clone_behavior(
            &n,
            &pairs,
            &BcConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.params, n);
        assert!(clone_behavior(&n, &[], &BcConfig::default()).is_err());
    }
}

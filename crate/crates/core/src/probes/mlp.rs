use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_targets, feature_rows, ProbeFamily, ProbeModel, ProbeParams, Standardizer, TrainingMeta};
use crate::embedding::EmbeddingVector;
use crate::seed::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub width: usize,
    pub depth: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            width: 256,
            depth: 1,
            dropout: 0.0,
            lr: 1e-3,
            batch: 256,
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            standardize: true,
            seed: 0,
        }
    }
}

impl MlpParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.width == 0 || self.depth == 0 {
            return bad("mlp width and depth must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch, max_epochs and patience must be >= 1".into());
        }
        Ok(())
    }

    pub fn hyperparameters(&self) -> BTreeMap<String, String> {
        [
            ("width", self.width.to_string()),
            ("depth", self.depth.to_string()),
            ("dropout", self.dropout.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("batch", self.batch.to_string()),
            ("standardize", self.standardize.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform<R: Rng>(inputs: usize, outputs: usize, limit: f64, rng: &mut R) -> Self {
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        DenseLayer {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// ReLU hidden layers followed by a single sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Dropout multipliers per hidden layer (`0` or `1 / (1 - p)`).
pub type DropoutMask = Vec<Vec<f64>>;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// He-uniform hidden layers, Glorot-uniform output, zero biases.
    pub fn init<R: Rng>(dim: usize, width: usize, depth: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = dim;
        for _ in 0..depth {
            layers.push(DenseLayer::uniform(fan_in, width, (6.0 / fan_in as f64).sqrt(), rng));
            fan_in = width;
        }
        layers.push(DenseLayer::uniform(fan_in, 1, (6.0 / (fan_in as f64 + 1.0)).sqrt(), rng));
        Mlp { layers }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let (last, hidden) = self.layers.split_last().expect("mlp has an output layer");
        for layer in hidden {
            layer.apply(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|v| v.max(0.0)));
        }
        last.apply(&a, &mut z);
        sigmoid(z[0])
    }

    pub fn sample_masks<R: Rng>(&self, batch: usize, dropout: f64, rng: &mut R) -> Vec<DropoutMask> {
        let keep = 1.0 - dropout;
        let hidden = &self.layers[..self.layers.len() - 1];
        (0..batch)
            .map(|_| {
                hidden
                    .iter()
                    .map(|l| {
                        (0..l.outputs)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Mean squared error over the batch and its gradient, laid out like the
    /// network's own layers.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[f64], masks: Option<&[DropoutMask]>) -> (f64, Vec<DenseLayer>) {
        let b = xs.len() as f64;
        let mut grads: Vec<DenseLayer> = self.layers.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs)).collect();
        let n_hidden = self.layers.len() - 1;
        let mut loss = 0.0;
        let mut zs: Vec<Vec<f64>> = vec![Vec::new(); n_hidden];
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_hidden + 1];
        let mut out = Vec::new();
        for (s, (x, &y)) in xs.iter().zip(ys).enumerate() {
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for l in 0..n_hidden {
                self.layers[l].apply(&acts[l], &mut zs[l]);
                let next: Vec<f64> = match masks {
                    Some(m) => zs[l].iter().zip(&m[s][l]).map(|(z, k)| z.max(0.0) * k).collect(),
                    None => zs[l].iter().map(|z| z.max(0.0)).collect(),
                };
                acts[l + 1] = next;
            }
            self.layers[n_hidden].apply(&acts[n_hidden], &mut out);
            let p = sigmoid(out[0]);
            let err = p - y;
            loss += err * err;

            let mut delta = vec![2.0 * err * p * (1.0 - p) / b];
            for l in (0..=n_hidden).rev() {
                let layer = &self.layers[l];
                let g = &mut grads[l];
                let input = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                let z = &zs[l - 1];
                for (i, p) in prev.iter_mut().enumerate() {
                    let k = masks.map_or(1.0, |m| m[s][l - 1][i]);
                    if z[i] <= 0.0 {
                        *p = 0.0;
                    } else {
                        *p *= k;
                    }
                }
                delta = prev;
            }
        }
        (loss / b, grads)
    }

    /// All weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_parameters(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = it.next().expect("parameter count"));
        }
    }
}

pub fn flatten(layers: &[DenseLayer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn rmse(net: &Mlp, rows: &[Vec<f64>], ys: &[f64]) -> f64 {
    let sse: f64 = rows.iter().zip(ys).map(|(x, y)| (net.forward(x) - y).powi(2)).sum();
    (sse / rows.len() as f64).sqrt()
}

/// Mini-batch Adam on MSE with early stopping. The monitored quantity is
/// validation RMSE when a validation set is given, training RMSE otherwise;
/// the best epoch's weights are kept.
pub fn fit_mlp(
    x: &[EmbeddingVector],
    y: &[f64],
    validation: Option<(&[EmbeddingVector], &[f64])>,
    params: &MlpParams,
) -> Result<ProbeModel> {
    check_targets(x.len(), y, 2)?;
    params.validate()?;
    let (dim, mut rows) = feature_rows(x)?;
    let standardization = params.standardize.then(|| Standardizer::fit(&rows));
    let prep = |rows: &mut Vec<Vec<f64>>| {
        if let Some(s) = &standardization {
            rows.iter_mut().for_each(|r| s.apply(r));
        }
    };
    prep(&mut rows);
    let val = match validation {
        Some((vx, vy)) => {
            check_targets(vx.len(), vy, 1)?;
            let (vd, mut vrows) = feature_rows(vx)?;
            if vd != dim {
                return Err(Error::DimMismatch { expected: dim, got: vd });
            }
            prep(&mut vrows);
            Some((vrows, vy))
        }
        None => None,
    };

    let mut init_rng = rng_for(params.seed, "mlp-init", "");
    let mut train_rng = rng_for(params.seed, "mlp-train", "");
    let mut net = Mlp::init(dim, params.width, params.depth, &mut init_rng);
    let mut flat = net.parameters();
    let mut adam = Adam::new(flat.len(), params.lr);

    let monitor = |net: &Mlp| match &val {
        Some((vrows, vy)) => rmse(net, vrows, vy),
        None => rmse(net, &rows, y),
    };
    let mut best = net.clone();
    let mut best_rmse = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut early_stopped = false;
    let mut epochs_run = 0;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..rows.len()).collect();

    for epoch in 1..=params.max_epochs {
        order.shuffle(&mut train_rng);
        for chunk in order.chunks(params.batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let masks = (params.dropout > 0.0).then(|| net.sample_masks(chunk.len(), params.dropout, &mut train_rng));
            let (loss, grads) = net.loss_and_gradient(&xs, &ys, masks.as_deref());
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            let g = flatten(&grads);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step, loss: f64::NAN });
            }
            adam.step(&mut flat, &g);
            net.set_parameters(&flat);
            step += 1;
        }
        epochs_run = epoch;
        let score = monitor(&net);
        if !score.is_finite() {
            return Err(Error::Divergence { step, loss: score });
        }
        if score < best_rmse {
            best_rmse = score;
            best = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                early_stopped = true;
                break;
            }
        }
    }

    Ok(ProbeModel {
        format_version: super::PROBE_FORMAT_VERSION,
        family: ProbeFamily::Mlp,
        dim,
        standardization,
        params: ProbeParams::Mlp { network: best },
        meta: TrainingMeta {
            seed: params.seed,
            hyperparameters: params.hyperparameters(),
            validation_rmse: val.as_ref().map(|_| best_rmse),
            epochs_run: Some(epochs_run),
            best_epoch: Some(best_epoch),
            early_stopped,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_f64(v).unwrap()
    }

    fn numeric_gradient(net: &Mlp, xs: &[&[f64]], ys: &[f64], masks: Option<&[DropoutMask]>) -> Vec<f64> {
        let base = net.parameters();
        let h = 1e-6;
        let mut probe = net.clone();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                probe.set_parameters(&p);
                let up = probe.loss_and_gradient(xs, ys, masks).0;
                p[i] = base[i] - h;
                probe.set_parameters(&p);
                let down = probe.loss_and_gradient(xs, ys, masks).0;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_for(9, "mlp-test", "grad");
        for (depth, dropout) in [(1, 0.0), (2, 0.0), (3, 0.2)] {
            let mut net = Mlp::init(4, 6, depth, &mut rng);
            // Random biases keep pre-activations off the ReLU kink at zero.
            let params: Vec<f64> = net.parameters().iter().map(|_| rng.random_range(-0.5..0.5)).collect();
            net.set_parameters(&params);
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let xs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let masks = (dropout > 0.0).then(|| net.sample_masks(5, dropout, &mut rng));
            let (_, grads) = net.loss_and_gradient(&xs, &ys, masks.as_deref());
            let analytic = flatten(&grads);
            let numeric = numeric_gradient(&net, &xs, &ys, masks.as_deref());
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
                assert!(rel < 1e-4, "depth {depth}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn learns_a_constant() {
        let mut rng = rng_for(10, "mlp-test", "const");
        let xs: Vec<_> = (0..40)
            .map(|_| ev(&[rng.random::<f64>() + 0.1, rng.random(), rng.random()]))
            .collect();
        let ys = vec![0.4; 40];
        let params = MlpParams {
            width: 8,
            lr: 1e-2,
            batch: 8,
            max_epochs: 300,
            ..MlpParams::default()
        };
        let model = fit_mlp(&xs, &ys, None, &params).unwrap();
        for x in &xs {
            assert!((model.predict(x).unwrap() - 0.4).abs() < 0.02);
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = rng_for(11, "mlp-test", "det");
        let xs: Vec<_> = (0..30).map(|_| ev(&[rng.random::<f64>() + 0.1, rng.random()])).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.to_f64()[0].min(1.0)).collect();
        let params = MlpParams {
            width: 4,
            dropout: 0.1,
            batch: 8,
            max_epochs: 20,
            seed: 5,
            ..MlpParams::default()
        };
        let a = fit_mlp(&xs, &ys, Some((&xs[..10], &ys[..10])), &params).unwrap();
        let b = fit_mlp(&xs, &ys, Some((&xs[..10], &ys[..10])), &params).unwrap();
        assert_eq!(a, b);
        assert!(a.meta.validation_rmse.is_some());
        assert!(a.meta.best_epoch.unwrap() <= a.meta.epochs_run.unwrap());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        let xs = vec![ev(&[1.0]), ev(&[2.0])];
        let bad = MlpParams {
            dropout: 1.0,
            ..MlpParams::default()
        };
        assert!(fit_mlp(&xs, &[0.0, 1.0], None, &bad).is_err());
    }
}

//! A small fully-connected per-point classifier.
//!
//! Each point's feature row passes independently through ReLU hidden layers
//! to class logits and a numerically stable softmax. Parameters are f64 and
//! training runs on explicit, hand-derived gradients; there is no autodiff
//! and no SIMD, which keeps results bit-reproducible across machines.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cloud::{FeatureMatrix, SoftPrediction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// `out = W x + b` appended into `out`.
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Multi-layer perceptron mapping feature rows to class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    classes: usize,
    layers: Vec<DenseLayer>,
}

/// Per-layer weight and bias gradients (or momentum buffers), laid out
/// exactly like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, v) in w.iter_mut().zip(ow) {
                *a += v;
            }
            for (a, v) in b.iter_mut().zip(ob) {
                *a += v;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            for v in w.iter_mut() {
                *v *= factor;
            }
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Flattened view in parameter order, for gradient checking.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Hidden activations retained by [`Mlp::forward_trace`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `hidden[l]` holds the ReLU outputs of hidden layer `l`, row per point.
    hidden: Vec<Vec<f64>>,
}

impl Mlp {
    /// Seeded Gaussian init: weights drawn N(0, 1/fan_in), biases zero. The
    /// draw order is fixed (layer by layer, row-major), so a seed pins every
    /// parameter.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Self {
        assert!(input_dim >= 1 && classes >= 1, "degenerate model shape");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_dim = input_dim;
        for &out_dim in hidden.iter().chain(core::iter::once(&classes)) {
            assert!(out_dim >= 1, "zero-width layer");
            let std = 1.0 / libm::sqrt(in_dim as f64);
            let mut layer = DenseLayer::zeros(in_dim, out_dim);
            for w in layer.weights.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = z * std;
            }
            layers.push(layer);
            in_dim = out_dim;
        }
        Mlp {
            input_dim,
            classes,
            layers,
        }
    }

    /// All-zero parameters; forward output is exactly uniform.
    pub fn zeros(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        assert!(input_dim >= 1 && classes >= 1, "degenerate model shape");
        let mut layers = Vec::new();
        let mut in_dim = input_dim;
        for &out_dim in hidden.iter().chain(core::iter::once(&classes)) {
            layers.push(DenseLayer::zeros(in_dim, out_dim));
            in_dim = out_dim;
        }
        Mlp {
            input_dim,
            classes,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights before biases. The same
    /// order is used by [`Mlp::set_params_flat`], gradients and checkpoints.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut offset = 0;
        for l in &mut self.layers {
            let wlen = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + wlen]);
            offset += wlen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + blen]);
            offset += blen;
        }
    }

    /// Moves this model toward `student` as an exponential moving average:
    /// `p <- alpha * p + (1 - alpha) * student_p`.
    pub fn ema_from(&mut self, student: &Mlp, alpha: f64) {
        assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
        for (t, s) in self.layers.iter_mut().zip(&student.layers) {
            assert_eq!(t.weights.len(), s.weights.len(), "model shape mismatch");
            for (tw, sw) in t.weights.iter_mut().zip(&s.weights) {
                *tw = alpha * *tw + (1.0 - alpha) * sw;
            }
            for (tb, sb) in t.bias.iter_mut().zip(&s.bias) {
                *tb = alpha * *tb + (1.0 - alpha) * sb;
            }
        }
    }

    /// Momentum SGD update from accumulated gradients:
    /// `v <- momentum * v + g`, `p <- p - lr * v`.
    pub fn apply_sgd(
        &mut self,
        grads: &Gradients,
        velocity: &mut Gradients,
        learning_rate: f64,
        momentum: f64,
    ) {
        for (layer, ((gw, gb), (vw, vb))) in self
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(velocity.layers.iter_mut()))
        {
            for ((w, g), v) in layer.weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
                *v = momentum * *v + g;
                *w -= learning_rate * *v;
            }
            for ((b, g), v) in layer.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                *v = momentum * *v + g;
                *b -= learning_rate * *v;
            }
        }
    }

    fn check_shape(&self, feats: &FeatureMatrix) -> Result<()> {
        if feats.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                got: feats.cols(),
                expected: self.input_dim,
            });
        }
        Ok(())
    }

    /// Class probabilities for every feature row.
    pub fn forward(&self, feats: &FeatureMatrix) -> Result<SoftPrediction> {
        Ok(self.forward_trace(feats)?.0)
    }

    /// Forward pass that also keeps hidden activations for [`Mlp::backward`].
    pub fn forward_trace(&self, feats: &FeatureMatrix) -> Result<(SoftPrediction, ForwardTrace)> {
        self.check_shape(feats)?;
        let n = feats.rows();
        let hidden_layers = self.layers.len() - 1;
        let mut hidden: Vec<Vec<f64>> = self.layers[..hidden_layers]
            .iter()
            .map(|l| Vec::with_capacity(n * l.out_dim))
            .collect();
        let mut probs = Vec::with_capacity(n * self.classes);
        let mut row: Vec<f64> = Vec::new();
        let mut scratch: Vec<f64> = Vec::new();
        for i in 0..n {
            // Hidden stack with ReLU; `row` carries the current activation.
            row.clear();
            row.extend_from_slice(feats.row(i));
            for (l, layer) in self.layers[..hidden_layers].iter().enumerate() {
                scratch.clear();
                layer.affine(&row, &mut scratch);
                for v in scratch.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                hidden[l].extend_from_slice(&scratch);
                core::mem::swap(&mut row, &mut scratch);
            }
            // Logits and stable softmax.
            scratch.clear();
            self.layers[hidden_layers].affine(&row, &mut scratch);
            let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let base = probs.len();
            for &logit in scratch.iter() {
                let e = libm::exp(logit - max);
                probs.push(e);
                sum += e;
            }
            for p in &mut probs[base..] {
                *p /= sum;
            }
        }
        Ok((
            SoftPrediction::from_rows(self.classes, probs),
            ForwardTrace { hidden },
        ))
    }

    /// Backpropagates per-point logit gradients (`n x classes`, row-major)
    /// into parameter gradients, summing over points.
    pub fn backward(
        &self,
        feats: &FeatureMatrix,
        trace: &ForwardTrace,
        dlogits: &[f64],
    ) -> Gradients {
        let n = feats.rows();
        assert_eq!(dlogits.len(), n * self.classes, "logit gradient shape mismatch");
        let mut grads = Gradients::zeros_like(self);
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (gw, gb) = &mut grads.layers[l];
            let mut next_delta = if l > 0 {
                vec![0.0; n * layer.in_dim]
            } else {
                Vec::new()
            };
            for i in 0..n {
                let d = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
                let act: &[f64] = if l == 0 {
                    feats.row(i)
                } else {
                    &trace.hidden[l - 1][i * layer.in_dim..(i + 1) * layer.in_dim]
                };
                for (o, &dv) in d.iter().enumerate() {
                    gb[o] += dv;
                    let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, &a) in grow.iter_mut().zip(act) {
                        *g += dv * a;
                    }
                }
                if l > 0 {
                    // Push through W^T and the ReLU gate (activation > 0).
                    let nd = &mut next_delta[i * layer.in_dim..(i + 1) * layer.in_dim];
                    for (o, &dv) in d.iter().enumerate() {
                        let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (slot, &w) in nd.iter_mut().zip(wrow) {
                            *slot += dv * w;
                        }
                    }
                    for (slot, &a) in nd.iter_mut().zip(act) {
                        if a <= 0.0 {
                            *slot = 0.0;
                        }
                    }
                }
            }
            delta = next_delta;
        }
        grads
    }
}
